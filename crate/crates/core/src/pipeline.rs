//! Stage orchestration from alignment to evaluation.
//!
//! Every stage is deterministic and independent of the worker count, so
//! artifacts written from these results are byte-identical across runs.

use crate::align::{estimate_graph_flows, AlignConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate_mma, scene_match_errors};
use crate::graph::MatchGraph;
use crate::io::{EvaluationReport, RefinementReport, SynthConfig};
use crate::optimize::{partition_graph, refine_partition, GraphPartition, Refinement, SolverOptions};
use crate::synth::{
    attach_oracle_flows, generate_scene, perturb_keypoints, reprojection_rms, scene_graph, scene_matches,
    SyntheticScene,
};
use crate::Point2;

/// Runs `f` on a dedicated pool of `threads` workers (0 uses every core).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot start {threads} worker threads: {e}")))?;
    Ok(pool.install(f))
}

/// Replaces the flow of every edge with the aligner's estimate.
pub fn align_graph(graph: &mut MatchGraph, config: &AlignConfig) -> Result<()> {
    log::info!("aligning {} directed edges", graph.num_edges());
    let flows = estimate_graph_flows(graph, config)?;
    let low = flows.iter().filter(|f| f.low_confidence).count();
    log::info!("{low} flows flagged low-confidence");
    for (e, f) in flows.into_iter().enumerate() {
        graph.set_flow(e, f);
    }
    Ok(())
}

pub fn partition_stage(graph: &MatchGraph, options: &SolverOptions) -> Result<GraphPartition> {
    options.validate()?;
    partition_graph(graph, options.mode)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutput {
    pub refinement: Refinement,
    pub report: RefinementReport,
}

pub fn refine_stage(graph: &MatchGraph, options: &SolverOptions) -> Result<RefineOutput> {
    let partition = partition_stage(graph, options)?;
    log::info!(
        "{} tracks in {} components ({:?} mode)",
        partition.assignment.num_tracks(),
        partition.components.len(),
        options.mode
    );
    let refinement = refine_partition(graph, partition, options)?;
    let report = RefinementReport::new(graph, &refinement, options);
    log::info!(
        "objective {} -> {}, {} of {} components converged",
        report.initial_objective,
        report.final_objective,
        report.converged_components,
        report.num_components
    );
    Ok(RefineOutput { refinement, report })
}

/// Aligns (unless every edge already has a flow) and refines.
pub fn run_pipeline(graph: &mut MatchGraph, align: &AlignConfig, options: &SolverOptions) -> Result<RefineOutput> {
    if graph.edges().iter().any(|e| e.flow.is_none()) {
        align_graph(graph, align)?;
    }
    refine_stage(graph, options)
}

/// Reprojection RMS and accuracy curves of `positions` and of the initial
/// positions, for a graph whose image ids are scene views and whose keypoint
/// ids index the scene's canonical points.
pub fn evaluate_positions(
    scene: &SyntheticScene,
    graph: &MatchGraph,
    positions: &[Point2],
    thresholds: &[f64],
) -> Result<EvaluationReport> {
    let views = scene.num_views();
    let points = scene.canonical_points.len();
    for k in graph.nodes() {
        if k.image_id as usize >= views || k.kp_id as usize >= points {
            return Err(Error::InvalidInput(format!(
                "keypoint {} of image {} is not part of the scene ({views} views, {points} points)",
                k.kp_id, k.image_id
            )));
        }
    }
    let initial: Vec<Point2> = graph.nodes().iter().map(|k| k.initial_position).collect();
    Ok(EvaluationReport {
        rms: reprojection_rms(scene, graph, positions),
        rms_initial: Some(reprojection_rms(scene, graph, &initial)),
        mma: evaluate_mma(&scene_match_errors(scene, graph, positions), thresholds)?,
        mma_initial: Some(evaluate_mma(&scene_match_errors(scene, graph, &initial), thresholds)?),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub scene: SyntheticScene,
    /// Perturbed keypoints, `[view][keypoint]`.
    pub perturbed: Vec<Vec<Point2>>,
    /// Graph over the perturbed keypoints with noisy oracle flows attached.
    pub graph: MatchGraph,
}

/// Generates a scene, perturbs its keypoints, matches every keypoint across
/// all view pairs and attaches noisy oracle flows. Each random stage draws
/// from its own seed derived from `seed`.
pub fn synthesize(config: &SynthConfig, seed: u64) -> Result<SynthOutput> {
    let mut scene_config = config.scene.clone();
    scene_config.seed = seed;
    let scene = generate_scene(&scene_config)?;
    let perturbed = perturb_keypoints(&scene, config.perturbation, seed.wrapping_add(1))?;
    let matches = scene_matches(&scene, seed.wrapping_add(2));
    let mut graph = scene_graph(&scene, &perturbed, &matches)?;
    attach_oracle_flows(
        &scene,
        &mut graph,
        config.flow_spacing,
        config.flow_noise,
        seed.wrapping_add(3),
    )?;
    Ok(SynthOutput {
        scene,
        perturbed,
        graph,
    })
}
