//! Subcommand implementations.

use std::path::{Path, PathBuf};

use kprefine::io::{
    graph_flows, graph_matches, load_flows, load_graph, load_refined_graph, read_hypotheses, read_keypoints,
    read_scene, refine_queries, refined_rows, track_rows, write_flows, write_matches, write_mma_curve,
    write_query_results, write_refined, write_report, write_scene, write_tracks, PipelineConfig, Report,
    REFINED_HEADER,
};
use kprefine::pipeline::{
    align_graph, evaluate_positions, partition_stage, refine_stage, synthesize, with_threads, RefineOutput,
};
use kprefine::MatchGraph;

use crate::Flags;

pub const FLOWS_FILE: &str = "flows.csv";
pub const MATCHES_FILE: &str = "matches.csv";
pub const TRACKS_FILE: &str = "tracks.csv";
pub const REFINED_FILE: &str = "refined.csv";
pub const QUERY_FILE: &str = "refined_query.csv";
pub const REPORT_FILE: &str = "report.json";
pub const MMA_FILE: &str = "mma_curve.csv";

#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    MissingInput(String),
    #[error(transparent)]
    Data(#[from] kprefine::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::MissingInput(_) | Failure::Data(_) => 2,
        }
    }
}

type CmdResult<T = ()> = Result<T, Failure>;

/// Config file (or defaults) with every given flag applied on top.
fn settings(flags: &Flags) -> CmdResult<PipelineConfig> {
    let mut c = match &flags.config {
        Some(path) => PipelineConfig::from_file(path).map_err(|e| Failure::Usage(e.to_string()))?,
        None => PipelineConfig::default(),
    };
    let paths = [
        (&flags.keypoints, &mut c.keypoints),
        (&flags.matches, &mut c.matches),
        (&flags.images, &mut c.images),
        (&flags.flows, &mut c.flows),
        (&flags.out, &mut c.out),
    ];
    for (flag, slot) in paths {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    if let Some(m) = flags.mode {
        c.solver.mode = m;
    }
    if let Some(k) = flags.bound {
        c.solver.bound = k;
    }
    if let Some(s) = flags.cauchy_scale {
        c.solver.cauchy_scale = s;
    }
    if let Some(s) = flags.tukey_scale {
        c.solver.tukey_scale = s;
    }
    if let Some(n) = flags.max_iterations {
        c.solver.max_iterations = n;
    }
    if let Some(s) = flags.grid_spacing {
        c.align.grid_spacing = s;
        c.synth.flow_spacing = s;
    }
    if let Some(z) = flags.fine_zoom {
        c.align.fine_zoom = z;
    }
    if let Some(t) = flags.threads {
        c.threads = t;
    }
    if let Some(s) = flags.seed {
        c.seed = s;
    }
    if let Some(t) = &flags.thresholds {
        c.thresholds.clone_from(t);
    }
    c.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(c)
}

/// An input path that must be given and exist.
fn input<'a>(path: &'a Option<PathBuf>, command: &str, what: &str, flag: &str) -> CmdResult<&'a Path> {
    let path = path
        .as_deref()
        .ok_or_else(|| Failure::MissingInput(format!("{command} needs {what} (--{flag})")))?;
    if !path.exists() {
        return Err(Failure::MissingInput(format!(
            "{command}: {what} {} does not exist",
            path.display()
        )));
    }
    Ok(path)
}

fn out_dir(config: &PipelineConfig, command: &str) -> CmdResult<PathBuf> {
    let dir = config
        .out
        .clone()
        .ok_or_else(|| Failure::Usage(format!("{command} needs an output directory (--out)")))?;
    std::fs::create_dir_all(&dir).map_err(|e| {
        Failure::Data(kprefine::Error::Io {
            path: dir.clone(),
            source: e,
        })
    })?;
    Ok(dir)
}

fn threaded<T: Send>(config: &PipelineConfig, f: impl FnOnce() -> kprefine::Result<T> + Send) -> CmdResult<T> {
    Ok(with_threads(config.threads, f)??)
}

fn load(config: &PipelineConfig, command: &str, with_images: bool) -> CmdResult<MatchGraph> {
    let keypoints = input(&config.keypoints, command, "a keypoints file", "keypoints")?;
    let matches = input(&config.matches, command, "a matches file", "matches")?;
    let images = if with_images {
        Some(input(&config.images, command, "an images directory", "images")?)
    } else {
        None
    };
    Ok(load_graph(keypoints, matches, images, config.filter.as_ref())?)
}

/// Writes the refinement artifacts; with a scene, also the
/// evaluation and accuracy curve.
fn write_refinement(
    config: &PipelineConfig,
    dir: &Path,
    graph: &MatchGraph,
    output: RefineOutput,
    scene_dir: Option<&Path>,
) -> CmdResult {
    write_refined(&dir.join(REFINED_FILE), &refined_rows(graph, &output.refinement))?;
    write_tracks(&dir.join(TRACKS_FILE), &track_rows(&output.refinement.partition))?;
    let mut report = Report {
        refinement: Some(output.report),
        evaluation: None,
    };
    if let Some(scene_dir) = scene_dir {
        let (scene, _) = read_scene(scene_dir, false)?;
        let evaluation = evaluate_positions(&scene, graph, &output.refinement.positions, &config.thresholds)?;
        write_mma_curve(&dir.join(MMA_FILE), &evaluation.mma, evaluation.mma_initial.as_ref())?;
        report.evaluation = Some(evaluation);
    }
    write_report(&dir.join(REPORT_FILE), &report)?;
    Ok(())
}

fn scene_arg<'a>(flags: &'a Flags, command: &str) -> CmdResult<Option<&'a Path>> {
    match &flags.scene {
        None => Ok(None),
        s => input(s, command, "a scene directory", "scene").map(Some),
    }
}

pub fn align(flags: &Flags) -> CmdResult {
    let config = settings(flags)?;
    let mut graph = load(&config, "align", true)?;
    let dir = out_dir(&config, "align")?;
    threaded(&config, || align_graph(&mut graph, &config.align))?;
    write_flows(&dir.join(FLOWS_FILE), &graph_flows(&graph))?;
    Ok(())
}

pub fn partition(flags: &Flags) -> CmdResult {
    let config = settings(flags)?;
    let graph = load(&config, "partition", false)?;
    let dir = out_dir(&config, "partition")?;
    let partition = threaded(&config, || partition_stage(&graph, &config.solver))?;
    write_tracks(&dir.join(TRACKS_FILE), &track_rows(&partition))?;
    Ok(())
}

pub fn refine(flags: &Flags) -> CmdResult {
    let config = settings(flags)?;
    let scene_dir = scene_arg(flags, "refine")?;
    let mut graph = load(&config, "refine", false)?;
    let flows = input(&config.flows, "refine", "a flows file", "flows")?;
    load_flows(flows, &mut graph)?;
    let dir = out_dir(&config, "refine")?;
    let output = threaded(&config, || refine_stage(&graph, &config.solver))?;
    write_refinement(&config, &dir, &graph, output, scene_dir)
}

pub fn refine_query(flags: &Flags) -> CmdResult {
    let config = settings(flags)?;
    let queries = read_keypoints(input(
        &config.keypoints,
        "refine-query",
        "a query keypoints file",
        "keypoints",
    )?)?;
    let hypotheses = read_hypotheses(input(&config.flows, "refine-query", "a hypotheses file", "flows")?)?;
    let dir = out_dir(&config, "refine-query")?;
    write_query_results(&dir.join(QUERY_FILE), &refine_queries(&queries, &hypotheses)?)?;
    Ok(())
}

pub fn synth(flags: &Flags) -> CmdResult {
    let config = settings(flags)?;
    let dir = out_dir(&config, "synth")?;
    let out = threaded(&config, || synthesize(&config.synth, config.seed))?;
    write_scene(&dir, &out.scene, &out.perturbed)?;
    write_matches(&dir.join(MATCHES_FILE), &graph_matches(&out.graph))?;
    write_flows(&dir.join(FLOWS_FILE), &graph_flows(&out.graph))?;
    Ok(())
}

fn is_refined_file(path: &Path) -> CmdResult<bool> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Failure::Data(kprefine::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })?;
    let header = text.lines().next().unwrap_or_default().trim();
    Ok(header == REFINED_HEADER.join(","))
}

pub fn eval(flags: &Flags) -> CmdResult {
    let config = settings(flags)?;
    let scene_dir = input(&flags.scene, "eval", "a scene directory", "scene")?;
    let keypoints = input(&config.keypoints, "eval", "a keypoints or refined file", "keypoints")?;
    let matches = input(&config.matches, "eval", "a matches file", "matches")?;
    let (scene, _) = read_scene(scene_dir, false)?;
    let (graph, positions) = if is_refined_file(keypoints)? {
        load_refined_graph(keypoints, matches)?
    } else {
        let graph = load_graph(keypoints, matches, None, config.filter.as_ref())?;
        let positions = graph.nodes().iter().map(|k| k.initial_position).collect();
        (graph, positions)
    };
    let dir = out_dir(&config, "eval")?;
    let mut evaluation = threaded(&config, || {
        evaluate_positions(&scene, &graph, &positions, &config.thresholds)
    })?;
    if positions
        .iter()
        .zip(graph.nodes())
        .all(|(p, k)| *p == k.initial_position)
    {
        // Unrefined input: the initial curve would only repeat the main one.
        evaluation.rms_initial = None;
        evaluation.mma_initial = None;
    }
    write_mma_curve(&dir.join(MMA_FILE), &evaluation.mma, evaluation.mma_initial.as_ref())?;
    write_report(
        &dir.join(REPORT_FILE),
        &Report {
            refinement: None,
            evaluation: Some(evaluation),
        },
    )?;
    Ok(())
}

pub fn pipeline(flags: &Flags) -> CmdResult {
    let config = settings(flags)?;
    let scene_dir = scene_arg(flags, "pipeline")?;
    let given_flows = match &config.flows {
        Some(_) => Some(input(&config.flows, "pipeline", "a flows file", "flows")?),
        None => None,
    };
    let mut graph = load(&config, "pipeline", given_flows.is_none())?;
    if let Some(flows) = given_flows {
        load_flows(flows, &mut graph)?;
    }
    let dir = out_dir(&config, "pipeline")?;
    let output = threaded(&config, || {
        if given_flows.is_none() {
            align_graph(&mut graph, &config.align)?;
        }
        refine_stage(&graph, &config.solver)
    })?;
    if given_flows.is_none() {
        write_flows(&dir.join(FLOWS_FILE), &graph_flows(&graph))?;
    }
    write_refinement(&config, &dir, &graph, output, scene_dir)
}
