//! `report.json` and `mma_curve.csv`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::MmaCurve;
use crate::graph::MatchGraph;
use crate::io::table::{format_float, write_table};
use crate::optimize::{Mode, Refinement, SolverOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentStats {
    pub component_id: usize,
    pub num_nodes: usize,
    pub num_free: usize,
    pub num_blocks: usize,
    pub iterations: usize,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub max_step: f64,
    /// Largest distance any node of the component moved.
    pub max_moved: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementReport {
    pub mode: Mode,
    pub options: SolverOptions,
    pub num_images: usize,
    pub num_nodes: usize,
    /// Directed edges.
    pub num_edges: usize,
    pub num_tracks: usize,
    pub num_components: usize,
    /// Sums over components.
    pub initial_objective: f64,
    pub final_objective: f64,
    /// Largest iteration count of any component.
    pub iterations: usize,
    pub converged_components: usize,
    pub max_moved: f64,
    pub components: Vec<ComponentStats>,
}

impl RefinementReport {
    pub fn new(graph: &MatchGraph, refinement: &Refinement, options: &SolverOptions) -> Self {
        let components: Vec<ComponentStats> = refinement
            .components
            .iter()
            .enumerate()
            .map(|(c, r)| ComponentStats {
                component_id: c,
                num_nodes: r.num_nodes,
                num_free: r.num_free,
                num_blocks: r.num_blocks,
                iterations: r.report.iterations,
                initial_objective: r.report.initial_objective,
                final_objective: r.report.final_objective,
                max_step: r.report.max_step,
                max_moved: r.report.moved.iter().copied().fold(0.0, f64::max),
                converged: r.report.converged,
            })
            .collect();
        Self {
            mode: refinement.partition.mode,
            options: options.clone(),
            num_images: graph.num_images(),
            num_nodes: graph.num_nodes(),
            num_edges: graph.num_edges(),
            num_tracks: refinement.partition.assignment.num_tracks(),
            num_components: components.len(),
            initial_objective: components.iter().map(|c| c.initial_objective).sum(),
            final_objective: components.iter().map(|c| c.final_objective).sum(),
            iterations: components.iter().map(|c| c.iterations).max().unwrap_or(0),
            converged_components: components.iter().filter(|c| c.converged).count(),
            max_moved: components.iter().map(|c| c.max_moved).fold(0.0, f64::max),
            components,
        }
    }
}

/// Accuracy of keypoint positions against ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// RMS reprojection error of the evaluated positions.
    pub rms: f64,
    /// RMS reprojection error of the initial positions, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rms_initial: Option<f64>,
    pub mma: MmaCurve,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mma_initial: Option<MmaCurve>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refinement: Option<RefinementReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluation: Option<EvaluationReport>,
}

pub fn write_report(path: &Path, report: &Report) -> Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_report(path: &Path) -> Result<Report> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// `threshold,accuracy`, plus `accuracy_initial` when an initial curve is given.
pub fn write_mma_curve(path: &Path, curve: &MmaCurve, initial: Option<&MmaCurve>) -> Result<()> {
    let mut header = vec!["threshold", "accuracy"];
    if initial.is_some() {
        header.push("accuracy_initial");
    }
    write_table(
        path,
        &header,
        curve.thresholds.iter().enumerate().map(|(i, &t)| {
            let mut row = vec![format_float(t), format_float(curve.accuracy[i])];
            if let Some(c) = initial {
                row.push(format_float(c.accuracy[i]));
            }
            row
        }),
    )
}
