use std::collections::HashMap;

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::align::{eval_flow, FlowField};
use crate::error::{Error, Result};
use crate::graph::{EdgeId, MatchGraph, NodeId};
use crate::optimize::{LossKind, RobustLoss};
use crate::partition::{classify_edges, TrackAssignment, TrackId};
use crate::Point2;

/// Which edges enter the objective and how they are robustified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Tracks, recursive graph cut, intra (soft) and inter (strong) edges.
    Full,
    /// Every edge with the soft loss over connected components of the graph.
    #[serde(alias = "no_partition")]
    NoPartition,
    /// Intra-track edges only; each track is solved on its own.
    #[serde(alias = "intra_only")]
    IntraOnly,
    /// Intra and inter edges over whole meta-graph components, no cuts.
    #[serde(alias = "intra_inter")]
    IntraInter,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('_', "-").as_str() {
            "full" => Ok(Mode::Full),
            "no-partition" => Ok(Mode::NoPartition),
            "intra-only" => Ok(Mode::IntraOnly),
            "intra-inter" => Ok(Mode::IntraInter),
            other => Err(Error::InvalidInput(format!(
                "unknown mode `{other}` (expected full, no-partition, intra-only or intra-inter)"
            ))),
        }
    }
}

/// How flow fields are evaluated away from the keypoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowModel {
    /// Biquadratic interpolation of the 3x3 grid.
    Grid,
    /// The central displacement everywhere.
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// L1 bound on the displacement of every keypoint, in pixels.
    #[serde(rename = "K")]
    pub bound: f64,
    pub cauchy_scale: f64,
    pub tukey_scale: f64,
    pub mode: Mode,
    pub max_iterations: usize,
    pub flow_model: FlowModel,
    /// Weight multiplier for edges whose flow was flagged low-confidence.
    pub low_confidence_weight: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            bound: 16.0,
            cauchy_scale: 4.0,
            tukey_scale: 1.0,
            mode: Mode::Full,
            max_iterations: 200,
            flow_model: FlowModel::Grid,
            low_confidence_weight: 0.1,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.bound > 0.0 && self.bound.is_finite()) {
            return Err(Error::InvalidInput(format!("K = {} must be positive", self.bound)));
        }
        RobustLoss::new(LossKind::Cauchy, self.cauchy_scale)?;
        RobustLoss::new(LossKind::Tukey, self.tukey_scale)?;
        if self.max_iterations == 0 {
            return Err(Error::InvalidInput("max_iterations must be at least 1".into()));
        }
        if !(self.low_confidence_weight > 0.0 && self.low_confidence_weight <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "low-confidence weight {} outside (0, 1]",
                self.low_confidence_weight
            )));
        }
        Ok(())
    }
}

/// One directed edge's term `w * rho(|x_v - x_u - T(x_u)|^2)`, with nodes
/// given as indices into [`RefinementProblem::nodes`].
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub edge: EdgeId,
    pub from: usize,
    pub to: usize,
    pub weight: f64,
    pub loss: RobustLoss,
    pub flow: FlowField,
}

/// Residual of a block and its jacobians with respect to both offsets.
#[derive(Debug, Clone, Copy)]
pub struct BlockEval {
    pub residual: Point2,
    pub jac_from: Matrix2<f64>,
    pub jac_to: Matrix2<f64>,
}

impl ResidualBlock {
    #[inline]
    pub fn evaluate(&self, x_from: Point2, x_to: Point2, model: FlowModel) -> BlockEval {
        let (t, dt) = match model {
            FlowModel::Grid => eval_flow(&self.flow, x_from),
            FlowModel::Constant => (self.flow.center(), Matrix2::zeros()),
        };
        BlockEval {
            residual: x_to - x_from - t,
            jac_from: -Matrix2::identity() - dt,
            jac_to: Matrix2::identity(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementProblem {
    /// Graph nodes of the component, sorted.
    pub nodes: Vec<NodeId>,
    /// Per local node: held at zero offset.
    pub fixed: Vec<bool>,
    pub blocks: Vec<ResidualBlock>,
    pub bound: f64,
    pub mode: Mode,
    pub flow_model: FlowModel,
}

impl RefinementProblem {
    pub fn num_free(&self) -> usize {
        self.fixed.iter().filter(|&&f| !f).count()
    }

    pub fn local_index(&self, node: NodeId) -> Option<usize> {
        self.nodes.binary_search(&node).ok()
    }
}

/// Edge-to-block conversion shared by every mode.
pub(crate) fn assemble(
    graph: &MatchGraph,
    mut nodes: Vec<NodeId>,
    soft_edges: &[EdgeId],
    strong_edges: &[EdgeId],
    fixed_nodes: &[NodeId],
    options: &SolverOptions,
) -> Result<RefinementProblem> {
    nodes.sort_unstable();
    let local: HashMap<NodeId, usize> = nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    let mut fixed = vec![false; nodes.len()];
    for n in fixed_nodes {
        fixed[local[n]] = true;
    }
    let soft = RobustLoss::new(LossKind::Cauchy, options.cauchy_scale)?;
    let strong = RobustLoss::new(LossKind::Tukey, options.tukey_scale)?;

    let mut blocks = Vec::with_capacity(soft_edges.len() + strong_edges.len());
    for (edges, loss) in [(soft_edges, soft), (strong_edges, strong)] {
        for &e in edges {
            let edge = graph.edge(e);
            let flow = edge.flow.clone().ok_or(Error::MissingFlow {
                from: edge.from_node,
                to: edge.to_node,
            })?;
            let mut weight = edge.weight();
            if flow.low_confidence {
                weight *= options.low_confidence_weight;
            }
            blocks.push(ResidualBlock {
                edge: e,
                from: local[&edge.from_node],
                to: local[&edge.to_node],
                weight,
                loss,
                flow,
            });
        }
    }
    blocks.sort_by_key(|b| b.edge);
    Ok(RefinementProblem {
        nodes,
        fixed,
        blocks,
        bound: options.bound,
        mode: options.mode,
        flow_model: options.flow_model,
    })
}

/// Problem for a set of tracks: intra edges with the soft loss, inter edges
/// with the strong loss (omitted in intra-only mode), track roots fixed.
pub fn build_problem(
    graph: &MatchGraph,
    assignment: &TrackAssignment,
    tracks: &[TrackId],
    options: &SolverOptions,
) -> Result<RefinementProblem> {
    options.validate()?;
    if options.mode == Mode::NoPartition {
        return Err(Error::InvalidInput(
            "no-partition problems are built from graph components, not track sets".into(),
        ));
    }
    let classes = classify_edges(graph, assignment, tracks);
    let inter: &[EdgeId] = if options.mode == Mode::IntraOnly {
        &[]
    } else {
        &classes.inter
    };
    let nodes: Vec<NodeId> = tracks
        .iter()
        .flat_map(|&t| assignment.members(t).iter().copied())
        .collect();
    let roots: Vec<NodeId> = tracks
        .iter()
        .map(|&t| {
            assignment
                .root_of(t)
                .ok_or_else(|| Error::InvalidInput(format!("track {t} has no root; run select_roots first")))
        })
        .collect::<Result<_>>()?;
    assemble(graph, nodes, &classes.intra, inter, &roots, options)
}

/// Problem over a connected component of the whole graph: every edge with
/// the soft loss, one anchor fixed.
pub fn build_unpartitioned_problem(
    graph: &MatchGraph,
    nodes: Vec<NodeId>,
    anchor: NodeId,
    options: &SolverOptions,
) -> Result<RefinementProblem> {
    options.validate()?;
    let mut edges: Vec<EdgeId> = nodes.iter().flat_map(|&n| graph.outgoing(n).iter().copied()).collect();
    edges.sort_unstable();
    let mut opts = options.clone();
    opts.mode = Mode::NoPartition;
    assemble(graph, nodes, &edges, &[], &[anchor], &opts)
}
