//! Robust bounded refinement of keypoint offsets over graph components.

mod loss;
mod problem;
mod query;
mod roots;
mod solver;

use rayon::prelude::*;

use crate::error::Result;
use crate::graph::{MatchGraph, NodeId};
use crate::partition::{build_meta_graph, recursive_graph_cut, separate_tracks, TrackAssignment, TrackId};
use crate::Point2;

pub use loss::{robust_loss, LossKind, RobustLoss};
pub use problem::{
    build_problem, build_unpartitioned_problem, BlockEval, FlowModel, Mode, RefinementProblem, ResidualBlock,
    SolverOptions,
};
pub use query::{refine_query, QueryHypothesis};
pub use roots::{component_anchor, select_roots};
pub use solver::{objective_value, project_l1, solve_component, SolveReport};

/// One independently optimized group of nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionComponent {
    /// Sorted track ids touched by the component.
    pub tracks: Vec<TrackId>,
    /// Sorted node ids.
    pub nodes: Vec<NodeId>,
    /// Sorted node ids held fixed.
    pub fixed: Vec<NodeId>,
}

/// Tracks with roots plus the mode-dependent grouping into components.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphPartition {
    pub mode: Mode,
    pub assignment: TrackAssignment,
    pub components: Vec<PartitionComponent>,
}

impl GraphPartition {
    /// Component index of every node.
    pub fn component_of(&self) -> Vec<usize> {
        let mut out = vec![usize::MAX; self.assignment.num_nodes()];
        for (c, comp) in self.components.iter().enumerate() {
            comp.nodes.iter().for_each(|&n| out[n] = c);
        }
        out
    }

    /// Per node: held fixed during refinement.
    pub fn fixed_mask(&self) -> Vec<bool> {
        let mut out = vec![false; self.assignment.num_nodes()];
        for comp in &self.components {
            comp.fixed.iter().for_each(|&n| out[n] = true);
        }
        out
    }
}

/// Connected components of the match graph, each sorted, ordered by first node.
pub fn graph_components(graph: &MatchGraph) -> Vec<Vec<NodeId>> {
    let mut seen = vec![false; graph.num_nodes()];
    let mut out = Vec::new();
    for start in 0..graph.num_nodes() {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut members = vec![start];
        let mut head = 0;
        while head < members.len() {
            let u = members[head];
            head += 1;
            for &e in graph.outgoing(u) {
                let v = graph.edge(e).to_node;
                if !seen[v] {
                    seen[v] = true;
                    members.push(v);
                }
            }
        }
        members.sort_unstable();
        out.push(members);
    }
    out
}

fn track_component(assignment: &TrackAssignment, tracks: Vec<TrackId>) -> PartitionComponent {
    let mut nodes: Vec<NodeId> = tracks
        .iter()
        .flat_map(|&t| assignment.members(t).iter().copied())
        .collect();
    nodes.sort_unstable();
    let mut fixed: Vec<NodeId> = tracks.iter().filter_map(|&t| assignment.root_of(t)).collect();
    fixed.sort_unstable();
    PartitionComponent { tracks, nodes, fixed }
}

/// Separates tracks, selects roots and groups tracks (or whole graph
/// components) into independent problems according to `mode`.
pub fn partition_graph(graph: &MatchGraph, mode: Mode) -> Result<GraphPartition> {
    let mut assignment = separate_tracks(graph);
    select_roots(graph, &mut assignment);
    let components = match mode {
        Mode::Full | Mode::IntraInter => {
            let meta = build_meta_graph(graph, &assignment);
            let bound = if mode == Mode::Full {
                graph.num_images()
            } else {
                usize::MAX
            };
            recursive_graph_cut(&meta, bound)?
                .sets
                .into_iter()
                .map(|s| track_component(&assignment, s.tracks))
                .collect()
        }
        Mode::IntraOnly => (0..assignment.num_tracks())
            .map(|t| track_component(&assignment, vec![t]))
            .collect(),
        Mode::NoPartition => graph_components(graph)
            .into_iter()
            .map(|nodes| {
                let mut tracks: Vec<TrackId> = nodes.iter().map(|&n| assignment.track_of(n)).collect();
                tracks.sort_unstable();
                tracks.dedup();
                let anchor = component_anchor(graph, &nodes);
                PartitionComponent {
                    tracks,
                    nodes,
                    fixed: vec![anchor],
                }
            })
            .collect(),
    };
    Ok(GraphPartition {
        mode,
        assignment,
        components,
    })
}

/// Optimization outcome of one component.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentResult {
    pub num_nodes: usize,
    pub num_free: usize,
    pub num_blocks: usize,
    pub report: SolveReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub partition: GraphPartition,
    /// Refined position of every node.
    pub positions: Vec<Point2>,
    pub components: Vec<ComponentResult>,
}

/// Builds the component problem for `partition.components[index]`.
pub fn component_problem(
    graph: &MatchGraph,
    partition: &GraphPartition,
    index: usize,
    options: &SolverOptions,
) -> Result<RefinementProblem> {
    let comp = &partition.components[index];
    let mut opts = options.clone();
    opts.mode = partition.mode;
    if partition.mode == Mode::NoPartition {
        build_unpartitioned_problem(graph, comp.nodes.clone(), comp.fixed[0], &opts)
    } else {
        build_problem(graph, &partition.assignment, &comp.tracks, &opts)
    }
}

/// Refines every component of `partition`, in parallel on the current rayon
/// pool. Output does not depend on the number of threads.
pub fn refine_partition(graph: &MatchGraph, partition: GraphPartition, options: &SolverOptions) -> Result<Refinement> {
    options.validate()?;
    let solved: Vec<(Vec<NodeId>, Vec<Point2>, ComponentResult)> = (0..partition.components.len())
        .into_par_iter()
        .map(|c| {
            let problem = component_problem(graph, &partition, c, options)?;
            let (offsets, report) = solve_component(&problem, options.max_iterations)?;
            let result = ComponentResult {
                num_nodes: problem.nodes.len(),
                num_free: problem.num_free(),
                num_blocks: problem.blocks.len(),
                report,
            };
            Ok((problem.nodes, offsets, result))
        })
        .collect::<Result<_>>()?;

    let mut positions: Vec<Point2> = graph.nodes().iter().map(|k| k.initial_position).collect();
    let mut components = Vec::with_capacity(solved.len());
    for (nodes, offsets, result) in solved {
        for (&n, d) in nodes.iter().zip(offsets) {
            positions[n] += d;
        }
        components.push(result);
    }
    Ok(Refinement {
        partition,
        positions,
        components,
    })
}

/// Partition then refine, both according to `options.mode`.
pub fn refine_graph(graph: &MatchGraph, options: &SolverOptions) -> Result<Refinement> {
    options.validate()?;
    let partition = partition_graph(graph, options.mode)?;
    refine_partition(graph, partition, options)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::FlowField;
    use crate::graph::tests::kp;
    use crate::graph::{build_graph, ImageRef, PairMatches};

    /// Greedy example: A1(img1), B1(img2), C1(img3), A2(img1) with
    /// (A1,B1,0.9), (B1,C1,0.8), (C1,A2,0.7), constant flows.
    fn greedy_example(d: Point2) -> MatchGraph {
        let images = (1..=3).map(|i| ImageRef::new(i, 100, 100).unwrap()).collect();
        let mut g = build_graph(
            images,
            vec![
                vec![kp(0, 10.0, 10.0), kp(1, 50.0, 50.0)],
                vec![kp(0, 10.0, 10.0)],
                vec![kp(0, 10.0, 10.0)],
            ],
            &[
                PairMatches {
                    image_a: 1,
                    image_b: 2,
                    matches: vec![(0, 0, 0.9)],
                },
                PairMatches {
                    image_a: 2,
                    image_b: 3,
                    matches: vec![(0, 0, 0.8)],
                },
                PairMatches {
                    image_a: 3,
                    image_b: 1,
                    matches: vec![(0, 1, 0.7)],
                },
            ],
        )
        .unwrap();
        attach_constant(&mut g, d);
        g
    }

    fn attach_constant(g: &mut MatchGraph, d: Point2) {
        for e in 0..g.num_edges() {
            let (u, v) = (g.edge(e).from_node, g.edge(e).to_node);
            let sign = if e % 2 == 0 { 1.0 } else { -1.0 };
            g.set_flow(e, FlowField::constant(u, v, 8.0, sign * d));
        }
    }

    #[test]
    fn two_node_track_counts() {
        let images = (1..=2).map(|i| ImageRef::new(i, 50, 50).unwrap()).collect();
        let mut g = build_graph(
            images,
            vec![vec![kp(0, 5.0, 5.0)], vec![kp(0, 5.0, 5.0)]],
            &[PairMatches {
                image_a: 1,
                image_b: 2,
                matches: vec![(0, 0, 0.9)],
            }],
        )
        .unwrap();
        attach_constant(&mut g, Point2::new(1.0, 0.0));
        let part = partition_graph(&g, Mode::Full).unwrap();
        let p = component_problem(&g, &part, 0, &SolverOptions::default()).unwrap();
        assert_eq!(
            (p.blocks.len(), p.fixed.iter().filter(|&&f| f).count(), p.num_free()),
            (2, 1, 1)
        );
    }

    #[test]
    fn greedy_example_loss_kinds() {
        let g = greedy_example(Point2::new(0.5, 0.0));
        let part = partition_graph(&g, Mode::Full).unwrap();
        // Tracks {A1,B1,C1} and {A2}: N = 3 splits them apart.
        let t = &part.assignment;
        assert_eq!(t.num_tracks(), 2);
        assert_eq!(part.components.len(), 2);
        let mut kinds = Vec::new();
        for c in 0..part.components.len() {
            let p = component_problem(&g, &part, c, &SolverOptions::default()).unwrap();
            kinds.extend(p.blocks.iter().map(|b| (b.edge, b.loss.kind)));
        }
        kinds.sort_by_key(|k| k.0);
        // Edges 0..4 are A1<->B1 and B1<->C1 (intra); C1<->A2 crosses the cut.
        assert_eq!(
            kinds,
            vec![
                (0, LossKind::Cauchy),
                (1, LossKind::Cauchy),
                (2, LossKind::Cauchy),
                (3, LossKind::Cauchy)
            ]
        );

        // Without cutting, the crossing pair becomes two inter (Tukey) blocks.
        let part = partition_graph(&g, Mode::IntraInter).unwrap();
        assert_eq!(part.components.len(), 1);
        let p = component_problem(&g, &part, 0, &SolverOptions::default()).unwrap();
        let kinds: Vec<_> = p.blocks.iter().map(|b| b.loss.kind).collect();
        assert_eq!(
            kinds,
            vec![
                LossKind::Cauchy,
                LossKind::Cauchy,
                LossKind::Cauchy,
                LossKind::Cauchy,
                LossKind::Tukey,
                LossKind::Tukey
            ]
        );
        let opts = SolverOptions {
            mode: Mode::IntraOnly,
            ..Default::default()
        };
        let io = build_problem(&g, &part.assignment, &part.components[0].tracks, &opts).unwrap();
        assert_eq!(io.blocks.len(), 4);
    }

    #[test]
    fn missing_flow_is_reported() {
        let mut g = greedy_example(Point2::zeros());
        g.clear_flows();
        assert!(matches!(
            refine_graph(&g, &SolverOptions::default()),
            Err(crate::Error::MissingFlow { .. })
        ));
    }

    #[test]
    fn modes_agree_on_single_track() {
        let images = (1..=3).map(|i| ImageRef::new(i, 50, 50).unwrap()).collect();
        let mut g = build_graph(
            images,
            vec![vec![kp(0, 5.0, 5.0)], vec![kp(0, 6.0, 5.0)], vec![kp(0, 7.0, 5.0)]],
            &[
                PairMatches {
                    image_a: 1,
                    image_b: 2,
                    matches: vec![(0, 0, 0.9)],
                },
                PairMatches {
                    image_a: 2,
                    image_b: 3,
                    matches: vec![(0, 0, 0.8)],
                },
                PairMatches {
                    image_a: 1,
                    image_b: 3,
                    matches: vec![(0, 0, 0.6)],
                },
            ],
        )
        .unwrap();
        attach_constant(&mut g, Point2::new(0.7, -0.4));
        let run = |mode| {
            refine_graph(
                &g,
                &SolverOptions {
                    mode,
                    ..Default::default()
                },
            )
            .unwrap()
            .positions
        };
        let full = run(Mode::Full);
        assert_eq!(full, run(Mode::IntraOnly));
        assert_eq!(full, run(Mode::IntraInter));
    }

    #[test]
    fn no_partition_fixes_one_anchor_per_component() {
        let g = greedy_example(Point2::new(0.3, 0.1));
        let part = partition_graph(&g, Mode::NoPartition).unwrap();
        assert_eq!(part.components.len(), 1);
        // B1 has the largest weighted degree, 0.9 + 0.8.
        assert_eq!(part.components[0].fixed, vec![2]);
        let r = refine_partition(&g, part, &SolverOptions::default()).unwrap();
        assert_eq!(r.positions[2], g.node(2).initial_position);
    }
}
