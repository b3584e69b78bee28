use crate::graph::{connectivity_score, MatchGraph, NodeId};
use crate::partition::TrackAssignment;

/// Fixes one root per track: the member with the highest connectivity
/// score, lowest node id on ties.
pub fn select_roots(graph: &MatchGraph, assignment: &mut TrackAssignment) {
    for t in 0..assignment.num_tracks() {
        let root = argmax_lowest(assignment.members(t), |n| connectivity_score(graph, assignment, n));
        assignment.set_root(t, root);
    }
}

/// Node of a connected component with the highest similarity-weighted
/// degree over all its edges, lowest id on ties.
pub fn component_anchor(graph: &MatchGraph, nodes: &[NodeId]) -> NodeId {
    argmax_lowest(nodes, |n| {
        graph.outgoing(n).iter().map(|&e| graph.edge(e).similarity).sum()
    })
}

fn argmax_lowest(nodes: &[NodeId], score: impl Fn(NodeId) -> f64) -> NodeId {
    let mut best = (f64::NEG_INFINITY, NodeId::MAX);
    for &n in nodes {
        let s = score(n);
        if s > best.0 || (s == best.0 && n < best.1) {
            best = (s, n);
        }
    }
    best.1
}
