use std::collections::HashMap;

use crate::graph::MatchGraph;
use crate::partition::{TrackAssignment, TrackId};

/// Graph whose nodes are tracks; an edge aggregates the similarities of
/// all directed match edges joining two tracks.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaGraph {
    /// Number of graph nodes in each track.
    pub track_sizes: Vec<usize>,
    /// `(a, b, weight)` with `a < b`, sorted.
    pub edges: Vec<(TrackId, TrackId, f64)>,
}

impl MetaGraph {
    pub fn num_tracks(&self) -> usize {
        self.track_sizes.len()
    }

    /// Number of underlying graph nodes in a set of tracks.
    pub fn g_cardinality(&self, tracks: &[TrackId]) -> usize {
        tracks.iter().map(|&t| self.track_sizes[t]).sum()
    }

    pub fn adjacency(&self) -> Vec<Vec<(TrackId, f64)>> {
        let mut adj = vec![Vec::new(); self.num_tracks()];
        for &(a, b, w) in &self.edges {
            adj[a].push((b, w));
            adj[b].push((a, w));
        }
        adj
    }
}

pub fn build_meta_graph(graph: &MatchGraph, assignment: &TrackAssignment) -> MetaGraph {
    let mut weights: HashMap<(TrackId, TrackId), f64> = HashMap::new();
    for edge in graph.edges() {
        let a = assignment.track_of(edge.from_node);
        let b = assignment.track_of(edge.to_node);
        if a != b {
            *weights.entry((a.min(b), a.max(b))).or_insert(0.0) += edge.similarity;
        }
    }
    let mut edges: Vec<_> = weights.into_iter().map(|((a, b), w)| (a, b, w)).collect();
    edges.sort_by_key(|&(a, b, _)| (a, b));
    MetaGraph {
        track_sizes: (0..assignment.num_tracks())
            .map(|t| assignment.members(t).len())
            .collect(),
        edges,
    }
}
