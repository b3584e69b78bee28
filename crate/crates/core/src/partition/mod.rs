//! Match-graph partitioning: greedy track separation, the track
//! meta-graph, and recursive normalized cuts bounding component size.

mod cut;
mod meta;
mod tracks;

use crate::graph::{EdgeId, MatchGraph};

pub use cut::{
    exhaustive_bisect, ncut_value, normalized_cut_bisect, recursive_graph_cut, spectral_sweep_bisect, ComponentFamily,
    ComponentSet, EXHAUSTIVE_LIMIT,
};
pub use meta::{build_meta_graph, MetaGraph};
pub use tracks::{separate_tracks, TrackAssignment, TrackId};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EdgeClasses {
    /// Edges inside one track of the set.
    pub intra: Vec<EdgeId>,
    /// Edges joining two different tracks of the set.
    pub inter: Vec<EdgeId>,
}

/// Splits the edges touching `tracks` into intra- and inter-track edges.
/// Edges leaving the set are dropped. Output is sorted by edge id.
pub fn classify_edges(graph: &MatchGraph, assignment: &TrackAssignment, tracks: &[TrackId]) -> EdgeClasses {
    let mut in_set = vec![false; assignment.num_tracks()];
    tracks.iter().for_each(|&t| in_set[t] = true);
    let mut classes = EdgeClasses::default();
    for &t in tracks {
        for &u in assignment.members(t) {
            for &e in graph.outgoing(u) {
                let tv = assignment.track_of(graph.edge(e).to_node);
                if tv == t {
                    classes.intra.push(e);
                } else if in_set[tv] {
                    classes.inter.push(e);
                }
            }
        }
    }
    classes.intra.sort_unstable();
    classes.inter.sort_unstable();
    classes
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::random_graph;

    #[test]
    fn classification_matches_enumeration() {
        for seed in 0..60 {
            let g = random_graph(seed, 40, 6, 0.3);
            let t = separate_tracks(&g);
            let m = build_meta_graph(&g, &t);
            let fam = recursive_graph_cut(&m, g.num_images()).unwrap();
            let mut seen_intra = 0;
            for set in &fam.sets {
                let c = classify_edges(&g, &t, &set.tracks);
                let member = |n: usize| set.tracks.contains(&t.track_of(n));
                let mut intra = Vec::new();
                let mut inter = Vec::new();
                for (e, edge) in g.edges().iter().enumerate() {
                    let (a, b) = (edge.from_node, edge.to_node);
                    if t.track_of(a) == t.track_of(b) && member(a) {
                        intra.push(e);
                    } else if member(a) && member(b) {
                        inter.push(e);
                    }
                }
                assert_eq!(c.intra, intra);
                assert_eq!(c.inter, inter);
                seen_intra += intra.len();
            }
            // Intra edges never cross components.
            let total_intra = g
                .edges()
                .iter()
                .filter(|e| t.track_of(e.from_node) == t.track_of(e.to_node))
                .count();
            assert_eq!(seen_intra, total_intra);
        }
    }

    #[test]
    fn single_track_all_intra() {
        let g = random_graph(3, 2, 2, 1.0);
        let t = separate_tracks(&g);
        assert_eq!(t.num_tracks(), 1);
        let c = classify_edges(&g, &t, &[0]);
        assert_eq!(c.intra.len(), g.num_edges());
        assert!(c.inter.is_empty());
    }
}
