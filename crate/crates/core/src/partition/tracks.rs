use std::collections::HashSet;

use crate::graph::{ImageId, MatchGraph, NodeId};

pub type TrackId = usize;

/// Partition of the graph nodes into tracks holding at most one node per image.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackAssignment {
    track_of: Vec<TrackId>,
    members: Vec<Vec<NodeId>>,
    image_sets: Vec<Vec<ImageId>>,
    root_of: Vec<Option<NodeId>>,
}

impl TrackAssignment {
    /// Builds an assignment from per-node track labels (any integers);
    /// tracks are renumbered by their smallest node id.
    pub fn from_labels(graph: &MatchGraph, labels: &[usize]) -> Self {
        assert_eq!(labels.len(), graph.num_nodes());
        let mut remap = std::collections::HashMap::new();
        let mut track_of = Vec::with_capacity(labels.len());
        let mut members: Vec<Vec<NodeId>> = Vec::new();
        for (node, &label) in labels.iter().enumerate() {
            let next = remap.len();
            let t = *remap.entry(label).or_insert(next);
            if t == members.len() {
                members.push(Vec::new());
            }
            members[t].push(node);
            track_of.push(t);
        }
        let image_sets = members
            .iter()
            .map(|nodes| {
                let mut images: Vec<ImageId> = nodes.iter().map(|&n| graph.node(n).image_id).collect();
                images.sort_unstable();
                images
            })
            .collect();
        let root_of = vec![None; members.len()];
        Self {
            track_of,
            members,
            image_sets,
            root_of,
        }
    }

    #[inline]
    pub fn track_of(&self, node: NodeId) -> TrackId {
        self.track_of[node]
    }

    pub fn num_tracks(&self) -> usize {
        self.members.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.track_of.len()
    }

    /// Nodes of `track` in increasing id order.
    pub fn members(&self, track: TrackId) -> &[NodeId] {
        &self.members[track]
    }

    /// Sorted image ids covered by `track`.
    pub fn image_set(&self, track: TrackId) -> &[ImageId] {
        &self.image_sets[track]
    }

    pub fn root_of(&self, track: TrackId) -> Option<NodeId> {
        self.root_of[track]
    }

    pub fn set_root(&mut self, track: TrackId, node: NodeId) {
        assert_eq!(self.track_of[node], track, "root must belong to its track");
        self.root_of[track] = Some(node);
    }

    pub fn is_root(&self, node: NodeId) -> bool {
        self.root_of[self.track_of[node]] == Some(node)
    }

    /// True when no track holds two nodes of the same image.
    pub fn images_distinct(&self) -> bool {
        self.image_sets.iter().all(|s| s.windows(2).all(|w| w[0] != w[1]))
    }
}

struct UnionFind {
    parent: Vec<usize>,
    images: Vec<HashSet<ImageId>>,
}

impl UnionFind {
    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Merges the sets of `a` and `b` if they cover disjoint images.
    fn union_if_disjoint(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        let (big, small) = if self.images[ra].len() >= self.images[rb].len() {
            (ra, rb)
        } else {
            (rb, ra)
        };
        if self.images[small].iter().any(|i| self.images[big].contains(i)) {
            return false;
        }
        let moved = std::mem::take(&mut self.images[small]);
        self.images[big].extend(moved);
        self.parent[small] = big;
        true
    }
}

/// Undirected match pairs in greedy merge order: decreasing similarity (max
/// of both directions), ties by `(min node, max node)` ascending.
pub(crate) fn merge_order(graph: &MatchGraph) -> Vec<(NodeId, NodeId, f64)> {
    let mut pairs: Vec<(NodeId, NodeId, f64)> = (0..graph.num_edges())
        .step_by(2)
        .map(|e| {
            let fwd = graph.edge(e);
            let bwd = graph.edge(MatchGraph::reverse(e));
            let (u, v) = (fwd.from_node, fwd.to_node);
            (u.min(v), u.max(v), fwd.similarity.max(bwd.similarity))
        })
        .collect();
    pairs.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    pairs
}

/// Greedy track separation: match pairs are visited by decreasing
/// similarity and two tracks merge only if they share no image.
pub fn separate_tracks(graph: &MatchGraph) -> TrackAssignment {
    let n = graph.num_nodes();
    let mut uf = UnionFind {
        parent: (0..n).collect(),
        images: graph.nodes().iter().map(|k| HashSet::from([k.image_id])).collect(),
    };
    for (u, v, _) in merge_order(graph) {
        uf.union_if_disjoint(u, v);
    }
    let labels: Vec<usize> = (0..n).map(|x| uf.find(x)).collect();
    TrackAssignment::from_labels(graph, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::{kp, random_graph};
    use crate::graph::{build_graph, ImageRef, PairMatches};

    /// Literal transcription of the greedy pseudo-code over directed edges,
    /// with explicit track relabeling and image-set scans.
    pub(crate) fn naive_tracks(graph: &MatchGraph) -> Vec<usize> {
        let mut t: Vec<usize> = (0..graph.num_nodes()).collect();
        let mut f: Vec<(f64, usize, usize, usize, usize)> = graph
            .edges()
            .iter()
            .map(|e| {
                let s = e
                    .similarity
                    .max(graph.edge(graph.find_edge(e.to_node, e.from_node).unwrap()).similarity);
                (
                    s,
                    e.from_node.min(e.to_node),
                    e.from_node.max(e.to_node),
                    e.from_node,
                    e.to_node,
                )
            })
            .collect();
        f.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
        for &(_, _, _, u, v) in &f {
            let (tu, tv) = (t[u], t[v]);
            let images = |track: usize| -> Vec<u32> {
                (0..t.len())
                    .filter(|&x| t[x] == track)
                    .map(|x| graph.node(x).image_id)
                    .collect()
            };
            let iu = images(tu);
            let iv = images(tv);
            if iu.iter().all(|i| !iv.contains(i)) {
                for x in t.iter_mut() {
                    if *x == tv {
                        *x = tu;
                    }
                }
            }
        }
        t
    }

    /// Canonical form: label = smallest node id of the track.
    pub(crate) fn canonical(labels: &[usize]) -> Vec<usize> {
        let mut first = std::collections::HashMap::new();
        labels
            .iter()
            .enumerate()
            .map(|(i, &l)| *first.entry(l).or_insert(i))
            .collect()
    }

    pub(crate) fn assignment_labels(a: &TrackAssignment) -> Vec<usize> {
        canonical(&(0..a.num_nodes()).map(|n| a.track_of(n)).collect::<Vec<_>>())
    }

    #[test]
    fn image_collision_blocks_merge() {
        // A1(img1), B1(img2), C1(img3), A2(img1)
        let images = (1..=3).map(|i| ImageRef::new(i, 10, 10).unwrap()).collect();
        let kps = vec![
            vec![kp(0, 0.0, 0.0), kp(1, 0.0, 0.0)],
            vec![kp(0, 0.0, 0.0)],
            vec![kp(0, 0.0, 0.0)],
        ];
        let g = build_graph(
            images,
            kps,
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
        let t = separate_tracks(&g);
        // nodes: 0 = A1, 1 = A2, 2 = B1, 3 = C1
        assert_eq!(t.num_tracks(), 2);
        assert_eq!(t.members(t.track_of(0)), &[0, 2, 3]);
        assert_eq!(t.members(t.track_of(1)), &[1]);
        assert!(t.images_distinct());
    }

    #[test]
    fn single_edge_single_track() {
        let images = (1..=2).map(|i| ImageRef::new(i, 10, 10).unwrap()).collect();
        let g = build_graph(
            images,
            vec![vec![kp(0, 0.0, 0.0)], vec![kp(0, 0.0, 0.0)]],
            &[PairMatches {
                image_a: 1,
                image_b: 2,
                matches: vec![(0, 0, 0.4)],
            }],
        )
        .unwrap();
        let t = separate_tracks(&g);
        assert_eq!(t.num_tracks(), 1);
        assert_eq!(t.image_set(0), &[1, 2]);
    }

    #[test]
    fn matches_naive_oracle() {
        for seed in 0..200 {
            let g = random_graph(seed, 40, 8, 0.25);
            let t = separate_tracks(&g);
            assert!(t.images_distinct());
            assert_eq!(assignment_labels(&t), canonical(&naive_tracks(&g)), "seed {seed}");
        }
    }
}
