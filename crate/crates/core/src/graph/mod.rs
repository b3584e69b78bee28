//! Tentative matches graph: images, keypoints as nodes, and appearance
//! matches as directed weighted edges.
//!
//! Every match is stored as two directed edges with consecutive ids, so the
//! reverse of edge `e` is always `e ^ 1`.

mod matching;

use std::collections::{HashMap, HashSet};

use crate::align::FlowField;
use crate::error::{Error, Result};
use crate::partition::TrackAssignment;
use crate::Point2;

pub use matching::{filter_matches, mutual_match, FilterMode, MatchCandidate, NeighborDistances};

pub type NodeId = usize;
pub type EdgeId = usize;
pub type ImageId = u32;

/// Floor applied to similarities before they are used as solver weights.
pub const MIN_SIMILARITY_WEIGHT: f64 = 1e-6;

/// A grayscale image, optionally carrying its pixels (row-major, `[0, 1]`).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRef {
    pub image_id: ImageId,
    pub width: usize,
    pub height: usize,
    pub pixels: Option<Vec<f32>>,
}

impl ImageRef {
    pub fn new(image_id: ImageId, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput(format!(
                "image {image_id}: dimensions must be positive, got {width}x{height}"
            )));
        }
        Ok(Self {
            image_id,
            width,
            height,
            pixels: None,
        })
    }

    pub fn with_pixels(image_id: ImageId, width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        let mut image = Self::new(image_id, width, height)?;
        if pixels.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "image {image_id}: {} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        image.pixels = Some(pixels);
        Ok(image)
    }

    #[inline]
    pub fn has_pixels(&self) -> bool {
        self.pixels.is_some()
    }
}

/// Keypoint as supplied by a detector, before it becomes a graph node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeypointInput {
    pub kp_id: u32,
    pub position: Point2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Keypoint {
    pub node_id: NodeId,
    pub image_id: ImageId,
    /// Identifier of the keypoint within its image (as read from disk).
    pub kp_id: u32,
    pub position: Point2,
    pub initial_position: Point2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchEdge {
    pub from_node: NodeId,
    pub to_node: NodeId,
    pub similarity: f64,
    pub flow: Option<FlowField>,
}

impl MatchEdge {
    /// Similarity clamped to [`MIN_SIMILARITY_WEIGHT`], for use as a weight.
    #[inline]
    pub fn weight(&self) -> f64 {
        self.similarity.max(MIN_SIMILARITY_WEIGHT)
    }
}

/// Matches between one image pair, as indices into the per-image keypoint
/// lists passed to [`build_graph`].
#[derive(Debug, Clone, PartialEq)]
pub struct PairMatches {
    pub image_a: ImageId,
    pub image_b: ImageId,
    pub matches: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchGraph {
    images: Vec<ImageRef>,
    nodes: Vec<Keypoint>,
    edges: Vec<MatchEdge>,
    adjacency: Vec<Vec<EdgeId>>,
    image_index: HashMap<ImageId, usize>,
    node_index: HashMap<(ImageId, u32), NodeId>,
}

/// Builds the tentative matches graph.
///
/// `keypoints[i]` lists the keypoints of `images[i]`. Node ids are assigned
/// densely in input order (image order, then keypoint order). Each match
/// yields two directed edges sharing its similarity.
pub fn build_graph(
    images: Vec<ImageRef>,
    keypoints: Vec<Vec<KeypointInput>>,
    matches: &[PairMatches],
) -> Result<MatchGraph> {
    if images.len() != keypoints.len() {
        return Err(Error::InvalidInput(format!(
            "{} images but {} keypoint lists",
            images.len(),
            keypoints.len()
        )));
    }

    let mut image_index = HashMap::with_capacity(images.len());
    for (i, image) in images.iter().enumerate() {
        if image_index.insert(image.image_id, i).is_some() {
            return Err(Error::InvalidInput(format!("duplicate image id {}", image.image_id)));
        }
    }

    let mut nodes = Vec::new();
    let mut node_index = HashMap::new();
    let mut first_node = Vec::with_capacity(images.len());
    for (image, kps) in images.iter().zip(&keypoints) {
        first_node.push(nodes.len());
        for kp in kps {
            if !(kp.position.x.is_finite() && kp.position.y.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "image {}: keypoint {} has a non-finite position",
                    image.image_id, kp.kp_id
                )));
            }
            let node_id = nodes.len();
            if node_index.insert((image.image_id, kp.kp_id), node_id).is_some() {
                return Err(Error::InvalidInput(format!(
                    "image {}: duplicate keypoint id {}",
                    image.image_id, kp.kp_id
                )));
            }
            nodes.push(Keypoint {
                node_id,
                image_id: image.image_id,
                kp_id: kp.kp_id,
                position: kp.position,
                initial_position: kp.position,
            });
        }
    }

    let mut edges = Vec::new();
    let mut seen = HashSet::new();
    for pair in matches {
        let lookup = |image: ImageId| {
            image_index.get(&image).copied().ok_or_else(|| {
                Error::InvalidInput(format!(
                    "matches for pair ({}, {}) reference unknown image {image}",
                    pair.image_a, pair.image_b
                ))
            })
        };
        let ia = lookup(pair.image_a)?;
        let ib = lookup(pair.image_b)?;
        if ia == ib {
            return Err(Error::InvalidInput(format!(
                "matches within a single image ({})",
                pair.image_a
            )));
        }
        for &(a, b, similarity) in &pair.matches {
            for (index, len) in [(a, keypoints[ia].len()), (b, keypoints[ib].len())] {
                if index >= len {
                    return Err(Error::KeypointOutOfRange {
                        image_a: pair.image_a,
                        image_b: pair.image_b,
                        index,
                        len,
                    });
                }
            }
            if !(similarity > 0.0 && similarity <= 1.0) {
                return Err(Error::InvalidInput(format!(
                    "pair ({}, {}): similarity {similarity} outside (0, 1]",
                    pair.image_a, pair.image_b
                )));
            }
            let u = first_node[ia] + a;
            let v = first_node[ib] + b;
            if !seen.insert((u.min(v), u.max(v))) {
                return Err(Error::DuplicateEdge { from: u, to: v });
            }
            for (from_node, to_node) in [(u, v), (v, u)] {
                edges.push(MatchEdge {
                    from_node,
                    to_node,
                    similarity,
                    flow: None,
                });
            }
        }
    }

    let mut adjacency = vec![Vec::new(); nodes.len()];
    for (e, edge) in edges.iter().enumerate() {
        adjacency[edge.from_node].push(e);
    }

    Ok(MatchGraph {
        images,
        nodes,
        edges,
        adjacency,
        image_index,
        node_index,
    })
}

impl MatchGraph {
    pub fn images(&self) -> &[ImageRef] {
        &self.images
    }

    pub fn image(&self, image_id: ImageId) -> Option<&ImageRef> {
        self.image_index.get(&image_id).map(|&i| &self.images[i])
    }

    pub fn num_images(&self) -> usize {
        self.images.len()
    }

    pub fn nodes(&self) -> &[Keypoint] {
        &self.nodes
    }

    pub fn node(&self, node: NodeId) -> &Keypoint {
        &self.nodes[node]
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn edges(&self) -> &[MatchEdge] {
        &self.edges
    }

    pub fn edge(&self, edge: EdgeId) -> &MatchEdge {
        &self.edges[edge]
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Outgoing edges of `node`.
    pub fn outgoing(&self, node: NodeId) -> &[EdgeId] {
        &self.adjacency[node]
    }

    #[inline]
    pub fn reverse(edge: EdgeId) -> EdgeId {
        edge ^ 1
    }

    pub fn node_by_keypoint(&self, image_id: ImageId, kp_id: u32) -> Option<NodeId> {
        self.node_index.get(&(image_id, kp_id)).copied()
    }

    /// Directed edge `from -> to`, if the two nodes are matched.
    pub fn find_edge(&self, from: NodeId, to: NodeId) -> Option<EdgeId> {
        self.adjacency
            .get(from)?
            .iter()
            .copied()
            .find(|&e| self.edges[e].to_node == to)
    }

    pub fn set_flow(&mut self, edge: EdgeId, flow: FlowField) {
        self.edges[edge].flow = Some(flow);
    }

    pub fn clear_flows(&mut self) {
        for edge in &mut self.edges {
            edge.flow = None;
        }
    }

    /// Checks the structural invariants; used by tests and after file loads.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (e, edge) in self.edges.iter().enumerate() {
            let (u, v) = (edge.from_node, edge.to_node);
            if u >= self.nodes.len() || v >= self.nodes.len() {
                return Err(Error::InvalidInput(format!("edge {e} has a dangling endpoint")));
            }
            if self.nodes[u].image_id == self.nodes[v].image_id {
                return Err(Error::InvalidInput(format!("edge {e} joins nodes of one image")));
            }
            if !seen.insert((u, v)) {
                return Err(Error::DuplicateEdge { from: u, to: v });
            }
            let rev = &self.edges[Self::reverse(e)];
            if rev.from_node != v || rev.to_node != u {
                return Err(Error::InvalidInput(format!("edge {e} has no reverse")));
            }
            if !self.adjacency[u].contains(&e) {
                return Err(Error::InvalidInput(format!("edge {e} missing from adjacency")));
            }
        }
        let listed: usize = self.adjacency.iter().map(Vec::len).sum();
        if listed != self.edges.len() {
            return Err(Error::InvalidInput("adjacency lists stale edges".into()));
        }
        Ok(())
    }
}

/// Similarity-weighted degree of the intra-track edges leaving `node`.
pub fn connectivity_score(graph: &MatchGraph, assignment: &TrackAssignment, node: NodeId) -> f64 {
    let track = assignment.track_of(node);
    graph
        .outgoing(node)
        .iter()
        .map(|&e| graph.edge(e))
        .filter(|edge| assignment.track_of(edge.to_node) == track)
        .map(|edge| edge.similarity)
        .sum()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::partition::separate_tracks;

    pub(crate) fn kp(kp_id: u32, x: f64, y: f64) -> KeypointInput {
        KeypointInput {
            kp_id,
            position: Point2::new(x, y),
        }
    }

    fn images(n: u32) -> Vec<ImageRef> {
        (1..=n).map(|id| ImageRef::new(id, 64, 64).unwrap()).collect()
    }

    #[test]
    fn single_match_creates_both_directions() {
        let g = build_graph(
            images(2),
            vec![vec![kp(0, 1.0, 1.0)], vec![kp(0, 2.0, 2.0)]],
            &[PairMatches {
                image_a: 1,
                image_b: 2,
                matches: vec![(0, 0, 0.9)],
            }],
        )
        .unwrap();
        assert_eq!(g.num_nodes(), 2);
        assert_eq!(g.num_edges(), 2);
        assert!(g.edges().iter().all(|e| e.similarity == 0.9));
        assert_eq!(g.edge(0).from_node, g.edge(1).to_node);
        g.validate().unwrap();
    }

    #[test]
    fn empty_match_list() {
        let g = build_graph(
            images(2),
            vec![vec![kp(0, 1.0, 1.0), kp(1, 3.0, 1.0)], vec![kp(0, 2.0, 2.0)]],
            &[],
        )
        .unwrap();
        assert_eq!(g.num_nodes(), 3);
        assert_eq!(g.num_edges(), 0);
    }

    #[test]
    fn middle_node_of_a_chain_has_four_directed_edges() {
        let kps = vec![vec![kp(0, 0.0, 0.0)]; 3];
        let g = build_graph(
            images(3),
            kps,
            &[
                PairMatches {
                    image_a: 1,
                    image_b: 2,
                    matches: vec![(0, 0, 0.5)],
                },
                PairMatches {
                    image_a: 2,
                    image_b: 3,
                    matches: vec![(0, 0, 0.5)],
                },
            ],
        )
        .unwrap();
        let incident = g.edges().iter().filter(|e| e.from_node == 1 || e.to_node == 1).count();
        assert_eq!(incident, 4);
        assert_eq!(g.outgoing(1).len(), 2);
    }

    #[test]
    fn out_of_range_index_names_the_pair() {
        let err = build_graph(
            images(2),
            vec![vec![kp(0, 0.0, 0.0)], vec![kp(0, 0.0, 0.0)]],
            &[PairMatches {
                image_a: 1,
                image_b: 2,
                matches: vec![(0, 3, 0.5)],
            }],
        )
        .unwrap_err();
        assert!(matches!(
            err,
            Error::KeypointOutOfRange {
                image_a: 1,
                image_b: 2,
                index: 3,
                ..
            }
        ));
        assert!(err.to_string().contains("(1, 2)"));
    }

    #[test]
    fn duplicate_match_rejected() {
        let err = build_graph(
            images(2),
            vec![vec![kp(0, 0.0, 0.0)], vec![kp(0, 0.0, 0.0)]],
            &[
                PairMatches {
                    image_a: 1,
                    image_b: 2,
                    matches: vec![(0, 0, 0.5)],
                },
                PairMatches {
                    image_a: 2,
                    image_b: 1,
                    matches: vec![(0, 0, 0.7)],
                },
            ],
        )
        .unwrap_err();
        assert!(matches!(err, Error::DuplicateEdge { .. }));
    }

    #[test]
    fn similarity_must_be_positive() {
        let err = build_graph(
            images(2),
            vec![vec![kp(0, 0.0, 0.0)], vec![kp(0, 0.0, 0.0)]],
            &[PairMatches {
                image_a: 1,
                image_b: 2,
                matches: vec![(0, 0, 0.0)],
            }],
        );
        assert!(err.is_err());
    }

    /// Random graph with `n_images` images and a few keypoints each.
    pub(crate) fn random_graph(seed: u64, max_nodes: usize, max_images: u32, density: f64) -> MatchGraph {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n_images = rng.random_range(2..=max_images);
        let mut per_image = vec![0usize; n_images as usize];
        let n_nodes = rng.random_range(n_images as usize..=max_nodes.max(n_images as usize));
        for i in 0..n_nodes {
            let slot = if i < n_images as usize {
                i
            } else {
                rng.random_range(0..n_images as usize)
            };
            per_image[slot] += 1;
        }
        let kps: Vec<Vec<KeypointInput>> = per_image
            .iter()
            .map(|&k| {
                (0..k as u32)
                    .map(|j| kp(j, rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)))
                    .collect()
            })
            .collect();
        let mut pairs = Vec::new();
        for a in 0..n_images {
            for b in a + 1..n_images {
                let mut matches = Vec::new();
                for i in 0..per_image[a as usize] {
                    for j in 0..per_image[b as usize] {
                        if rng.random_bool(density) {
                            // Quantized similarities provoke ties.
                            let s = (rng.random_range(1..=20) as f64) / 20.0;
                            matches.push((i, j, s));
                        }
                    }
                }
                pairs.push(PairMatches {
                    image_a: a + 1,
                    image_b: b + 1,
                    matches,
                });
            }
        }
        build_graph(images(n_images), kps, &pairs).unwrap()
    }

    #[test]
    fn random_graphs_satisfy_invariants() {
        for seed in 0..50 {
            random_graph(seed, 30, 6, 0.3).validate().unwrap();
        }
    }

    #[test]
    fn connectivity_score_sums_intra_similarities() {
        // A(img1) -- B(img2) 0.9, A -- C(img3) 0.8, B -- D(img1) 0.2 (D collides with A).
        let kps = vec![
            vec![kp(0, 0.0, 0.0), kp(1, 0.0, 0.0)],
            vec![kp(0, 0.0, 0.0)],
            vec![kp(0, 0.0, 0.0)],
        ];
        let g = build_graph(
            images(3),
            kps,
            &[
                PairMatches {
                    image_a: 1,
                    image_b: 2,
                    matches: vec![(0, 0, 0.9), (1, 0, 0.2)],
                },
                PairMatches {
                    image_a: 1,
                    image_b: 3,
                    matches: vec![(0, 0, 0.8)],
                },
            ],
        )
        .unwrap();
        let t = separate_tracks(&g);
        assert!((connectivity_score(&g, &t, 0) - 1.7).abs() < 1e-12);
        // D only has an inter-edge.
        assert_eq!(connectivity_score(&g, &t, 1), 0.0);
    }

    #[test]
    fn connectivity_score_matches_enumeration() {
        for seed in 0..40 {
            let g = random_graph(seed, 20, 5, 0.4);
            let t = separate_tracks(&g);
            for u in 0..g.num_nodes() {
                let mut expected = 0.0;
                for edge in g.edges() {
                    if edge.from_node == u && t.track_of(edge.to_node) == t.track_of(u) {
                        expected += edge.similarity;
                    }
                }
                let got = connectivity_score(&g, &t, u);
                assert!(got >= 0.0);
                assert!((got - expected).abs() < 1e-12);
            }
        }
    }
}
