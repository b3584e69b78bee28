//! Seeded planar scenes with known homographies, used as ground truth.

mod texture;

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::{bilinear, FlowField, GRID_NODES};
use crate::error::{Error, Result};
use crate::graph::{build_graph, ImageRef, KeypointInput, MatchGraph, NodeId, PairMatches};
use crate::Point2;

pub use texture::Texture;

const MAX_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub seed: u64,
    pub num_views: usize,
    pub width: usize,
    pub height: usize,
    pub num_keypoints: usize,
    /// Largest per-coordinate displacement of an image corner, in pixels.
    pub homography_magnitude: f64,
    /// Minimum distance of every projection from the image border.
    pub border: f64,
    /// Standard deviation of additive pixel noise.
    pub image_noise: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_views: 20,
            width: 400,
            height: 300,
            num_keypoints: 200,
            homography_magnitude: 20.0,
            border: 40.0,
            image_noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub config: SceneConfig,
    /// View `i` from the canonical plane.
    pub homographies: Vec<Matrix3<f64>>,
    pub images: Vec<ImageRef>,
    pub canonical_points: Vec<Point2>,
    /// `projections[view][keypoint]`.
    pub projections: Vec<Vec<Point2>>,
}

/// Applies a homography to a point.
pub fn apply_homography(h: &Matrix3<f64>, p: Point2) -> Point2 {
    let q = h * Vector3::new(p.x, p.y, 1.0);
    Point2::new(q.x / q.z, q.y / q.z)
}

/// Homography taking the four `src` points to `dst`, normalized so `h33 = 1`.
pub fn homography_from_points(src: &[Point2; 4], dst: &[Point2; 4]) -> Result<Matrix3<f64>> {
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut b = SVector::<f64, 8>::zeros();
    for (k, (s, d)) in src.iter().zip(dst).enumerate() {
        let r = 2 * k;
        a.row_mut(r)
            .copy_from_slice(&[s.x, s.y, 1.0, 0.0, 0.0, 0.0, -d.x * s.x, -d.x * s.y]);
        a.row_mut(r + 1)
            .copy_from_slice(&[0.0, 0.0, 0.0, s.x, s.y, 1.0, -d.y * s.x, -d.y * s.y]);
        b[r] = d.x;
        b[r + 1] = d.y;
    }
    let h = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Synthesis("degenerate corner configuration".into()))?;
    Ok(Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0))
}

impl SyntheticScene {
    pub fn num_views(&self) -> usize {
        self.homographies.len()
    }

    /// Homography taking view `i` coordinates to view `j`.
    pub fn homography_between(&self, i: usize, j: usize) -> Matrix3<f64> {
        let inv = self.homographies[i]
            .try_inverse()
            .expect("scene homographies are invertible");
        self.homographies[j] * inv
    }
}

/// Renders `texture` as seen through `h` (canonical plane to view).
pub fn render_view(texture: &Texture, h: &Matrix3<f64>, width: usize, height: usize) -> Vec<f32> {
    let inv = h.try_inverse().expect("invertible homography");
    let mut pixels = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let p = apply_homography(&inv, Point2::new(x as f64, y as f64));
            pixels.push(texture.value(p.x, p.y) as f32);
        }
    }
    pixels
}

/// Deterministic scene: random corner-perturbation homographies (view 0 is
/// the identity), rendered texture, and keypoints whose projections stay
/// `border` pixels inside every view.
pub fn generate_scene(config: &SceneConfig) -> Result<SyntheticScene> {
    if config.num_views < 2 {
        return Err(Error::InvalidInput("a scene needs at least two views".into()));
    }
    let (w, h) = (config.width as f64, config.height as f64);
    if 2.0 * config.border >= w.min(h) {
        return Err(Error::InvalidInput(format!(
            "border {} leaves no room in a {w}x{h} image",
            config.border
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let corners = [
        Point2::new(0.0, 0.0),
        Point2::new(w, 0.0),
        Point2::new(w, h),
        Point2::new(0.0, h),
    ];
    let mut homographies = vec![Matrix3::identity()];
    for _ in 1..config.num_views {
        let m = config.homography_magnitude;
        let dst = corners.map(|c| {
            if m > 0.0 {
                c + Point2::new(rng.random_range(-m..=m), rng.random_range(-m..=m))
            } else {
                c
            }
        });
        homographies.push(homography_from_points(&corners, &dst)?);
    }

    let inside = |p: Point2| {
        p.x >= config.border && p.y >= config.border && p.x <= w - config.border && p.y <= h - config.border
    };
    let mut canonical_points = Vec::with_capacity(config.num_keypoints);
    for k in 0..config.num_keypoints {
        let mut found = None;
        for _ in 0..MAX_ATTEMPTS {
            let c = Point2::new(
                rng.random_range(config.border..=w - config.border),
                rng.random_range(config.border..=h - config.border),
            );
            if homographies.iter().all(|hm| inside(apply_homography(hm, c))) {
                found = Some(c);
                break;
            }
        }
        canonical_points.push(found.ok_or_else(|| {
            Error::Synthesis(format!(
                "keypoint {k} left the border margin in {MAX_ATTEMPTS} attempts"
            ))
        })?);
    }
    let projections = homographies
        .iter()
        .map(|hm| canonical_points.iter().map(|&c| apply_homography(hm, c)).collect())
        .collect();

    let texture = Texture::new(config.seed ^ 0x7e57_u64, w, h);
    let noise_seed: u64 = rng.random();
    let images = homographies
        .par_iter()
        .enumerate()
        .map(|(i, hm)| {
            let mut pixels = render_view(&texture, hm, config.width, config.height);
            if config.image_noise > 0.0 {
                let mut r = ChaCha8Rng::seed_from_u64(noise_seed);
                r.set_stream(i as u64);
                let n = Normal::new(0.0, config.image_noise).map_err(|e| Error::Synthesis(e.to_string()))?;
                pixels
                    .iter_mut()
                    .for_each(|p| *p = (*p as f64 + n.sample(&mut r)).clamp(0.0, 1.0) as f32);
            }
            ImageRef::with_pixels(i as u32, config.width, config.height, pixels)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SyntheticScene {
        config: config.clone(),
        homographies,
        images,
        canonical_points,
        projections,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum Perturbation {
    /// Independent uniform noise in `[-r, r]` per coordinate.
    Uniform(f64),
    /// Isotropic Gaussian noise with the given standard deviation.
    Gaussian(f64),
}

/// Seeded detector-style noise on every projection, `[view][keypoint]`.
pub fn perturb_keypoints(scene: &SyntheticScene, perturbation: Perturbation, seed: u64) -> Result<Vec<Vec<Point2>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw: Box<dyn FnMut(&mut ChaCha8Rng) -> f64> = match perturbation {
        Perturbation::Uniform(r) if r < 0.0 || !r.is_finite() => {
            return Err(Error::InvalidInput(format!("uniform radius {r} must be non-negative")))
        }
        Perturbation::Uniform(r) => Box::new(move |g| if r == 0.0 { 0.0 } else { g.random_range(-r..=r) }),
        Perturbation::Gaussian(s) => {
            let n = Normal::new(0.0, s).map_err(|e| Error::InvalidInput(format!("gaussian sigma {s}: {e}")))?;
            Box::new(move |g| n.sample(g))
        }
    };
    Ok(scene
        .projections
        .iter()
        .map(|view| {
            view.iter()
                .map(|p| p + Point2::new(draw(&mut rng), draw(&mut rng)))
                .collect()
        })
        .collect())
}

/// Exact flow grid for `u0` in view `i` and `v0` in view `j`:
/// `H_ij(u0 + g) - v0 - g`, plus optional seeded Gaussian noise per node.
pub fn oracle_flow_field(
    scene: &SyntheticScene,
    i: usize,
    u0: Point2,
    j: usize,
    v0: Point2,
    spacing: f64,
    noise: Option<(f64, &mut ChaCha8Rng)>,
) -> Result<FlowField> {
    let hij = scene.homography_between(i, j);
    let mut grid = [Point2::zeros(); 9];
    for (slot, &(gx, gy)) in grid.iter_mut().zip(&GRID_NODES) {
        let g = Point2::new(gx as f64 * spacing, gy as f64 * spacing);
        *slot = apply_homography(&hij, u0 + g) - v0 - g;
    }
    if let Some((sigma, rng)) = noise {
        if sigma > 0.0 {
            let n = Normal::new(0.0, sigma).map_err(|e| Error::InvalidInput(format!("flow noise {sigma}: {e}")))?;
            for d in &mut grid {
                *d += Point2::new(n.sample(rng), n.sample(rng));
            }
        }
    }
    Ok(FlowField {
        grid,
        spacing,
        from_node: 0,
        to_node: 0,
        low_confidence: false,
    })
}

/// Tentative matches of a scene: every keypoint matched to itself across
/// every pair of views, with seeded similarities in `[0.5, 1]`.
pub fn scene_matches(scene: &SyntheticScene, seed: u64) -> Vec<PairMatches> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = scene.canonical_points.len();
    let mut out = Vec::new();
    for a in 0..scene.num_views() {
        for b in a + 1..scene.num_views() {
            let matches = (0..n).map(|k| (k, k, rng.random_range(0.5..=1.0))).collect();
            out.push(PairMatches {
                image_a: a as u32,
                image_b: b as u32,
                matches,
            });
        }
    }
    out
}

/// Match graph over the scene's views with keypoints at `positions`
/// (`[view][keypoint]`), images attached.
pub fn scene_graph(scene: &SyntheticScene, positions: &[Vec<Point2>], matches: &[PairMatches]) -> Result<MatchGraph> {
    let keypoints = positions
        .iter()
        .map(|view| {
            view.iter()
                .enumerate()
                .map(|(k, &p)| KeypointInput {
                    kp_id: k as u32,
                    position: p,
                })
                .collect()
        })
        .collect();
    build_graph(scene.images.clone(), keypoints, matches)
}

/// Attaches noisy oracle flows to every edge. Noise for edge `e` comes from
/// its own stream of `seed`, so the result is independent of evaluation order.
pub fn attach_oracle_flows(
    scene: &SyntheticScene,
    graph: &mut MatchGraph,
    spacing: f64,
    sigma: f64,
    seed: u64,
) -> Result<()> {
    let flows = (0..graph.num_edges())
        .into_par_iter()
        .map(|e| {
            let edge = graph.edge(e);
            let (u, v) = (graph.node(edge.from_node), graph.node(edge.to_node));
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(e as u64);
            let mut f = oracle_flow_field(
                scene,
                u.image_id as usize,
                u.initial_position,
                v.image_id as usize,
                v.initial_position,
                spacing,
                Some((sigma, &mut rng)),
            )?;
            f.from_node = edge.from_node;
            f.to_node = edge.to_node;
            Ok(f)
        })
        .collect::<Result<Vec<_>>>()?;
    for (e, f) in flows.into_iter().enumerate() {
        graph.set_flow(e, f);
    }
    Ok(())
}

/// Root-mean-square reprojection error of node positions. Nodes sharing a
/// keypoint id observe one canonical point; that point is re-estimated by
/// least squares from the observations, and the residuals between its
/// projections and the observations are pooled.
pub fn reprojection_rms(scene: &SyntheticScene, graph: &MatchGraph, positions: &[Point2]) -> f64 {
    let mut groups: Vec<Vec<NodeId>> = vec![Vec::new(); scene.canonical_points.len()];
    for (n, kp) in graph.nodes().iter().enumerate() {
        groups[kp.kp_id as usize].push(n);
    }
    let (sum, count) = groups
        .par_iter()
        .enumerate()
        .map(|(k, nodes)| {
            let obs: Vec<(&Matrix3<f64>, Point2)> = nodes
                .iter()
                .map(|&n| (&scene.homographies[graph.node(n).image_id as usize], positions[n]))
                .collect();
            let c = triangulate(&obs, scene.canonical_points[k]);
            let s: f64 = obs
                .iter()
                .map(|(h, x)| (apply_homography(h, c) - x).norm_squared())
                .sum();
            (s, obs.len())
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((0.0, 0usize), |acc, (s, c)| (acc.0 + s, acc.1 + c));
    if count == 0 {
        return 0.0;
    }
    (sum / count as f64).sqrt()
}

/// Root-mean-square distance between node positions and their true
/// projections.
pub fn truth_rms(scene: &SyntheticScene, graph: &MatchGraph, positions: &[Point2]) -> f64 {
    let sum: f64 = graph
        .nodes()
        .iter()
        .zip(positions)
        .map(|(kp, p)| (p - scene.projections[kp.image_id as usize][kp.kp_id as usize]).norm_squared())
        .sum();
    (sum / graph.num_nodes().max(1) as f64).sqrt()
}

/// Gauss-Newton point on the canonical plane best explaining `obs`.
fn triangulate(obs: &[(&Matrix3<f64>, Point2)], start: Point2) -> Point2 {
    let mut c = start;
    for _ in 0..20 {
        let mut jtj = nalgebra::Matrix2::<f64>::zeros();
        let mut jtr = Point2::zeros();
        for (h, x) in obs {
            let q = *h * Vector3::new(c.x, c.y, 1.0);
            let p = Point2::new(q.x / q.z, q.y / q.z);
            let r = p - x;
            let iz = 1.0 / q.z;
            let j = nalgebra::Matrix2::new(
                (h[(0, 0)] - p.x * h[(2, 0)]) * iz,
                (h[(0, 1)] - p.x * h[(2, 1)]) * iz,
                (h[(1, 0)] - p.y * h[(2, 0)]) * iz,
                (h[(1, 1)] - p.y * h[(2, 1)]) * iz,
            );
            jtj += j.transpose() * j;
            jtr += j.transpose() * r;
        }
        let Some(step) = jtj.try_inverse().map(|m| m * jtr) else {
            break;
        };
        c -= step;
        if step.norm() < 1e-12 {
            break;
        }
    }
    c
}

/// Pixel sample of a scene image, for tests and diagnostics.
pub fn sample_view(scene: &SyntheticScene, view: usize, p: Point2) -> f64 {
    let img = &scene.images[view];
    bilinear(
        img.pixels.as_deref().expect("scene images carry pixels"),
        img.width,
        img.height,
        p.x,
        p.y,
    )
}
