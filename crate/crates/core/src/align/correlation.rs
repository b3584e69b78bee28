use crate::align::DescriptorGrid;
use crate::error::{Error, Result};
use crate::Point2;

/// Dense match scores between two descriptor grids.
///
/// Channel `k = i2 * w + j2` at position `(i1, j1)` holds the rectified,
/// channel-normalized correlation between `a(i1, j1)` and `b(i2, j2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationVolume {
    pub h: usize,
    pub w: usize,
    pub values: Vec<f64>,
}

impl CorrelationVolume {
    #[inline]
    pub fn channels(&self, i: usize, j: usize) -> &[f64] {
        let n = self.h * self.w;
        let start = (i * self.w + j) * n;
        &self.values[start..start + n]
    }
}

/// Displacement of the central pixel between two patches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CentralFlow {
    pub displacement: Point2,
    /// Set when the correlation carries no positive evidence.
    pub low_confidence: bool,
}

/// ReLU followed by L2 normalization; all-zero vectors stay zero.
fn rectify_normalize(channels: &mut [f64]) {
    channels.iter_mut().for_each(|x| *x = x.max(0.0));
    let norm = channels.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        let inv = 1.0 / norm;
        channels.iter_mut().for_each(|x| *x *= inv);
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn correlate_normalize(a: &DescriptorGrid, b: &DescriptorGrid) -> Result<CorrelationVolume> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.h, a.w, a.dim, b.h, b.w, b.dim
        )));
    }
    let n = a.h * a.w;
    let mut values = Vec::with_capacity(n * n);
    for i1 in 0..a.h {
        for j1 in 0..a.w {
            let start = values.len();
            let fa = a.get(i1, j1);
            for i2 in 0..b.h {
                for j2 in 0..b.w {
                    values.push(dot(fa, b.get(i2, j2)));
                }
            }
            rectify_normalize(&mut values[start..]);
        }
    }
    Ok(CorrelationVolume { h: a.h, w: a.w, values })
}

/// The central position's channel vector of [`correlate_normalize`],
/// computed without building the full volume.
pub fn central_channels(a: &DescriptorGrid, b: &DescriptorGrid) -> Result<Vec<f64>> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.h, a.w, a.dim, b.h, b.w, b.dim
        )));
    }
    let fa = a.get(a.h / 2, a.w / 2);
    let mut channels: Vec<f64> = (0..b.h)
        .flat_map(|i| (0..b.w).map(move |j| (i, j)))
        .map(|(i, j)| dot(fa, b.get(i, j)))
        .collect();
    rectify_normalize(&mut channels);
    Ok(channels)
}

/// Cells around the grid center whose scores vote for the central flow.
pub const VOTE_RADIUS: usize = 4;

/// Scores of integer-cell displacements of the patch center.
///
/// Entry `(di + h/2) * w + (dj + w/2)` sums, over grid positions `p` within
/// `radius` cells of the center, the score of `p` at `p + (di, dj)`. The
/// center's channel vector alone is too ambiguous for low-dimensional
/// descriptors; letting its neighborhood vote assumes the flow is locally
/// constant over `radius` cells.
pub fn displacement_votes(volume: &CorrelationVolume, radius: usize) -> Vec<f64> {
    let mut votes = vec![0.0; volume.h * volume.w];
    for i in voting_rows(volume.h, radius) {
        for j in voting_rows(volume.w, radius) {
            accumulate_votes(&mut votes, volume.channels(i, j), i, j, volume.h, volume.w);
        }
    }
    votes
}

fn voting_rows(n: usize, radius: usize) -> std::ops::RangeInclusive<usize> {
    let c = n / 2;
    c.saturating_sub(radius)..=(c + radius).min(n - 1)
}

fn accumulate_votes(votes: &mut [f64], channels: &[f64], i: usize, j: usize, h: usize, w: usize) {
    // Target (i2, j2) votes for displacement cell (i2 - i + h/2, j2 - j + w/2).
    let (oi, oj) = ((h / 2) as isize - i as isize, (w / 2) as isize - j as isize);
    let rows = (-oi).max(0) as usize..(h as isize - oi).min(h as isize) as usize;
    let cols = (-oj).max(0) as usize..(w as isize - oj).min(w as isize) as usize;
    for i2 in rows {
        let src = &channels[i2 * w + cols.start..i2 * w + cols.end];
        let base = (i2 as isize + oi) as usize * w + (cols.start as isize + oj) as usize;
        for (v, c) in votes[base..base + src.len()].iter_mut().zip(src) {
            *v += c;
        }
    }
}

/// [`displacement_votes`] computed straight from the descriptors, building
/// only the voting rows of the volume.
pub fn vote_from_descriptors(a: &DescriptorGrid, b: &DescriptorGrid, radius: usize) -> Result<Vec<f64>> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.h, a.w, a.dim, b.h, b.w, b.dim
        )));
    }
    let n = b.h * b.w;
    if b.dim == 0 {
        return Ok(vec![0.0; n]);
    }
    // One contiguous plane per descriptor component, so the scores of all
    // targets accumulate in vectorizable passes.
    let mut planes = vec![0.0; b.dim * n];
    for (t, fb) in b.data.chunks_exact(b.dim).enumerate() {
        for (k, &x) in fb.iter().enumerate() {
            planes[k * n + t] = x;
        }
    }
    let mut votes = vec![0.0; a.h * a.w];
    let mut channels = vec![0.0; n];
    for i in voting_rows(a.h, radius) {
        for j in voting_rows(a.w, radius) {
            let fa = a.get(i, j);
            for (c, &y) in channels.iter_mut().zip(&planes[..n]) {
                *c = fa[0] * y;
            }
            for (&x, plane) in fa[1..].iter().zip(planes[n..].chunks_exact(n)) {
                for (c, &y) in channels.iter_mut().zip(plane) {
                    *c += x * y;
                }
            }
            rectify_normalize(&mut channels);
            accumulate_votes(&mut votes, &channels, i, j, a.h, a.w);
        }
    }
    Ok(votes)
}

/// Central flow of a correlation volume: peak of the displacement votes,
/// refined per axis to sub-cell precision, in pixels.
pub fn regress_central_flow(volume: &CorrelationVolume, cell_size: f64) -> CentralFlow {
    regress_channels(&displacement_votes(volume, VOTE_RADIUS), volume.h, volume.w, cell_size)
}

/// Peak of a score grid with per-axis parabolic sub-cell refinement,
/// relative to the grid center and scaled to pixels.
pub fn regress_channels(channels: &[f64], h: usize, w: usize, cell_size: f64) -> CentralFlow {
    let mut best = 0;
    for (k, &v) in channels.iter().enumerate() {
        if v > channels[best] {
            best = k;
        }
    }
    if !(channels[best] > 0.0) {
        return CentralFlow {
            displacement: Point2::zeros(),
            low_confidence: true,
        };
    }
    let (pi, pj) = (best / w, best % w);
    let at = |i: usize, j: usize| channels[i * w + j];

    let sub_x = if pj > 0 && pj + 1 < w {
        parabola_vertex(at(pi, pj - 1), at(pi, pj), at(pi, pj + 1))
    } else {
        0.0
    };
    let sub_y = if pi > 0 && pi + 1 < h {
        parabola_vertex(at(pi - 1, pj), at(pi, pj), at(pi + 1, pj))
    } else {
        0.0
    };
    let dx = pj as f64 - (w / 2) as f64 + sub_x;
    let dy = pi as f64 - (h / 2) as f64 + sub_y;
    CentralFlow {
        displacement: Point2::new(dx, dy) * cell_size,
        low_confidence: false,
    }
}

/// Vertex offset of the parabola through `(-1, l), (0, c), (1, r)`, clamped
/// to half a cell. Zero when the samples are not concave.
fn parabola_vertex(l: f64, c: f64, r: f64) -> f64 {
    let curvature = l - 2.0 * c + r;
    if curvature >= 0.0 {
        return 0.0;
    }
    (0.5 * (l - r) / curvature).clamp(-0.5, 0.5)
}
