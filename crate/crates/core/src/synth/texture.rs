use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MIN_SIGMA: f64 = 1.6;
const MAX_SIGMA: f64 = 4.5;
/// Mean area per bump, in square pixels.
const AREA_PER_BUMP: f64 = 10.0;
const CUTOFF: f64 = 3.0;
/// `exp(-CUTOFF^2 / 2)`.
const TAIL: f64 = 0.011108996538242306;

#[derive(Debug, Clone, PartialEq)]
struct Bump {
    x: f64,
    y: f64,
    inv_two_sigma2: f64,
    radius2: f64,
    amplitude: f64,
}

/// Seeded band-limited intensity field: a sum of random Gaussian bumps
/// squashed into `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Texture {
    /// Plane coordinates of the first bucket corner.
    origin: f64,
    cell: f64,
    cols: usize,
    rows: usize,
    /// Bumps bucketed by cell, row-major.
    buckets: Vec<Vec<Bump>>,
}

impl Texture {
    /// Covers `[0, width] x [0, height]` plus a margin; outside it the
    /// field decays to mean gray.
    pub fn new(seed: u64, width: f64, height: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let margin = 2.0 * CUTOFF * MAX_SIGMA;
        let cell = CUTOFF * MAX_SIGMA;
        let cols = ((width + 2.0 * margin) / cell).ceil() as usize;
        let rows = ((height + 2.0 * margin) / cell).ceil() as usize;
        let count = ((width + 2.0 * margin) * (height + 2.0 * margin) / AREA_PER_BUMP) as usize;
        let mut buckets = vec![Vec::new(); cols * rows];
        for _ in 0..count {
            let x = rng.random_range(-margin..width + margin);
            let y = rng.random_range(-margin..height + margin);
            let sigma = rng.random_range(MIN_SIGMA..MAX_SIGMA);
            let amplitude = rng.random_range(-1.0..1.0) * 0.5;
            let (c, r) = (((x + margin) / cell) as usize, ((y + margin) / cell) as usize);
            buckets[r.min(rows - 1) * cols + c.min(cols - 1)].push(Bump {
                x,
                y,
                inv_two_sigma2: 0.5 / (sigma * sigma),
                radius2: (CUTOFF * sigma).powi(2),
                amplitude,
            });
        }
        Self {
            origin: -margin,
            cell,
            cols,
            rows,
            buckets,
        }
    }

    /// Intensity at plane coordinates `(x, y)`.
    pub fn value(&self, x: f64, y: f64) -> f64 {
        let c = ((x - self.origin) / self.cell).floor() as i64;
        let r = ((y - self.origin) / self.cell).floor() as i64;
        let mut sum = 0.0;
        for rr in (r - 1).max(0)..=(r + 1).min(self.rows as i64 - 1) {
            for cc in (c - 1).max(0)..=(c + 1).min(self.cols as i64 - 1) {
                for b in &self.buckets[rr as usize * self.cols + cc as usize] {
                    let d2 = (x - b.x).powi(2) + (y - b.y).powi(2);
                    if d2 < b.radius2 {
                        // Shifted so each bump vanishes continuously at its cutoff.
                        sum += b.amplitude * ((-d2 * b.inv_two_sigma2).exp() - TAIL);
                    }
                }
            }
        }
        0.5 + 0.5 * f64::tanh(sum)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_bounded() {
        let a = Texture::new(3, 100.0, 80.0);
        let b = Texture::new(3, 100.0, 80.0);
        assert_eq!(a, b);
        let c = Texture::new(4, 100.0, 80.0);
        let mut differs = false;
        for i in 0..200 {
            let (x, y) = (i as f64 * 0.47, i as f64 * 0.31);
            let v = a.value(x, y);
            assert!(v > 0.0 && v < 1.0);
            differs |= v != c.value(x, y);
        }
        assert!(differs);
    }

    #[test]
    fn has_contrast_and_is_smooth() {
        let t = Texture::new(1, 120.0, 120.0);
        let vals: Vec<f64> = (0..100).map(|i| t.value(10.0 + i as f64, 60.0)).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(var.sqrt() > 0.05, "std {}", var.sqrt());
        // Band-limited: tiny steps change the value only slightly.
        for i in 0..100 {
            let x = 10.0 + i as f64;
            assert!((t.value(x, 60.0) - t.value(x + 0.01, 60.0)).abs() < 0.01);
        }
    }
}
