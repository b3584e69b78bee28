use crate::align::Patch;
use crate::error::{Error, Result};

/// Dimension of a descriptor: a flattened 3x3 neighborhood.
pub const DESCRIPTOR_DIM: usize = 9;

/// `h x w` grid of unit-norm (or zero) descriptors extracted from a patch.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorGrid {
    pub h: usize,
    pub w: usize,
    pub dim: usize,
    /// Row-major, `dim` values per grid node.
    pub data: Vec<f64>,
}

impl DescriptorGrid {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> &[f64] {
        let start = (i * self.w + j) * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn same_shape(&self, other: &DescriptorGrid) -> bool {
        self.h == other.h && self.w == other.w && self.dim == other.dim
    }
}

/// Sample stride between grid nodes for a patch of `patch_size` samples.
pub fn grid_stride(patch_size: usize, grid_size: usize) -> Result<usize> {
    if grid_size.is_multiple_of(2) {
        return Err(Error::InvalidInput(format!("grid size {grid_size} must be odd")));
    }
    if grid_size > patch_size {
        return Err(Error::InvalidInput(format!(
            "grid size {grid_size} exceeds patch size {patch_size}"
        )));
    }
    if grid_size == 1 {
        return Ok(1);
    }
    if !(patch_size - 1).is_multiple_of(grid_size - 1) {
        return Err(Error::InvalidInput(format!(
            "grid size {grid_size} does not evenly subdivide patch size {patch_size}"
        )));
    }
    Ok((patch_size - 1) / (grid_size - 1))
}

/// Dense descriptors on a `grid_size x grid_size` lattice of the patch.
///
/// Each descriptor is the 3x3 neighborhood around its node, taken at the
/// grid stride and clamped to the patch, mean-subtracted and L2-normalized.
/// Flat neighborhoods become zero vectors.
pub fn dense_descriptors(patch: &Patch, grid_size: usize) -> Result<DescriptorGrid> {
    let stride = grid_stride(patch.size, grid_size)?;
    let offset = if grid_size == 1 { patch.size / 2 } else { 0 };
    let last = patch.size as isize - 1;
    let mut data = Vec::with_capacity(grid_size * grid_size * DESCRIPTOR_DIM);
    let mut hood = [0.0f64; DESCRIPTOR_DIM];
    for gi in 0..grid_size {
        let r = (offset + gi * stride) as isize;
        for gj in 0..grid_size {
            let c = (offset + gj * stride) as isize;
            let mut k = 0;
            for dr in -1..=1isize {
                let rr = (r + dr * stride as isize).clamp(0, last) as usize;
                for dc in -1..=1isize {
                    let cc = (c + dc * stride as isize).clamp(0, last) as usize;
                    hood[k] = patch.at(rr, cc);
                    k += 1;
                }
            }
            normalize_descriptor(&mut hood);
            data.extend_from_slice(&hood);
        }
    }
    Ok(DescriptorGrid {
        h: grid_size,
        w: grid_size,
        dim: DESCRIPTOR_DIM,
        data,
    })
}

fn normalize_descriptor(d: &mut [f64]) {
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    d.iter_mut().for_each(|x| *x -= mean);
    let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
    // Relative tolerance: float residue of the mean on flat patches.
    let scale = mean.abs().max(1.0);
    if norm <= 1e-9 * scale {
        d.iter_mut().for_each(|x| *x = 0.0);
    } else {
        d.iter_mut().for_each(|x| *x /= norm);
    }
}
