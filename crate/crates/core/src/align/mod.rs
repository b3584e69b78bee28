//! Two-view patch alignment.
//!
//! A central flow is predicted by correlating dense descriptors of two
//! patches and regressing the peak of the normalized match scores that
//! cells near the center cast for each displacement. A local flow field is
//! then assembled coarse-to-fine: one coarse central flow at extraction
//! resolution, refined at each node of a 3x3 grid on zoomed-in sub-patches.

mod correlation;
mod descriptor;
mod flow;
mod patch;

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ImageId, ImageRef, MatchGraph};
use crate::Point2;

pub use correlation::{
    central_channels, correlate_normalize, displacement_votes, regress_central_flow, regress_channels,
    vote_from_descriptors, CentralFlow, CorrelationVolume, VOTE_RADIUS,
};
pub use descriptor::{dense_descriptors, grid_stride, DescriptorGrid, DESCRIPTOR_DIM};
pub use flow::{eval_flow, FlowField, GRID_NODES};
pub use patch::{bilinear, resize_to_max_edge, sample_patch, Patch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignConfig {
    /// Samples per patch side (odd).
    pub patch_size: usize,
    /// Descriptor grid side (odd).
    pub grid_size: usize,
    /// Pixels between flow-field grid nodes.
    pub grid_spacing: f64,
    /// Magnification of the fine pass relative to extraction resolution.
    pub fine_zoom: f64,
    /// Images are downscaled so their longest edge is at most this.
    pub max_long_edge: usize,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            patch_size: 33,
            grid_size: 17,
            grid_spacing: 8.0,
            fine_zoom: 2.0,
            max_long_edge: 1600,
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<()> {
        grid_stride(self.patch_size, self.grid_size)?;
        if !(self.grid_spacing > 0.0) {
            return Err(Error::InvalidInput(format!(
                "grid spacing {} must be positive",
                self.grid_spacing
            )));
        }
        if !(self.fine_zoom >= 1.0) {
            return Err(Error::InvalidInput(format!(
                "fine zoom {} must be at least 1",
                self.fine_zoom
            )));
        }
        if self.max_long_edge == 0 {
            return Err(Error::InvalidInput("max long edge must be positive".into()));
        }
        Ok(())
    }
}

/// Central flow `d_{u->v}`: where the point at `u` in `image_u` lands in
/// `image_v`, relative to `v`, with patches sampled at `scale` pixels per sample.
pub fn predict_central_flow(
    image_u: &ImageRef,
    u: Point2,
    image_v: &ImageRef,
    v: Point2,
    scale: f64,
    config: &AlignConfig,
) -> Result<CentralFlow> {
    let pu = sample_patch(image_u, u, scale, config.patch_size)?;
    let pv = sample_patch(image_v, v, scale, config.patch_size)?;
    let du = dense_descriptors(&pu, config.grid_size)?;
    let dv = dense_descriptors(&pv, config.grid_size)?;
    let votes = vote_from_descriptors(&du, &dv, VOTE_RADIUS)?;
    let cell = grid_stride(config.patch_size, config.grid_size)? as f64 * scale;
    Ok(regress_channels(&votes, dv.h, dv.w, cell))
}

/// Coarse-to-fine 3x3 flow field from `u` to `v`.
///
/// `T(g) = d_c + d_f(g)` where `d_c` is the central flow at extraction
/// resolution and `d_f(g)` the central flow between sub-patches around
/// `u + g` and `v + d_c + g`, sampled at `1 / fine_zoom` pixels per sample.
pub fn estimate_flow_field(
    image_u: &ImageRef,
    u: Point2,
    image_v: &ImageRef,
    v: Point2,
    config: &AlignConfig,
) -> Result<FlowField> {
    let coarse = predict_central_flow(image_u, u, image_v, v, 1.0, config)?;
    let fine_scale = 1.0 / config.fine_zoom;
    let mut grid = [Point2::zeros(); 9];
    let mut low_confidence = coarse.low_confidence;
    for (k, &(gx, gy)) in GRID_NODES.iter().enumerate() {
        let g = Point2::new(gx as f64, gy as f64) * config.grid_spacing;
        let fine = predict_central_flow(image_u, u + g, image_v, v + coarse.displacement + g, fine_scale, config)?;
        low_confidence |= fine.low_confidence;
        grid[k] = coarse.displacement + fine.displacement;
    }
    Ok(FlowField {
        grid,
        spacing: config.grid_spacing,
        from_node: 0,
        to_node: 0,
        low_confidence,
    })
}

/// Estimates the flow field of every directed edge of `graph`.
///
/// Each image is downscaled so its longest edge is at most
/// `config.max_long_edge`; an edge is aligned with both images at the
/// smaller of their two factors. Returned fields are in original pixel
/// units, indexed by edge id, and do not depend on scheduling.
pub fn estimate_graph_flows(graph: &MatchGraph, config: &AlignConfig) -> Result<Vec<FlowField>> {
    config.validate()?;
    let mut own_factor: HashMap<ImageId, f64> = HashMap::new();
    for image in graph.images() {
        if !image.has_pixels() {
            return Err(Error::MissingPixels(image.image_id));
        }
        let longest = image.width.max(image.height);
        own_factor.insert(image.image_id, (config.max_long_edge as f64 / longest as f64).min(1.0));
    }
    let edge_factor = |e: usize| {
        let edge = graph.edge(e);
        let a = own_factor[&graph.node(edge.from_node).image_id];
        let b = own_factor[&graph.node(edge.to_node).image_id];
        a.min(b)
    };

    let mut needed: Vec<(ImageId, u64)> = Vec::new();
    for e in 0..graph.num_edges() {
        let f = edge_factor(e).to_bits();
        let edge = graph.edge(e);
        needed.push((graph.node(edge.from_node).image_id, f));
        needed.push((graph.node(edge.to_node).image_id, f));
    }
    needed.sort_unstable();
    needed.dedup();
    let scaled: HashMap<(ImageId, u64), ImageRef> = needed
        .par_iter()
        .map(|&(id, bits)| {
            let image = graph.image(id).expect("edge endpoints reference known images");
            Ok(((id, bits), rescale(image, f64::from_bits(bits))?))
        })
        .collect::<Result<_>>()?;

    (0..graph.num_edges())
        .into_par_iter()
        .map(|e| {
            let edge = graph.edge(e);
            let nu = graph.node(edge.from_node);
            let nv = graph.node(edge.to_node);
            let f = edge_factor(e);
            let img_u = &scaled[&(nu.image_id, f.to_bits())];
            let img_v = &scaled[&(nv.image_id, f.to_bits())];
            let mut local = config.clone();
            local.grid_spacing = config.grid_spacing * f;
            let mut field =
                estimate_flow_field(img_u, nu.initial_position * f, img_v, nv.initial_position * f, &local)?;
            for g in &mut field.grid {
                *g /= f;
            }
            field.spacing = config.grid_spacing;
            field.from_node = edge.from_node;
            field.to_node = edge.to_node;
            Ok(field)
        })
        .collect()
}

fn rescale(image: &ImageRef, factor: f64) -> Result<ImageRef> {
    if factor >= 1.0 {
        return Ok(image.clone());
    }
    let longest = image.width.max(image.height);
    Ok(resize_to_max_edge(image, (longest as f64 * factor).round() as usize)?.0)
}
