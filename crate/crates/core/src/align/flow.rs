use nalgebra::Matrix2;

use crate::graph::NodeId;
use crate::Point2;

/// Node offsets of the 3x3 grid in storage order: `g_y` outer, `g_x` inner.
pub const GRID_NODES: [(i32, i32); 9] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (0, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

/// Local flow from the neighborhood of one keypoint to its match, sampled on
/// a 3x3 grid of offsets `g * spacing` around the source keypoint.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    /// Displacements in storage order of [`GRID_NODES`].
    pub grid: [Point2; 9],
    pub spacing: f64,
    pub from_node: NodeId,
    pub to_node: NodeId,
    pub low_confidence: bool,
}

impl FlowField {
    pub fn constant(from_node: NodeId, to_node: NodeId, spacing: f64, d: Point2) -> Self {
        Self {
            grid: [d; 9],
            spacing,
            from_node,
            to_node,
            low_confidence: false,
        }
    }

    #[inline]
    pub fn node(&self, gx: i32, gy: i32) -> Point2 {
        self.grid[((gy + 1) * 3 + gx + 1) as usize]
    }

    #[inline]
    pub fn center(&self) -> Point2 {
        self.grid[4]
    }

    pub fn is_finite(&self) -> bool {
        self.spacing.is_finite() && self.grid.iter().all(|g| g.x.is_finite() && g.y.is_finite())
    }
}

/// Quadratic Lagrange basis on nodes `-1, 0, 1` and its derivative.
#[inline]
fn basis(t: f64) -> ([f64; 3], [f64; 3]) {
    (
        [0.5 * t * (t - 1.0), 1.0 - t * t, 0.5 * t * (t + 1.0)],
        [t - 0.5, -2.0 * t, t + 0.5],
    )
}

/// Flow at `offset` from the source keypoint and its 2x2 jacobian.
///
/// Offsets beyond the grid are clamped to its border, where the jacobian
/// column of the clamped axis is zero.
pub fn eval_flow(field: &FlowField, offset: Point2) -> (Point2, Matrix2<f64>) {
    let s = field.spacing;
    let (tx, x_inside) = clamp_axis(offset.x, s);
    let (ty, y_inside) = clamp_axis(offset.y, s);
    let (bx, dbx) = basis(tx);
    let (by, dby) = basis(ty);

    let mut value = Point2::zeros();
    let mut d_dx = Point2::zeros();
    let mut d_dy = Point2::zeros();
    for (row, (&wy, &dwy)) in by.iter().zip(&dby).enumerate() {
        for (col, (&wx, &dwx)) in bx.iter().zip(&dbx).enumerate() {
            let g = field.grid[row * 3 + col];
            value += g * (wx * wy);
            d_dx += g * (dwx * wy);
            d_dy += g * (wx * dwy);
        }
    }
    let jx = if x_inside { d_dx / s } else { Point2::zeros() };
    let jy = if y_inside { d_dy / s } else { Point2::zeros() };
    (value, Matrix2::from_columns(&[jx, jy]))
}

#[inline]
fn clamp_axis(v: f64, spacing: f64) -> (f64, bool) {
    if v.abs() <= spacing {
        (v / spacing, true)
    } else {
        (v.signum(), false)
    }
}
