//! Finite-difference stencils shared by the field, forward and dtn code.

use crate::domain::Grid;
use crate::C64;

/// ∂_axis f at `idx`: central where the node is interior along `axis`,
/// one-sided second order (3 points) at the two ends.
pub fn partial(grid: &Grid, f: &[C64], axis: usize, idx: usize) -> C64 {
    let i = grid.axis_index(idx, axis);
    let s = grid.strides()[axis];
    let dx = grid.spacing()[axis];
    let last = grid.counts()[axis] - 1;
    if i == 0 {
        (-3.0 * f[idx] + 4.0 * f[idx + s] - f[idx + 2 * s]) / (2.0 * dx)
    } else if i == last {
        (3.0 * f[idx] - 4.0 * f[idx - s] + f[idx - 2 * s]) / (2.0 * dx)
    } else {
        (f[idx + s] - f[idx - s]) / (2.0 * dx)
    }
}

/// 7-point (2n+1) Laplacian at a node whose neighbours all exist.
pub fn laplacian(grid: &Grid, f: &[C64], idx: usize) -> C64 {
    let mut acc = C64::new(0.0, 0.0);
    for (k, (&s, &dx)) in grid.strides().iter().zip(grid.spacing()).enumerate() {
        debug_assert!(grid.axis_index(idx, k) > 0 && grid.axis_index(idx, k) + 1 < grid.counts()[k]);
        acc += (f[idx + s] - 2.0 * f[idx] + f[idx - s]) / (dx * dx);
    }
    acc
}

/// Outward normal derivative at a boundary node, ν·∇ with ν the
/// (averaged) unit normal and each axis derivative one-sided.
pub fn normal_derivative(grid: &Grid, f: &[C64], idx: usize, normal: &[f64]) -> C64 {
    let mut acc = C64::new(0.0, 0.0);
    for (k, &nk) in normal.iter().enumerate() {
        if nk != 0.0 {
            acc += nk * partial(grid, f, k, idx);
        }
    }
    acc
}

/// Rows of ∂_axis at `idx` as (node, coefficient) pairs.
pub fn partial_row(grid: &Grid, axis: usize, idx: usize) -> Vec<(usize, f64)> {
    let i = grid.axis_index(idx, axis);
    let s = grid.strides()[axis];
    let h2 = 2.0 * grid.spacing()[axis];
    let last = grid.counts()[axis] - 1;
    if i == 0 {
        vec![(idx, -3.0 / h2), (idx + s, 4.0 / h2), (idx + 2 * s, -1.0 / h2)]
    } else if i == last {
        vec![(idx, 3.0 / h2), (idx - s, -4.0 / h2), (idx - 2 * s, 1.0 / h2)]
    } else {
        vec![(idx + s, 1.0 / h2), (idx - s, -1.0 / h2)]
    }
}
