//! Half-space box grids, the Γ₀/Γ boundary partition, the reflection
//! x ↦ (x′, −x_n) and trapezoid quadrature.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest admissible node count per axis. The 3-point one-sided normal
/// stencils plus an interior ring need at least five nodes.
pub const MIN_NODES: usize = 5;

/// Uniform tensor-product grid on an axis-aligned box.
///
/// Node `idx` has multi-index `(i_0, .., i_{n-1})` with the last axis
/// varying fastest (row-major).
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    lo: Vec<f64>,
    hi: Vec<f64>,
    counts: Vec<usize>,
    spacing: Vec<f64>,
    strides: Vec<usize>,
    interior: Vec<usize>,
    boundary: Vec<usize>,
    is_boundary: Vec<bool>,
    /// Last axis is the mirror-symmetric axis of a doubled grid.
    mirrored: bool,
}

/// Serializable grid description. Also embedded in BFLD headers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridHeader {
    pub dimension: usize,
    pub counts: Vec<usize>,
    pub extents: Vec<[f64; 2]>,
}

/// Build the grid of a half-space box Ω with top face on {x_n = 0}.
pub fn build_grid(n: usize, extents: &[(f64, f64)], counts: &[usize]) -> Result<Grid> {
    if n < 1 || extents.len() != n || counts.len() != n {
        return Err(Error::InvalidGrid(format!(
            "dimension {n} does not match {} extents and {} counts",
            extents.len(),
            counts.len()
        )));
    }
    if extents[n - 1].1 != 0.0 {
        return Err(Error::InvalidGrid(format!("top face must lie on x_n = 0, got b_n = {}", extents[n - 1].1)));
    }
    Grid::new_box(extents, counts)
}

impl Grid {
    /// Uniform grid on an arbitrary box; no half-space condition.
    pub fn new_box(extents: &[(f64, f64)], counts: &[usize]) -> Result<Grid> {
        let n = extents.len();
        if counts.len() != n || n == 0 {
            return Err(Error::InvalidGrid("extents/counts length mismatch".into()));
        }
        for (k, (&(a, b), &c)) in extents.iter().zip(counts).enumerate() {
            if !(a.is_finite() && b.is_finite()) || b <= a {
                return Err(Error::InvalidGrid(format!("axis {k}: degenerate extent ({a}, {b})")));
            }
            if c < MIN_NODES {
                return Err(Error::InvalidGrid(format!("axis {k}: {c} nodes, need at least {MIN_NODES}")));
            }
        }
        let lo: Vec<f64> = extents.iter().map(|e| e.0).collect();
        let hi: Vec<f64> = extents.iter().map(|e| e.1).collect();
        let spacing: Vec<f64> = (0..n).map(|k| (hi[k] - lo[k]) / (counts[k] - 1) as f64).collect();
        let mut strides = vec![1usize; n];
        for k in (0..n.saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * counts[k + 1];
        }
        let len: usize = counts.iter().product();
        let mut is_boundary = vec![false; len];
        let mut interior = Vec::new();
        let mut boundary = Vec::new();
        let mut mi = vec![0usize; n];
        for (idx, flag) in is_boundary.iter_mut().enumerate() {
            unravel(idx, &strides, &mut mi);
            let b = mi.iter().zip(counts).any(|(&i, &c)| i == 0 || i == c - 1);
            *flag = b;
            if b {
                boundary.push(idx);
            } else {
                interior.push(idx);
            }
        }
        Ok(Grid { lo, hi, counts: counts.to_vec(), spacing, strides, interior, boundary, is_boundary, mirrored: false })
    }

    pub fn from_header(h: &GridHeader) -> Result<Grid> {
        if h.extents.len() != h.dimension {
            return Err(Error::InvalidGrid("header dimension mismatch".into()));
        }
        let ext: Vec<(f64, f64)> = h.extents.iter().map(|e| (e[0], e[1])).collect();
        Grid::new_box(&ext, &h.counts)
    }

    pub fn header(&self) -> GridHeader {
        GridHeader {
            dimension: self.dim(),
            counts: self.counts.clone(),
            extents: self.lo.iter().zip(&self.hi).map(|(&a, &b)| [a, b]).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }
    pub fn len(&self) -> usize {
        self.is_boundary.len()
    }
    pub fn is_empty(&self) -> bool {
        self.is_boundary.is_empty()
    }
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }
    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }
    pub fn lo(&self) -> &[f64] {
        &self.lo
    }
    pub fn hi(&self) -> &[f64] {
        &self.hi
    }
    pub fn strides(&self) -> &[usize] {
        &self.strides
    }
    pub fn interior(&self) -> &[usize] {
        &self.interior
    }
    pub fn boundary(&self) -> &[usize] {
        &self.boundary
    }
    pub fn is_boundary(&self, idx: usize) -> bool {
        self.is_boundary[idx]
    }
    /// Volume of one grid cell, the product of the spacings.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }
    /// Whether Ω lies in {x_n ≤ 0} with its top face on x_n = 0.
    pub fn is_half_space(&self) -> bool {
        self.hi[self.dim() - 1] == 0.0
    }

    pub fn multi_index(&self, idx: usize, out: &mut [usize]) {
        unravel(idx, &self.strides, out);
    }
    pub fn index(&self, mi: &[usize]) -> usize {
        mi.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }
    /// Index along one axis.
    pub fn axis_index(&self, idx: usize, axis: usize) -> usize {
        (idx / self.strides[axis]) % self.counts[axis]
    }
    pub fn coord(&self, idx: usize, axis: usize) -> f64 {
        self.axis_coord(axis, self.axis_index(idx, axis))
    }
    pub fn axis_coord(&self, axis: usize, i: usize) -> f64 {
        let c = self.counts[axis];
        if self.mirrored && axis + 1 == self.dim() {
            let mid = (c - 1) / 2;
            return match i.cmp(&mid) {
                std::cmp::Ordering::Less => self.lo[axis] + i as f64 * self.spacing[axis],
                std::cmp::Ordering::Equal => 0.0,
                std::cmp::Ordering::Greater => -(self.lo[axis] + (c - 1 - i) as f64 * self.spacing[axis]),
            };
        }
        if i == c - 1 {
            self.hi[axis]
        } else {
            self.lo[axis] + i as f64 * self.spacing[axis]
        }
    }
    pub fn coords(&self, idx: usize) -> Vec<f64> {
        (0..self.dim()).map(|k| self.coord(idx, k)).collect()
    }
    /// Neighbour of `idx` shifted by `step` (±1) along `axis`, if inside.
    pub fn neighbor(&self, idx: usize, axis: usize, step: isize) -> Option<usize> {
        let i = self.axis_index(idx, axis) as isize + step;
        if i < 0 || i >= self.counts[axis] as isize {
            None
        } else {
            Some((idx as isize + step * self.strides[axis] as isize) as usize)
        }
    }

    /// Product trapezoid weights; integrates multilinear functions exactly.
    pub fn volume_weights(&self) -> Vec<f64> {
        let n = self.dim();
        let axis_w: Vec<Vec<f64>> = (0..n).map(|k| trapezoid_1d(self.counts[k], self.spacing[k])).collect();
        let mut mi = vec![0usize; n];
        (0..self.len())
            .map(|idx| {
                unravel(idx, &self.strides, &mut mi);
                mi.iter().enumerate().map(|(k, &i)| axis_w[k][i]).product()
            })
            .collect()
    }

    /// Grid of Ω ∪ Ω*: the last axis is mirrored to (a_n, −a_n) with
    /// 2N_n − 1 nodes. Node `idx` of Ω keeps its index in the doubled grid.
    pub fn doubled(&self) -> Result<Grid> {
        if !self.is_half_space() {
            return Err(Error::InvalidGrid("doubling requires top face at x_n = 0".into()));
        }
        let n = self.dim();
        let mut ext: Vec<(f64, f64)> = self.lo.iter().zip(&self.hi).map(|(&a, &b)| (a, b)).collect();
        ext[n - 1] = (self.lo[n - 1], -self.lo[n - 1]);
        let mut counts = self.counts.clone();
        counts[n - 1] = 2 * self.counts[n - 1] - 1;
        let mut g = Grid::new_box(&ext, &counts)?;
        // Mirrored coordinates are bit-exact images of the Ω coordinates.
        g.spacing[n - 1] = self.spacing[n - 1];
        g.mirrored = true;
        Ok(g)
    }

    /// Index in the doubled grid of the Ω node `idx`.
    pub fn to_doubled(&self, idx: usize, doubled: &Grid) -> usize {
        let n = self.dim();
        let mut mi = vec![0usize; n];
        self.multi_index(idx, &mut mi);
        doubled.index(&mi)
    }

    /// All 2n faces with their nodes and surface trapezoid weights.
    pub fn faces(&self) -> Vec<Face> {
        let n = self.dim();
        let mut faces = Vec::with_capacity(2 * n);
        let mut mi = vec![0usize; n];
        for axis in 0..n {
            let axis_w: Vec<Vec<f64>> = (0..n).map(|k| trapezoid_1d(self.counts[k], self.spacing[k])).collect();
            for (side, fixed) in [(-1.0, 0usize), (1.0, self.counts[axis] - 1)] {
                let mut nodes = Vec::new();
                let mut weights = Vec::new();
                for &idx in &self.boundary {
                    unravel(idx, &self.strides, &mut mi);
                    if mi[axis] != fixed {
                        continue;
                    }
                    nodes.push(idx);
                    weights.push((0..n).filter(|&k| k != axis).map(|k| axis_w[k][mi[k]]).product::<f64>());
                }
                faces.push(Face { axis, side, nodes, weights });
            }
        }
        faces
    }
}

/// One face of the box: fixed `axis`, outward normal `side`·e_axis.
#[derive(Clone, Debug)]
pub struct Face {
    pub axis: usize,
    pub side: f64,
    pub nodes: Vec<usize>,
    pub weights: Vec<f64>,
}

fn unravel(mut idx: usize, strides: &[usize], out: &mut [usize]) {
    for (o, &s) in out.iter_mut().zip(strides) {
        *o = idx / s;
        idx %= s;
    }
}

pub(crate) fn trapezoid_1d(count: usize, dx: f64) -> Vec<f64> {
    let mut w = vec![dx; count];
    w[0] = 0.5 * dx;
    w[count - 1] = 0.5 * dx;
    w
}

/// Node of the doubled grid at (x′, −x_n).
pub fn reflect_index(doubled: &Grid, idx: usize) -> usize {
    let n = doubled.dim();
    let i = doubled.axis_index(idx, n - 1);
    let j = doubled.counts()[n - 1] - 1 - i;
    (idx as isize + (j as isize - i as isize) * doubled.strides()[n - 1] as isize) as usize
}

/// Largest distance to the origin over the nodes of Ω ∪ Ω*.
pub fn enclosing_radius(grid: &Grid) -> f64 {
    // Attained at a corner of the doubled box.
    let n = grid.dim();
    let mut r2 = 0.0;
    for k in 0..n {
        let m = if k + 1 == n { grid.lo()[k].abs() } else { grid.lo()[k].abs().max(grid.hi()[k].abs()) };
        r2 += m * m;
    }
    r2.sqrt()
}

/// Γ₀ (flat top) and Γ (rest of ∂Ω) with normals and surface weights.
///
/// Nodes on the rim of the top face also belong to a side face and are
/// assigned to Γ.
#[derive(Clone, Debug)]
pub struct BoundaryPartition {
    pub gamma0: Vec<usize>,
    pub gamma: Vec<usize>,
    /// Position of each grid node in `Grid::boundary()`, or `usize::MAX`.
    pub slot: Vec<usize>,
    /// Outward unit normal per boundary node, in `Grid::boundary()` order.
    pub normals: Vec<Vec<f64>>,
    /// Surface trapezoid weight per boundary node (sum over incident faces).
    pub weights: Vec<f64>,
    pub faces: Vec<Face>,
}

impl BoundaryPartition {
    pub fn new(grid: &Grid) -> BoundaryPartition {
        let n = grid.dim();
        let nb = grid.boundary().len();
        let mut slot = vec![usize::MAX; grid.len()];
        for (k, &idx) in grid.boundary().iter().enumerate() {
            slot[idx] = k;
        }
        let faces = grid.faces();
        let mut normals = vec![vec![0.0; n]; nb];
        let mut weights = vec![0.0; nb];
        for f in &faces {
            for (&idx, &w) in f.nodes.iter().zip(&f.weights) {
                let s = slot[idx];
                normals[s][f.axis] += f.side;
                weights[s] += w;
            }
        }
        for nu in &mut normals {
            let len = nu.iter().map(|v| v * v).sum::<f64>().sqrt();
            nu.iter_mut().for_each(|v| *v /= len);
        }
        let top = grid.counts()[n - 1] - 1;
        let mut gamma0 = Vec::new();
        let mut gamma = Vec::new();
        let mut mi = vec![0usize; n];
        for &idx in grid.boundary() {
            grid.multi_index(idx, &mut mi);
            let on_top = mi[n - 1] == top && grid.is_half_space();
            let on_side = (0..n)
                .any(|k| (k + 1 < n && (mi[k] == 0 || mi[k] == grid.counts()[k] - 1)) || (k + 1 == n && mi[k] == 0));
            if on_top && !on_side {
                gamma0.push(idx);
            } else {
                gamma.push(idx);
            }
        }
        BoundaryPartition { gamma0, gamma, slot, normals, weights, faces }
    }

    pub fn normal(&self, idx: usize) -> &[f64] {
        &self.normals[self.slot[idx]]
    }
    pub fn weight(&self, idx: usize) -> f64 {
        self.weights[self.slot[idx]]
    }
    pub fn in_gamma0(&self, grid: &Grid, idx: usize) -> bool {
        let n = grid.dim();
        grid.is_boundary(idx)
            && grid.axis_index(idx, n - 1) == grid.counts()[n - 1] - 1
            && (0..n - 1).all(|k| {
                let i = grid.axis_index(idx, k);
                i != 0 && i != grid.counts()[k] - 1
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_grid() -> Grid {
        build_grid(3, &[(-1.0, 1.0), (-1.0, 1.0), (-1.0, 0.0)], &[17, 17, 9]).unwrap()
    }

    #[test]
    fn default_box_counts_and_spacing() {
        let g = default_grid();
        assert_eq!(g.len(), 2601);
        assert_eq!(g.spacing(), &[0.125, 0.125, 0.125]);
        assert_eq!(g.interior().len() + g.boundary().len(), g.len());
        assert_eq!(g.interior().len(), 15 * 15 * 7);
    }

    #[test]
    fn rejects_top_off_plane_and_small_counts() {
        assert!(build_grid(3, &[(-1.0, 1.0), (-1.0, 1.0), (-1.0, 0.5)], &[17, 17, 9]).is_err());
        assert!(build_grid(3, &[(-1.0, 1.0), (-1.0, 1.0), (-1.0, 0.0)], &[17, 4, 9]).is_err());
        assert!(build_grid(3, &[(-1.0, 1.0), (1.0, 1.0), (-1.0, 0.0)], &[17, 17, 9]).is_err());
    }

    #[test]
    fn volume_of_constant_is_four() {
        let g = default_grid();
        let v: f64 = g.volume_weights().iter().sum();
        assert_eq!(v, 4.0);
    }

    #[test]
    fn trapezoid_integrates_multilinear_exactly() {
        let g = build_grid(3, &[(0.0, 1.0), (-0.5, 1.5), (-2.0, 0.0)], &[6, 7, 5]).unwrap();
        let w = g.volume_weights();
        let s: f64 = (0..g.len())
            .map(|i| {
                let x = g.coords(i);
                w[i] * (1.0 + 2.0 * x[0] * x[1] - x[1] * x[2] + x[0] * x[1] * x[2])
            })
            .sum();
        // ∫ over [0,1]×[-0.5,1.5]×[-2,0]
        let exact = 4.0 + 2.0 + 2.0 - 1.0;
        assert!((s - exact).abs() < 1e-12, "{s} vs {exact}");
    }

    #[test]
    fn face_weights_sum_to_areas() {
        let g = default_grid();
        let faces = g.faces();
        let areas: Vec<f64> = faces.iter().map(|f| f.weights.iter().sum()).collect();
        let expect = [2.0, 2.0, 2.0, 2.0, 4.0, 4.0];
        for (a, e) in areas.iter().zip(expect) {
            assert!((a - e).abs() < 1e-14);
        }
        let bp = BoundaryPartition::new(&g);
        let total: f64 = bp.weights.iter().sum();
        assert!((total - 16.0).abs() < 1e-13);
    }

    #[test]
    fn partition_is_disjoint_cover() {
        let g = default_grid();
        let bp = BoundaryPartition::new(&g);
        assert_eq!(bp.gamma0.len() + bp.gamma.len(), g.boundary().len());
        assert_eq!(bp.gamma0.len(), 15 * 15);
        for &i in &bp.gamma0 {
            assert_eq!(bp.normal(i), &[0.0, 0.0, 1.0]);
            assert!(bp.in_gamma0(&g, i));
        }
        for &i in &bp.gamma {
            assert!(!bp.in_gamma0(&g, i));
            let nu = bp.normal(i);
            let len: f64 = nu.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((len - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn reflection_is_node_exact_involution() {
        let g = default_grid();
        let d = g.doubled().unwrap();
        assert_eq!(d.counts(), &[17, 17, 17]);
        let p = d.index(&[12, 8, 6]);
        assert_eq!(d.coords(p), vec![0.5, 0.0, -0.25]);
        assert_eq!(d.coords(reflect_index(&d, p)), vec![0.5, 0.0, 0.25]);
        let mut fixed = 0;
        for i in 0..d.len() {
            let r = reflect_index(&d, i);
            assert_eq!(reflect_index(&d, r), i);
            let (x, y) = (d.coords(i), d.coords(r));
            assert_eq!(x[2], -y[2]);
            if r == i {
                fixed += 1;
                assert_eq!(x[2], 0.0);
            }
        }
        assert_eq!(fixed, 17 * 17);
        for i in 0..g.len() {
            assert_eq!(g.coords(i), d.coords(g.to_doubled(i, &d)));
        }
    }

    #[test]
    fn radius_of_doubled_boxes() {
        let r = enclosing_radius(&default_grid());
        assert!((r - 3f64.sqrt()).abs() < 1e-15);
        let g = build_grid(3, &[(0.0, 1.0), (0.0, 1.0), (-1.0, 0.0)], &[5, 5, 5]).unwrap();
        assert!((enclosing_radius(&g) - 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn header_roundtrip() {
        let g = default_grid();
        assert_eq!(Grid::from_header(&g.header()).unwrap(), g);
    }
}
