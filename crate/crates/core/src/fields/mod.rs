//! Complex node fields, reflection extensions across x_n = 0 and discrete
//! differential operators.

mod hodge;
mod sobolev;

use std::sync::Arc;

pub use hodge::{hodge_decompose, HodgeDecomposition};
pub use sobolev::{
    interpolation_bound, interpolation_bound_of, parseval_split, semiclassical_h1_norm, sobolev_norm,
    sobolev_norm_periodic, Embedding, Spectrum, PAD_FACTOR,
};

use crate::domain::{reflect_index, Grid};
use crate::error::{Error, Result};
use crate::stencil;
use crate::C64;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Complex value per grid node.
#[derive(Clone, Debug)]
pub struct ScalarField {
    pub grid: Arc<Grid>,
    pub values: Vec<C64>,
}

/// n complex components per grid node.
#[derive(Clone, Debug)]
pub struct VectorField {
    pub grid: Arc<Grid>,
    pub comps: Vec<Vec<C64>>,
}

/// Components (j,k), j < k, of an antisymmetric tensor, stored in
/// lexicographic pair order.
#[derive(Clone, Debug)]
pub struct TwoForm {
    pub grid: Arc<Grid>,
    pub comps: Vec<Vec<C64>>,
}

/// Anything with component arrays on a grid.
pub trait Components {
    fn grid(&self) -> &Grid;
    fn components(&self) -> Vec<&[C64]>;
}

impl ScalarField {
    pub fn zeros(grid: Arc<Grid>) -> Self {
        let values = vec![ZERO; grid.len()];
        ScalarField { grid, values }
    }
    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(&[f64]) -> C64) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.coords(i))).collect();
        ScalarField { grid, values }
    }
    pub fn new(grid: Arc<Grid>, values: Vec<C64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch(format!("{} values for {} nodes", values.len(), grid.len())));
        }
        Ok(ScalarField { grid, values })
    }
    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
    /// Trapezoid L² norm.
    pub fn l2_norm(&self) -> f64 {
        let w = self.grid.volume_weights();
        self.values.iter().zip(&w).map(|(v, w)| w * v.norm_sqr()).sum::<f64>().sqrt()
    }
    pub fn map(&self, f: impl Fn(C64) -> C64) -> Self {
        ScalarField { grid: self.grid.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }
    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }
}

impl VectorField {
    pub fn zeros(grid: Arc<Grid>) -> Self {
        let comps = vec![vec![ZERO; grid.len()]; grid.dim()];
        VectorField { grid, comps }
    }
    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(&[f64]) -> Vec<C64>) -> Self {
        let n = grid.dim();
        let mut comps = vec![Vec::with_capacity(grid.len()); n];
        for i in 0..grid.len() {
            let v = f(&grid.coords(i));
            assert_eq!(v.len(), n, "vector field component count");
            for (c, x) in comps.iter_mut().zip(v) {
                c.push(x);
            }
        }
        VectorField { grid, comps }
    }
    pub fn new(grid: Arc<Grid>, comps: Vec<Vec<C64>>) -> Result<Self> {
        if comps.len() != grid.dim() || comps.iter().any(|c| c.len() != grid.len()) {
            return Err(Error::DimensionMismatch("vector field shape".into()));
        }
        Ok(VectorField { grid, comps })
    }
    pub fn dim(&self) -> usize {
        self.comps.len()
    }
    pub fn at(&self, idx: usize) -> Vec<C64> {
        self.comps.iter().map(|c| c[idx]).collect()
    }
    /// Max over nodes of the Euclidean length.
    pub fn max_abs(&self) -> f64 {
        (0..self.grid.len()).map(|i| self.comps.iter().map(|c| c[i].norm_sqr()).sum::<f64>().sqrt()).fold(0.0, f64::max)
    }
    pub fn l2_norm(&self) -> f64 {
        let w = self.grid.volume_weights();
        self.comps.iter().map(|c| c.iter().zip(&w).map(|(v, w)| w * v.norm_sqr()).sum::<f64>()).sum::<f64>().sqrt()
    }
    pub fn sub(&self, other: &VectorField) -> VectorField {
        let comps =
            self.comps.iter().zip(&other.comps).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect()).collect();
        VectorField { grid: self.grid.clone(), comps }
    }
    pub fn conj(&self) -> VectorField {
        let comps = self.comps.iter().map(|c| c.iter().map(|v| v.conj()).collect()).collect();
        VectorField { grid: self.grid.clone(), comps }
    }
    pub fn scale(&self, s: f64) -> VectorField {
        let comps = self.comps.iter().map(|c| c.iter().map(|v| v * s).collect()).collect();
        VectorField { grid: self.grid.clone(), comps }
    }
}

impl TwoForm {
    /// Flat index of the pair (j,k), j < k, among n(n−1)/2 components.
    pub fn pair_index(n: usize, j: usize, k: usize) -> usize {
        debug_assert!(j < k && k < n);
        j * n - j * (j + 1) / 2 + (k - j - 1)
    }
    pub fn pairs(n: usize) -> Vec<(usize, usize)> {
        (0..n).flat_map(|j| (j + 1..n).map(move |k| (j, k))).collect()
    }
    /// Full antisymmetric component (dA)_{jk} for any j, k.
    pub fn get(&self, j: usize, k: usize, idx: usize) -> C64 {
        let n = self.grid.dim();
        match j.cmp(&k) {
            std::cmp::Ordering::Less => self.comps[Self::pair_index(n, j, k)][idx],
            std::cmp::Ordering::Greater => -self.comps[Self::pair_index(n, k, j)][idx],
            std::cmp::Ordering::Equal => ZERO,
        }
    }
    pub fn max_abs(&self) -> f64 {
        (0..self.grid.len()).map(|i| self.comps.iter().map(|c| c[i].norm_sqr()).sum::<f64>().sqrt()).fold(0.0, f64::max)
    }
}

impl Components for ScalarField {
    fn grid(&self) -> &Grid {
        &self.grid
    }
    fn components(&self) -> Vec<&[C64]> {
        vec![&self.values]
    }
}
impl Components for VectorField {
    fn grid(&self) -> &Grid {
        &self.grid
    }
    fn components(&self) -> Vec<&[C64]> {
        self.comps.iter().map(|c| c.as_slice()).collect()
    }
}
impl Components for TwoForm {
    fn grid(&self) -> &Grid {
        &self.grid
    }
    fn components(&self) -> Vec<&[C64]> {
        self.comps.iter().map(|c| c.as_slice()).collect()
    }
}

fn doubled_of(grid: &Grid) -> Result<Arc<Grid>> {
    Ok(Arc::new(grid.doubled()?))
}

/// Copy of Ω values onto the doubled grid, `mirror` applied to values
/// pulled from x* for x_n > 0 and `on_plane` applied on x_n = 0.
fn reflect_values(grid: &Grid, doubled: &Grid, vals: &[C64], mirror: f64, on_plane: Option<C64>) -> Vec<C64> {
    let n = grid.dim();
    let mid = grid.counts()[n - 1] - 1;
    let mut out = vec![ZERO; doubled.len()];
    for (idx, v) in vals.iter().enumerate() {
        out[grid.to_doubled(idx, doubled)] = *v;
    }
    for (idx, o) in out.clone().iter().enumerate() {
        let i = doubled.axis_index(idx, n - 1);
        if i > mid {
            out[idx] = mirror * out[reflect_index(doubled, idx)];
        } else if i == mid {
            if let Some(p) = on_plane {
                out[idx] = p;
            } else {
                out[idx] = *o;
            }
        }
    }
    out
}

/// Ã on Ω ∪ Ω*: components j < n even, component n odd (zero on x_n = 0).
pub fn extend_reflect_a(a: &VectorField) -> Result<VectorField> {
    let d = doubled_of(&a.grid)?;
    let n = a.dim();
    let comps = a
        .comps
        .iter()
        .enumerate()
        .map(|(j, c)| {
            if j + 1 == n {
                reflect_values(&a.grid, &d, c, -1.0, Some(ZERO))
            } else {
                reflect_values(&a.grid, &d, c, 1.0, None)
            }
        })
        .collect();
    Ok(VectorField { grid: d, comps })
}

/// q̃ on Ω ∪ Ω*, the even extension q̃(x*) = q̃(x).
pub fn extend_reflect_q(q: &ScalarField) -> Result<ScalarField> {
    let d = doubled_of(&q.grid)?;
    let values = reflect_values(&q.grid, &d, &q.values, 1.0, None);
    Ok(ScalarField { grid: d, values })
}

/// Discrete gradient: central inside, one-sided second order on ∂.
pub fn gradient(f: &ScalarField) -> VectorField {
    let g = &f.grid;
    let comps = (0..g.dim()).map(|k| (0..g.len()).map(|i| stencil::partial(g, &f.values, k, i)).collect()).collect();
    VectorField { grid: f.grid.clone(), comps }
}

/// Discrete divergence with the stencils of [`gradient`].
pub fn divergence(a: &VectorField) -> ScalarField {
    let g = &a.grid;
    let values = (0..g.len()).map(|i| (0..g.dim()).map(|k| stencil::partial(g, &a.comps[k], k, i)).sum()).collect();
    ScalarField { grid: a.grid.clone(), values }
}

/// (dA)_{jk} = ∂_j A_k − ∂_k A_j.
pub fn exterior_derivative(a: &VectorField) -> TwoForm {
    let g = &a.grid;
    let n = g.dim();
    let comps = TwoForm::pairs(n)
        .into_iter()
        .map(|(j, k)| {
            (0..g.len())
                .map(|i| stencil::partial(g, &a.comps[k], j, i) - stencil::partial(g, &a.comps[j], k, i))
                .collect()
        })
        .collect();
    TwoForm { grid: a.grid.clone(), comps }
}

/// Coefficients A ∈ H^s, q ∈ L^∞ with a common bound M.
#[derive(Clone, Debug)]
pub struct AdmissiblePair {
    pub a: VectorField,
    pub q: ScalarField,
    pub bound: f64,
    pub s: f64,
    pub a_hs_norm: f64,
    pub q_sup: f64,
}

impl AdmissiblePair {
    pub fn new(a: VectorField, q: ScalarField, bound: f64, s: f64) -> Result<Self> {
        let n = a.grid.dim() as f64;
        if s <= n / 2.0 + 1.0 {
            return Err(Error::InvalidArgument(format!("smoothness s = {s} must exceed n/2 + 1 = {}", n / 2.0 + 1.0)));
        }
        let a_hs_norm = sobolev_norm(&a, s);
        let q_sup = q.max_abs();
        if a_hs_norm > bound || q_sup > bound {
            return Err(Error::InvalidArgument(format!(
                "‖A‖_H^s = {a_hs_norm:.4e}, ‖q‖_∞ = {q_sup:.4e} exceed bound M = {bound}"
            )));
        }
        Ok(AdmissiblePair { a, q, bound, s, a_hs_norm, q_sup })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::build_grid;

    fn grid(c: usize) -> Arc<Grid> {
        Arc::new(build_grid(3, &[(-1.0, 1.0), (-1.0, 1.0), (-1.0, 0.0)], &[2 * c - 1, 2 * c - 1, c]).unwrap())
    }
    fn re(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    #[test]
    fn extension_examples() {
        let g = grid(5);
        let a = VectorField::from_fn(g.clone(), |_| vec![re(1.0), re(0.0), re(0.0)]);
        let e = extend_reflect_a(&a).unwrap();
        assert!(e.comps[0].iter().all(|v| *v == re(1.0)));
        let a = VectorField::from_fn(g.clone(), |_| vec![re(0.0), re(0.0), re(1.0)]);
        let e = extend_reflect_a(&a).unwrap();
        for i in 0..e.grid.len() {
            let x3 = e.grid.coord(i, 2);
            let expect = if x3 < 0.0 {
                1.0
            } else if x3 > 0.0 {
                -1.0
            } else {
                0.0
            };
            assert_eq!(e.comps[2][i], re(expect));
        }
        let a = VectorField::from_fn(g.clone(), |x| vec![re(0.0), re(0.0), re(x[2])]);
        let e = extend_reflect_a(&a).unwrap();
        for i in 0..e.grid.len() {
            assert_eq!(e.comps[2][i], re(e.grid.coord(i, 2)));
        }
        let q = ScalarField::from_fn(g.clone(), |x| re(x[2] * x[2]));
        let e = extend_reflect_q(&q).unwrap();
        for i in 0..e.grid.len() {
            let x3 = e.grid.coord(i, 2);
            assert_eq!(e.values[i], re(x3 * x3));
        }
        let q = ScalarField::from_fn(g, |x| re(x[2]));
        let e = extend_reflect_q(&q).unwrap();
        for i in 0..e.grid.len() {
            assert_eq!(e.values[i], re(-e.grid.coord(i, 2).abs()));
            assert_eq!(e.values[i], e.values[reflect_index(&e.grid, i)]);
        }
    }

    #[test]
    fn exterior_derivative_examples() {
        let g = grid(5);
        let a = VectorField::from_fn(g.clone(), |x| vec![re(x[1]), re(x[0]), re(0.0)]);
        assert!(exterior_derivative(&a).max_abs() < 1e-13);
        let a = VectorField::from_fn(g, |x| vec![re(-x[1]), re(x[0]), re(0.0)]);
        let d = exterior_derivative(&a);
        assert!(d.comps[0].iter().all(|v| (v - re(2.0)).norm() < 1e-13));
        assert!(d.comps[1].iter().chain(&d.comps[2]).all(|v| v.norm() < 1e-13));
        assert_eq!(d.get(1, 0, 3), -d.get(0, 1, 3));
    }

    #[test]
    fn exterior_derivative_second_order() {
        let mut errs = Vec::new();
        for c in [5, 9, 17] {
            let g = grid(c);
            let a = VectorField::from_fn(g.clone(), |x| {
                vec![re((x[1] * 1.3).sin() * x[2]), re((x[0] + x[2]).cos()), re((x[0] * x[1]).exp())]
            });
            let d = exterior_derivative(&a);
            let mut e: f64 = 0.0;
            for i in 0..g.len() {
                let x = g.coords(i);
                let d12 = -(x[0] + x[2]).sin() - 1.3 * (x[1] * 1.3).cos() * x[2];
                e = e.max((d.comps[0][i] - re(d12)).norm());
            }
            errs.push(e);
        }
        assert!(errs[0] / errs[1] > 3.5 && errs[1] / errs[2] > 3.5, "{errs:?}");
    }

    #[test]
    fn curl_of_gradient_vanishes_for_multilinear() {
        let g = grid(6);
        let phi = ScalarField::from_fn(g, |x| re(x[0] * x[1] * x[2] + 2.0 * x[0] * x[2] - x[1]));
        assert!(exterior_derivative(&gradient(&phi)).max_abs() < 1e-12);
    }

    #[test]
    fn pair_indexing() {
        assert_eq!(TwoForm::pairs(3), vec![(0, 1), (0, 2), (1, 2)]);
        for (p, (j, k)) in TwoForm::pairs(5).into_iter().enumerate() {
            assert_eq!(TwoForm::pair_index(5, j, k), p);
        }
    }
}
