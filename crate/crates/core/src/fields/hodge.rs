//! Hodge split A = A_sol + ∇φ with φ = 0 on the boundary.
//!
//! The Poisson operator is div∘∇ built from the same stencils as
//! [`divergence`](super::divergence) and [`gradient`](super::gradient), so
//! the discrete divergence of A_sol vanishes at interior nodes up to the
//! solver residual.

use super::{divergence, gradient, ScalarField, VectorField};
use crate::error::{Error, Result};
use crate::sparse::SparseSystem;
use crate::stencil;
use crate::C64;

#[derive(Clone, Debug)]
pub struct HodgeDecomposition {
    pub solenoidal: VectorField,
    pub potential: ScalarField,
    /// Relative residual of the Poisson solve.
    pub residual: f64,
}

pub fn hodge_decompose(a: &VectorField) -> Result<HodgeDecomposition> {
    let g = &a.grid;
    let n = g.dim();
    let interior = g.interior();
    let mut col = vec![usize::MAX; g.len()];
    for (k, &i) in interior.iter().enumerate() {
        col[i] = k;
    }
    let rows: Vec<Vec<(usize, C64)>> = interior
        .iter()
        .map(|&m| {
            let mut row = Vec::new();
            for k in 0..n {
                // ∂_k at m is central: (G_k φ)(m ± e_k) / (±2Δ)
                let s = g.strides()[k];
                let h2 = 2.0 * g.spacing()[k];
                for (p, sign) in [(m + s, 1.0), (m - s, -1.0)] {
                    for (node, c) in stencil::partial_row(g, k, p) {
                        if col[node] != usize::MAX {
                            row.push((col[node], C64::new(sign * c / h2, 0.0)));
                        }
                    }
                }
            }
            row
        })
        .collect();
    let sys = SparseSystem::from_rows(interior.len(), rows);
    let div = divergence(a);
    let rhs: Vec<C64> = interior.iter().map(|&i| div.values[i]).collect();
    let (x, residual) = sys.solve_refined(&rhs, false)?;
    if residual > 1e-10 {
        return Err(Error::SolveFailed { residual, target: 1e-10 });
    }
    let mut potential = ScalarField::zeros(a.grid.clone());
    for (k, &i) in interior.iter().enumerate() {
        potential.values[i] = x[k];
    }
    let grad = gradient(&potential);
    let solenoidal = a.sub(&grad);
    Ok(HodgeDecomposition { solenoidal, potential, residual })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;
    use std::sync::Arc;

    use super::*;
    use crate::domain::{build_grid, Grid};

    fn grid(c: usize) -> Arc<Grid> {
        Arc::new(build_grid(3, &[(-1.0, 1.0), (-1.0, 1.0), (-1.0, 0.0)], &[2 * c - 1, 2 * c - 1, c]).unwrap())
    }
    fn re(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    fn psi(x: &[f64]) -> f64 {
        (PI * x[0]).sin() * (PI * x[1]).sin() * (PI * x[2]).sin()
    }
    fn grad_psi(x: &[f64]) -> Vec<C64> {
        let (s0, s1, s2) = ((PI * x[0]).sin(), (PI * x[1]).sin(), (PI * x[2]).sin());
        let (c0, c1, c2) = ((PI * x[0]).cos(), (PI * x[1]).cos(), (PI * x[2]).cos());
        vec![re(PI * c0 * s1 * s2), re(PI * s0 * c1 * s2), re(PI * s0 * s1 * c2)]
    }

    #[test]
    fn pure_gradient_second_order() {
        let mut errs = Vec::new();
        for c in [5, 9, 17] {
            let g = grid(c);
            let a = VectorField::from_fn(g.clone(), grad_psi);
            let h = hodge_decompose(&a).unwrap();
            let exact = ScalarField::from_fn(g, |x| re(psi(x)));
            let diff = ScalarField {
                grid: exact.grid.clone(),
                values: h.potential.values.iter().zip(&exact.values).map(|(a, b)| a - b).collect(),
            };
            errs.push(diff.l2_norm() / exact.l2_norm());
            assert!(h.solenoidal.l2_norm() < 0.2 * a.l2_norm());
        }
        assert!(errs[1] / errs[2] > 3.5, "{errs:?}");
        assert!(errs[2] < 0.01);
    }

    #[test]
    fn rotation_is_solenoidal() {
        let g = grid(9);
        let a = VectorField::from_fn(g, |x| vec![re(-x[1]), re(x[0]), re(0.0)]);
        let h = hodge_decompose(&a).unwrap();
        assert!(h.potential.max_abs() < 1e-12);
        assert!(h.solenoidal.sub(&a).max_abs() < 1e-12);
    }

    #[test]
    fn roundtrip_and_solenoidality() {
        let g = grid(9);
        let a = VectorField::from_fn(g.clone(), |x| {
            vec![
                C64::new((2.0 * x[0] + x[2]).sin(), x[1]),
                re(x[0] * x[1] * x[2]),
                C64::new(x[2].cos(), (x[0] - x[1]).exp()),
            ]
        });
        let h = hodge_decompose(&a).unwrap();
        let div = divergence(&h.solenoidal);
        let dn: f64 = g.interior().iter().map(|&i| div.values[i].norm_sqr() * g.cell_volume()).sum::<f64>().sqrt();
        assert!(dn <= 1e-8 * a.l2_norm(), "{dn}");
        let back = h.solenoidal.sub(&gradient(&h.potential).scale(-1.0));
        assert!(back.sub(&a).l2_norm() <= 1e-8 * a.l2_norm());
        for &b in g.boundary() {
            assert_eq!(h.potential.values[b], re(0.0));
        }
    }
}
