//! The discrete operator Δ² + A·D + q with D = −i∇, its Navier solver in
//! the split unknowns (u, w = Δu), adjoint coefficients, the Assumption-1
//! margin and the Green-identity residual.

use std::sync::{Arc, OnceLock};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::domain::{BoundaryPartition, Grid};
use crate::error::{Error, Result};
use crate::fields::{divergence, ScalarField, VectorField};
use crate::sparse::{l2, SparseSystem};
use crate::stencil;
use crate::C64;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Relative Assumption-1 margin below which solves are refused.
pub const MARGIN_THRESHOLD: f64 = 1e-8;
/// Relative algebraic residual required of every Navier solve.
pub const SOLVE_TOLERANCE: f64 = 1e-10;

/// Smallest singular value of the assembled matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Margin {
    pub sigma_min: f64,
    pub norm: f64,
    pub converged: bool,
}

impl Margin {
    pub fn relative(&self) -> f64 {
        self.sigma_min / self.norm
    }
}

/// Assembled split system for interior nodes, unknown 2k = u, 2k+1 = w.
pub struct OperatorHandle {
    pub grid: Arc<Grid>,
    pub a: VectorField,
    pub q: ScalarField,
    pub partition: Arc<BoundaryPartition>,
    slot: Vec<usize>,
    system: SparseSystem,
    margin: OnceLock<std::result::Result<Margin, String>>,
}

impl std::fmt::Debug for OperatorHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OperatorHandle").field("unknowns", &self.system.dim()).finish()
    }
}

pub fn assemble(grid: Arc<Grid>, a: &VectorField, q: &ScalarField) -> Result<OperatorHandle> {
    let n = grid.dim();
    if a.grid.as_ref() != grid.as_ref() || q.grid.as_ref() != grid.as_ref() || a.dim() != n {
        return Err(Error::DimensionMismatch("coefficients are not defined on the operator grid".into()));
    }
    let mut slot = vec![usize::MAX; grid.len()];
    for (k, &i) in grid.interior().iter().enumerate() {
        slot[i] = k;
    }
    let mut rows = Vec::with_capacity(2 * grid.interior().len());
    for &m in grid.interior() {
        let k = slot[m];
        let mut lap = vec![(2 * k + 1, C64::new(-1.0, 0.0))];
        let mut bih = vec![(2 * k, q.values[m])];
        for j in 0..n {
            let s = grid.strides()[j];
            let dx = grid.spacing()[j];
            let c = C64::new(1.0 / (dx * dx), 0.0);
            lap.push((2 * k, -2.0 * c));
            bih.push((2 * k + 1, -2.0 * c));
            let drift = -I * a.comps[j][m] / (2.0 * dx);
            for (p, sign) in [(m + s, 1.0), (m - s, -1.0)] {
                let sp = slot[p];
                if sp != usize::MAX {
                    lap.push((2 * sp, c));
                    bih.push((2 * sp + 1, c));
                    bih.push((2 * sp, sign * drift));
                }
            }
        }
        rows.push(lap);
        rows.push(bih);
    }
    let system = SparseSystem::from_rows(rows.len(), rows);
    let partition = Arc::new(BoundaryPartition::new(&grid));
    Ok(OperatorHandle { grid, a: a.clone(), q: q.clone(), partition, slot, system, margin: OnceLock::new() })
}

impl OperatorHandle {
    pub fn unknowns(&self) -> usize {
        self.system.dim()
    }

    /// SHA-256 over the CSR arrays; equal for bitwise equal matrices.
    pub fn matrix_hash(&self) -> String {
        let (rp, cols, vals) = self.system.csr();
        let mut h = Sha256::new();
        for r in rp {
            h.update((*r as u64).to_le_bytes());
        }
        for c in cols {
            h.update((*c as u64).to_le_bytes());
        }
        for v in vals {
            h.update(v.re.to_le_bytes());
            h.update(v.im.to_le_bytes());
        }
        hex(&h.finalize())
    }

    /// Hash of the coefficient values.
    pub fn coefficient_hash(&self) -> String {
        let mut h = Sha256::new();
        for c in self.a.comps.iter().chain(std::iter::once(&self.q.values)) {
            for v in c {
                h.update(v.re.to_le_bytes());
                h.update(v.im.to_le_bytes());
            }
        }
        hex(&h.finalize())
    }

    /// Right-hand side of the split system for boundary data (f, g) given
    /// in `Grid::boundary()` order and interior source `r` per interior node.
    fn rhs(&self, f: &[C64], g: &[C64], r: Option<&[C64]>) -> Vec<C64> {
        let grid = &self.grid;
        let n = grid.dim();
        let mut b = vec![ZERO; self.unknowns()];
        for (k, &m) in grid.interior().iter().enumerate() {
            if let Some(r) = r {
                b[2 * k + 1] = r[k];
            }
            for j in 0..n {
                let s = grid.strides()[j];
                let dx = grid.spacing()[j];
                let c = 1.0 / (dx * dx);
                let drift = -I * self.a.comps[j][m] / (2.0 * dx);
                for (p, sign) in [(m + s, 1.0), (m - s, -1.0)] {
                    if self.slot[p] == usize::MAX {
                        let bs = self.partition.slot[p];
                        b[2 * k] -= c * f[bs];
                        b[2 * k + 1] -= c * g[bs] + sign * drift * f[bs];
                    }
                }
            }
        }
        b
    }

    /// Assumption-1 margin, computed once and cached.
    pub fn margin(&self) -> Result<Margin> {
        self.margin
            .get_or_init(|| {
                let norm = self.system.norm_2(60);
                match self.system.smallest_singular_value(400, 1e-5) {
                    Ok(Some(s)) => Ok(Margin { sigma_min: s, norm, converged: true }),
                    Ok(None) => {
                        let s = self.system.smallest_singular_value(1, 0.0).ok().flatten().unwrap_or(0.0);
                        Ok(Margin { sigma_min: s, norm, converged: false })
                    }
                    // A failed factorization means an exactly singular matrix.
                    Err(_) => Ok(Margin { sigma_min: 0.0, norm, converged: true }),
                }
            })
            .clone()
            .map_err(Error::Numerical)
    }

    fn gate(&self) -> Result<()> {
        let m = self.margin()?;
        if !(m.relative() >= MARGIN_THRESHOLD) {
            return Err(Error::Assumption1Violated { margin: m.relative(), threshold: MARGIN_THRESHOLD });
        }
        Ok(())
    }

    /// Solve for several boundary data sets at once; (f, g) per set in
    /// `Grid::boundary()` order. Returns (u, w) on all nodes.
    pub fn solve_boundary_many(&self, data: &[(Vec<C64>, Vec<C64>)]) -> Result<Vec<(Vec<C64>, Vec<C64>)>> {
        self.gate()?;
        let rhs: Vec<Vec<C64>> = data.iter().map(|(f, g)| self.rhs(f, g, None)).collect();
        let xs = self.system.solve_many(&rhs, false)?;
        let mut out = Vec::with_capacity(data.len());
        for ((x, b), (f, g)) in xs.into_iter().zip(&rhs).zip(data) {
            let x = self.check_residual(x, b)?;
            out.push(self.scatter(&x, f, g));
        }
        Ok(out)
    }

    fn check_residual(&self, mut x: Vec<C64>, b: &[C64]) -> Result<Vec<C64>> {
        let bn = l2(b);
        if bn == 0.0 {
            return Ok(x);
        }
        let res = |x: &[C64]| {
            let r: Vec<C64> = self.system.matvec(x).iter().zip(b).map(|(a, c)| a - c).collect();
            (l2(&r) / bn, r)
        };
        let (mut rel, r) = res(&x);
        if rel > SOLVE_TOLERANCE {
            let dx = self.system.solve_many(&[r], false)?.pop().unwrap();
            x.iter_mut().zip(&dx).for_each(|(a, d)| *a -= d);
            rel = res(&x).0;
        }
        if rel > SOLVE_TOLERANCE {
            return Err(Error::SolveFailed { residual: rel, target: SOLVE_TOLERANCE });
        }
        Ok(x)
    }

    fn scatter(&self, x: &[C64], f: &[C64], g: &[C64]) -> (Vec<C64>, Vec<C64>) {
        let mut u = vec![ZERO; self.grid.len()];
        let mut w = vec![ZERO; self.grid.len()];
        for (k, &m) in self.grid.interior().iter().enumerate() {
            u[m] = x[2 * k];
            w[m] = x[2 * k + 1];
        }
        for (bs, &b) in self.grid.boundary().iter().enumerate() {
            u[b] = f[bs];
            w[b] = g[bs];
        }
        (u, w)
    }

    /// (L u)(m) at interior nodes given u on all nodes and w = Δu on ∂Ω.
    pub fn apply(&self, u: &ScalarField, g: &ScalarField) -> ScalarField {
        let grid = &self.grid;
        let mut w = vec![ZERO; grid.len()];
        for &m in grid.interior() {
            w[m] = stencil::laplacian(grid, &u.values, m);
        }
        for &b in grid.boundary() {
            w[b] = g.values[b];
        }
        let mut out = ScalarField::zeros(self.grid.clone());
        for &m in grid.interior() {
            let mut acc = stencil::laplacian(grid, &w, m) + self.q.values[m] * u.values[m];
            for j in 0..grid.dim() {
                let s = grid.strides()[j];
                acc += -I * self.a.comps[j][m] * (u.values[m + s] - u.values[m - s]) / (2.0 * grid.spacing()[j]);
            }
            out.values[m] = acc;
        }
        out
    }
}

/// Solve Δ²u + A·Du + qu = rhs with u = f, Δu = g on ∂Ω.
pub fn solve_navier(
    op: &OperatorHandle,
    f: &ScalarField,
    g: &ScalarField,
    rhs: Option<&ScalarField>,
) -> Result<(ScalarField, ScalarField)> {
    op.gate()?;
    let grid = &op.grid;
    let fb: Vec<C64> = grid.boundary().iter().map(|&b| f.values[b]).collect();
    let gb: Vec<C64> = grid.boundary().iter().map(|&b| g.values[b]).collect();
    let r: Option<Vec<C64>> = rhs.map(|r| grid.interior().iter().map(|&m| r.values[m]).collect());
    let b = op.rhs(&fb, &gb, r.as_deref());
    let x = op.system.solve_many(&[b.clone()], false)?.pop().unwrap();
    let x = op.check_residual(x, &b)?;
    let (u, w) = op.scatter(&x, &fb, &gb);
    Ok((ScalarField { grid: op.grid.clone(), values: u }, ScalarField { grid: op.grid.clone(), values: w }))
}

/// (Ā, q̄ − i div Ā): the coefficients of the formal adjoint.
pub fn adjoint_coefficients(a: &VectorField, q: &ScalarField) -> (VectorField, ScalarField) {
    let abar = a.conj();
    let div = divergence(&abar);
    let qs = ScalarField {
        grid: q.grid.clone(),
        values: q.values.iter().zip(&div.values).map(|(qv, d)| qv.conj() - I * d).collect(),
    };
    (abar, qs)
}

pub fn assumption1_margin(op: &OperatorHandle) -> Result<Margin> {
    op.margin()
}

/// Which zeroth-order coefficient the adjoint carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdjointConvention {
    /// q̄ − i div Ā (standard duality).
    Conjugated,
    /// q − i div Ā, without conjugating q.
    Unconjugated,
}

/// Terms of the discrete Green identity.
#[derive(Clone, Copy, Debug)]
pub struct GreenResidual {
    /// ∫(Lu)v̄ − ∫u conj(L*v).
    pub volume: C64,
    /// The five boundary integrals.
    pub boundary: C64,
    pub residual: C64,
    /// |residual| over ‖Lu‖‖v‖ + ‖u‖‖L*v‖.
    pub relative: f64,
}

/// Green-identity residual on Ω for smooth u, v and coefficients given as
/// functions. Stencils reach two ghost layers outside Ω; the adjoint is
/// applied in divergence form D·(Ā v) + q* v.
pub fn greens_residual(
    grid: &Grid,
    u: impl Fn(&[f64]) -> C64,
    v: impl Fn(&[f64]) -> C64,
    a: impl Fn(&[f64]) -> Vec<C64>,
    q: impl Fn(&[f64]) -> C64,
    convention: AdjointConvention,
) -> Result<GreenResidual> {
    let n = grid.dim();
    let ghost = 2usize;
    let ext: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let d = ghost as f64 * grid.spacing()[k];
            (grid.lo()[k] - d, grid.hi()[k] + d)
        })
        .collect();
    let counts: Vec<usize> = grid.counts().iter().map(|c| c + 2 * ghost).collect();
    let pg = Grid::new_box(&ext, &counts)?;
    let pts: Vec<Vec<f64>> = (0..pg.len())
        .map(|i| {
            let mut mi = vec![0usize; n];
            pg.multi_index(i, &mut mi);
            (0..n)
                .map(|k| {
                    let t = mi[k] as isize - ghost as isize;
                    grid.lo()[k] + t as f64 * grid.spacing()[k]
                })
                .collect()
        })
        .collect();
    let uv: Vec<C64> = pts.iter().map(|x| u(x)).collect();
    let vv: Vec<C64> = pts.iter().map(|x| v(x)).collect();
    let av: Vec<Vec<C64>> = pts.iter().map(|x| a(x)).collect();
    let qv: Vec<C64> = pts.iter().map(|x| q(x)).collect();
    let inner = |i: usize, depth: usize| {
        (0..n).all(|k| {
            let t = pg.axis_index(i, k);
            t >= depth && t + depth < pg.counts()[k]
        })
    };
    let lap = |f: &[C64]| -> Vec<C64> {
        (0..pg.len()).map(|i| if inner(i, 1) { stencil::laplacian(&pg, f, i) } else { ZERO }).collect()
    };
    let wu = lap(&uv);
    let zv = lap(&vv);
    let to_p = |idx: usize| {
        let mut mi = vec![0usize; n];
        grid.multi_index(idx, &mut mi);
        mi.iter_mut().for_each(|m| *m += ghost);
        pg.index(&mi)
    };
    let weights = grid.volume_weights();
    let mut lhs = ZERO;
    let mut rhs = ZERO;
    let (mut nlu, mut nv, mut nu, mut nlv) = (0.0, 0.0, 0.0, 0.0);
    for idx in 0..grid.len() {
        let p = to_p(idx);
        let mut lu = stencil::laplacian(&pg, &wu, p) + qv[p] * uv[p];
        let qs = match convention {
            AdjointConvention::Conjugated => qv[p].conj(),
            AdjointConvention::Unconjugated => qv[p],
        };
        let mut lv = stencil::laplacian(&pg, &zv, p) + qs * vv[p];
        for j in 0..n {
            let s = pg.strides()[j];
            let h2 = 2.0 * pg.spacing()[j];
            lu += -I * av[p][j] * (uv[p + s] - uv[p - s]) / h2;
            lv += -I * (av[p + s][j].conj() * vv[p + s] - av[p - s][j].conj() * vv[p - s]) / h2;
        }
        let w = weights[idx];
        lhs += w * lu * vv[p].conj();
        rhs += w * uv[p] * lv.conj();
        nlu += w * lu.norm_sqr();
        nv += w * vv[p].norm_sqr();
        nu += w * uv[p].norm_sqr();
        nlv += w * lv.norm_sqr();
    }
    // Boundary terms face by face, one-sided normal derivatives on Ω nodes.
    let mut bnd = ZERO;
    for face in grid.faces() {
        let k = face.axis;
        let s = pg.strides()[k] as isize * if face.side > 0.0 { -1 } else { 1 };
        let dx = pg.spacing()[k];
        let dn = |f: &[C64], p: usize| {
            let p1 = (p as isize + s) as usize;
            let p2 = (p as isize + 2 * s) as usize;
            (3.0 * f[p] - 4.0 * f[p1] + f[p2]) / (2.0 * dx)
        };
        for (&idx, &w) in face.nodes.iter().zip(&face.weights) {
            let p = to_p(idx);
            let anu = face.side * av[p][k];
            let t = -I * anu * uv[p] * vv[p].conj() + dn(&wu, p) * vv[p].conj() - wu[p] * dn(&vv, p).conj()
                + dn(&uv, p) * zv[p].conj()
                - uv[p] * dn(&zv, p).conj();
            bnd += w * t;
        }
    }
    let volume = lhs - rhs;
    let residual = volume - bnd;
    let scale = (nlu * nv).sqrt() + (nu * nlv).sqrt();
    let relative = if scale > 0.0 { residual.norm() / scale } else { residual.norm() };
    Ok(GreenResidual { volume, boundary: bnd, residual, relative })
}

/// One refinement level of the manufactured-solution study.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MmsRow {
    pub nodes_per_unit: usize,
    pub spacing: f64,
    pub l2_error: f64,
    /// log₂ of the error ratio to the previous level; NaN on the first.
    pub order: f64,
}

/// L² error of solve_navier against u = sin πx₁ sin πx₂ sin 2πx₃ on the
/// default box with c nodes per unit length, with or without smooth complex
/// coefficients.
pub fn mms_error(c: usize, with_coeffs: bool) -> Result<f64> {
    use std::f64::consts::PI;
    let g =
        Arc::new(crate::domain::build_grid(3, &[(-1.0, 1.0), (-1.0, 1.0), (-1.0, 0.0)], &[2 * c - 1, 2 * c - 1, c])?);
    let re = |x: f64| C64::new(x, 0.0);
    let av = |x: &[f64]| vec![re(0.5 * x[1]), C64::new(0.2, 0.1 * x[0]), re(0.3)];
    let qv = |x: &[f64]| C64::new(1.0 + x[2], 0.5);
    let (a, q) = if with_coeffs {
        (VectorField::from_fn(g.clone(), av), ScalarField::from_fn(g.clone(), qv))
    } else {
        (VectorField::zeros(g.clone()), ScalarField::zeros(g.clone()))
    };
    let op = assemble(g.clone(), &a, &q)?;
    let ue = |x: &[f64]| (PI * x[0]).sin() * (PI * x[1]).sin() * (2.0 * PI * x[2]).sin();
    let rhs = ScalarField::from_fn(g.clone(), |x| {
        let (s0, s1, s2) = ((PI * x[0]).sin(), (PI * x[1]).sin(), (2.0 * PI * x[2]).sin());
        let (c0, c1, c2) = ((PI * x[0]).cos(), (PI * x[1]).cos(), (2.0 * PI * x[2]).cos());
        let mut r = re(36.0 * PI.powi(4) * s0 * s1 * s2);
        if with_coeffs {
            let grad = [PI * c0 * s1 * s2, PI * s0 * c1 * s2, 2.0 * PI * s0 * s1 * c2];
            r += av(x).iter().zip(grad).map(|(a, d)| -I * a * d).sum::<C64>();
            r += qv(x) * s0 * s1 * s2;
        }
        r
    });
    let z = ScalarField::zeros(g.clone());
    let (u, _) = solve_navier(&op, &z, &z, Some(&rhs))?;
    let err = ScalarField { grid: g.clone(), values: (0..g.len()).map(|i| u.values[i] - ue(&g.coords(i))).collect() };
    Ok(err.l2_norm())
}

pub fn mms_convergence(levels: &[usize], with_coeffs: bool) -> Result<Vec<MmsRow>> {
    let mut rows: Vec<MmsRow> = Vec::with_capacity(levels.len());
    for &c in levels {
        let e = mms_error(c, with_coeffs)?;
        let order = match rows.last() {
            Some(p) => (p.l2_error / e).ln() / (p.spacing / (1.0 / (c - 1) as f64)).ln(),
            None => f64::NAN,
        };
        rows.push(MmsRow { nodes_per_unit: c, spacing: 1.0 / (c - 1) as f64, l2_error: e, order });
    }
    Ok(rows)
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::domain::build_grid;

    fn re(x: f64) -> C64 {
        C64::new(x, 0.0)
    }
    fn grid(c: usize) -> Arc<Grid> {
        Arc::new(build_grid(3, &[(-1.0, 1.0), (-1.0, 1.0), (-1.0, 0.0)], &[2 * c - 1, 2 * c - 1, c]).unwrap())
    }
    fn zero_op(g: &Arc<Grid>) -> OperatorHandle {
        assemble(g.clone(), &VectorField::zeros(g.clone()), &ScalarField::zeros(g.clone())).unwrap()
    }

    #[test]
    fn dimensions_and_determinism() {
        let g = grid(5);
        let a = VectorField::from_fn(g.clone(), |x| vec![re(x[0]), C64::new(0.0, x[1]), re(0.5)]);
        let q = ScalarField::from_fn(g.clone(), |x| C64::new(x[2], 1.0));
        let op1 = assemble(g.clone(), &a, &q).unwrap();
        let op2 = assemble(g.clone(), &a, &q).unwrap();
        assert_eq!(op1.unknowns(), 2 * g.interior().len());
        assert_eq!(op1.matrix_hash(), op2.matrix_hash());
        let other = build_grid(3, &[(-1.0, 1.0), (-1.0, 1.0), (-1.0, 0.0)], &[9, 9, 6]).unwrap();
        let bad = ScalarField::zeros(Arc::new(other));
        assert!(assemble(g, &a, &bad).is_err());
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let g = grid(5);
        let op = zero_op(&g);
        let z = ScalarField::zeros(g.clone());
        let (u, w) = solve_navier(&op, &z, &z, None).unwrap();
        assert_eq!(u.max_abs(), 0.0);
        assert_eq!(w.max_abs(), 0.0);
    }

    #[test]
    fn cubic_polynomials_are_reproduced() {
        let g = grid(6);
        let qc = C64::new(0.7, -0.2);
        let a = VectorField::zeros(g.clone());
        let q = ScalarField::from_fn(g.clone(), |_| qc);
        let op = assemble(g.clone(), &a, &q).unwrap();
        let p = |x: &[f64]| x[0] * x[0] * x[1] - 2.0 * x[2].powi(3) + x[0] * x[1] * x[2] + 1.0;
        let lap_p = |x: &[f64]| 2.0 * x[1] - 12.0 * x[2];
        let f = ScalarField::from_fn(g.clone(), |x| re(p(x)));
        let gg = ScalarField::from_fn(g.clone(), |x| re(lap_p(x)));
        let rhs = ScalarField::from_fn(g.clone(), |x| qc * p(x));
        let (u, w) = solve_navier(&op, &f, &gg, Some(&rhs)).unwrap();
        for i in 0..g.len() {
            let x = g.coords(i);
            assert!((u.values[i] - p(&x)).norm() < 1e-11);
            assert!((w.values[i] - lap_p(&x)).norm() < 1e-10);
        }
    }

    #[test]
    fn manufactured_solution_converges_at_second_order() {
        for coeffs in [false, true] {
            let study = mms_convergence(&[5, 9, 17], coeffs).unwrap();
            let e: Vec<f64> = study.iter().map(|r| r.l2_error).collect();
            assert!(study[1].order > 1.9 && study[2].order > 1.9, "{e:?}");
            assert!(study[0].order.is_nan());
        }
    }

    #[test]
    fn apply_matches_analytic_operator() {
        let mut errs = Vec::new();
        for c in [9, 17] {
            let g = grid(c);
            let a = VectorField::from_fn(g.clone(), |x| vec![re(x[0]), re(0.0), C64::new(0.0, 1.0)]);
            let q = ScalarField::from_fn(g.clone(), |_| re(2.0));
            let op = assemble(g.clone(), &a, &q).unwrap();
            let u = ScalarField::from_fn(g.clone(), |x| re((PI * x[0]).sin() * (PI * x[1]).sin() * (PI * x[2]).sin()));
            let lapu = ScalarField::from_fn(g.clone(), |x| {
                re(-3.0 * PI * PI * (PI * x[0]).sin() * (PI * x[1]).sin() * (PI * x[2]).sin())
            });
            let lu = op.apply(&u, &lapu);
            let mut e: f64 = 0.0;
            for &m in g.interior() {
                let x = g.coords(m);
                let (s0, s1, s2) = ((PI * x[0]).sin(), (PI * x[1]).sin(), (PI * x[2]).sin());
                let ex = re(9.0 * PI.powi(4) * s0 * s1 * s2)
                    - I * x[0] * PI * (PI * x[0]).cos() * s1 * s2
                    - I * I * PI * s0 * s1 * (PI * x[2]).cos()
                    + 2.0 * s0 * s1 * s2;
                e = e.max((lu.values[m] - ex).norm());
            }
            errs.push(e);
        }
        assert!(errs[0] / errs[1] > 3.5, "{errs:?}");
    }

    #[test]
    fn adjoint_coefficient_examples() {
        let g = grid(5);
        let z = VectorField::zeros(g.clone());
        let q = ScalarField::from_fn(g.clone(), |x| re(x[0] + 2.0));
        let (a2, q2) = adjoint_coefficients(&z, &q);
        assert_eq!(a2.max_abs(), 0.0);
        assert_eq!(q2.values, q.values);
        let ac = VectorField::from_fn(g.clone(), |_| vec![re(1.0), re(-2.0), re(0.5)]);
        let qc = ScalarField::from_fn(g.clone(), |_| C64::new(1.0, 3.0));
        let (a2, q2) = adjoint_coefficients(&ac, &qc);
        assert_eq!(a2.comps, ac.comps);
        assert!(q2.values.iter().all(|v| (v - C64::new(1.0, -3.0)).norm() < 1e-13));
        let ax = VectorField::from_fn(g.clone(), |x| vec![re(x[0]), re(0.0), re(0.0)]);
        let (_, q2) = adjoint_coefficients(&ax, &ScalarField::zeros(g));
        assert!(q2.values.iter().all(|v| (v - C64::new(0.0, -1.0)).norm() < 1e-13));
    }

    #[test]
    fn margin_positive_and_vanishing_at_constructed_kernel() {
        let g = grid(5);
        let op = zero_op(&g);
        let m = assumption1_margin(&op).unwrap();
        assert!(m.relative() > 1e-3, "{m:?}");
        let lam1: f64 = g
            .spacing()
            .iter()
            .zip(g.counts())
            .map(|(d, &c)| 4.0 / (d * d) * (PI / (2.0 * (c - 1) as f64)).sin().powi(2))
            .sum();
        let q = ScalarField::from_fn(g.clone(), |_| re(-lam1 * lam1));
        let op = assemble(g.clone(), &VectorField::zeros(g.clone()), &q).unwrap();
        let m = assumption1_margin(&op).unwrap();
        assert!(m.relative() < 1e-10, "{m:?}");
        let z = ScalarField::zeros(g.clone());
        let one = ScalarField::from_fn(g, |_| re(1.0));
        assert!(matches!(solve_navier(&op, &one, &z, None), Err(Error::Assumption1Violated { .. })));
    }

    #[test]
    fn adjoint_solve_matches_conjugate_transpose() {
        let g = grid(5);
        let a = VectorField::from_fn(g.clone(), |x| vec![C64::new(x[1], 0.3), re(0.0), re(x[0] * x[2])]);
        let q = ScalarField::from_fn(g.clone(), |x| C64::new(1.0, x[0]));
        let op = assemble(g.clone(), &a, &q).unwrap();
        let b: Vec<C64> = (0..op.unknowns()).map(|i| C64::new((i as f64 * 0.37).sin(), 0.1)).collect();
        let (x, _) = op.system.solve_refined(&b, true).unwrap();
        let back = op.system.matvec_adjoint(&x);
        let r: Vec<C64> = back.iter().zip(&b).map(|(p, c)| p - c).collect();
        assert!(l2(&r) < 1e-10 * l2(&b));
    }

    fn bump(x: &[f64], c: &[f64], r: f64) -> f64 {
        let d2: f64 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (r * r);
        if d2 >= 1.0 {
            0.0
        } else {
            (-1.0 / (1.0 - d2)).exp()
        }
    }

    #[test]
    fn green_identity_compact_support_and_convention() {
        let g = grid(9);
        // Supports stay more than two cells away from every face.
        let u = |x: &[f64]| C64::new(bump(x, &[0.1, -0.2, -0.5], 0.3), 0.3 * bump(x, &[0.0, 0.0, -0.45], 0.25));
        let v = |x: &[f64]| C64::new(bump(x, &[-0.1, 0.0, -0.5], 0.3), -bump(x, &[0.2, 0.1, -0.5], 0.25));
        let a = |x: &[f64]| vec![C64::new(x[1], 0.2), C64::new(0.5, x[0]), re(x[2] * x[0])];
        let q = |x: &[f64]| C64::new(1.0 + x[0], 2.0 + x[1]);
        let r = greens_residual(&g, u, v, a, q, AdjointConvention::Conjugated).unwrap();
        assert!(r.relative < 1e-10, "{r:?}");
        assert!(r.boundary.norm() == 0.0);
        let bad = greens_residual(&g, u, v, a, q, AdjointConvention::Unconjugated).unwrap();
        // Dropping the conjugate on q leaves ∫u·conj((q − q̄)v) behind.
        assert!(bad.residual.norm() > 1e-4 && bad.relative > 1e4 * r.relative.max(1e-16), "{bad:?}");
    }

    #[test]
    fn green_identity_trivial_and_refinement() {
        let g = grid(5);
        let one = |_: &[f64]| re(1.0);
        let r = greens_residual(&g, one, one, |_| vec![ZERO; 3], |_| ZERO, AdjointConvention::Conjugated).unwrap();
        assert!(r.volume.norm() < 1e-12 && r.boundary.norm() < 1e-12);
        let mut e = Vec::new();
        for c in [5, 9, 17] {
            let g = grid(c);
            let r = greens_residual(
                &g,
                |x| C64::new((x[0] + 0.5 * x[1]).sin() * (x[2] + 0.3).cos(), x[0] * x[2]),
                |x| C64::new((0.7 * x[2] - x[0]).exp(), (x[1] * 1.5).sin()),
                |x| vec![C64::new(x[1], 0.1), re(0.4), C64::new(x[0], -0.2)],
                |x| C64::new(1.0 + x[2], x[0]),
                AdjointConvention::Conjugated,
            )
            .unwrap();
            e.push(r.residual.norm());
        }
        assert!((e[0] / e[1]).log2() > 1.9 && (e[1] / e[2]).log2() > 1.9, "{e:?}");
    }
}
