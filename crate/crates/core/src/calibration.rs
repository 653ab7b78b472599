//! Frozen multiplicative constants and the routines that produced them.
//!
//! Each constant is the largest ratio observed on its declared corpus times
//! [`SAFETY`], fixed once and then used unchanged by the acceptance runs.
//! The tests recompute the ratios and check that the frozen values still
//! dominate.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::cgo::{assemble_reflected, AmplitudeMode, CgoSpec, Fault, Which};
use crate::domain::{enclosing_radius, Grid};
use crate::dtn::{dtn_gap_norm, DtnMap};
use crate::error::Result;
use crate::families::{self, default_grid, Coefficients};
use crate::fields::{exterior_derivative, hodge_decompose, VectorField};
use crate::forward::assemble;
use crate::recover::{
    boundary_pairing, fourier_sample_q, oracle_scalar, riemann_lebesgue_check, stability_rhs, sweep, Bound, Exponents,
    Pipeline, ScheduleConsts, SweepConfig,
};

pub const SAFETY: f64 = 2.0;

/// |ℱf(ξ)| ≤ C(e^{−ε²|ξ|²/4π} + ε^α) on the Riemann–Lebesgue corpus.
pub const RIEMANN_LEBESGUE_C: f64 = 0.48;
/// ‖A^sol‖_{L∞} ≤ C‖dA‖_{L∞}.
pub const MORREY_C: f64 = 0.25;
/// ‖u‖_{L²(Ω)} ≤ C e^{2R/h} for reflected CGOs.
pub const CGO_GROWTH_C: f64 = 5.1e-3;
/// |boundary pairing| ≤ C e^{9R/h} · DtN gap.
pub const PAIRING_C: f64 = 2.0e-15;
/// |q sample − ℱq̃| ≤ C(‖A₂ − A₁‖_{L∞} + h).
pub const Q_CONTAMINATION_C: f64 = 0.39;
/// Multiplier of the ‖A₂ − A₁‖_{L∞} stability bound.
pub const STABILITY_C_A: f64 = 3.4;
/// Multiplier of the ‖q₁ − q₂‖_{H⁻¹} stability bound.
pub const STABILITY_C_Q: f64 = 0.56;

/// Schedule constants of the default box: s = 2.6, α = ½, h₀ = ½, ε₀ = 0.8.
pub fn default_consts(grid: &Grid) -> ScheduleConsts {
    ScheduleConsts { r: enclosing_radius(grid), n: grid.dim(), s: 2.6, alpha: 0.5, h0: 0.5, eps0: 0.8 }
}

/// ε ∈ {0.05, 0.10, …, 0.75}.
pub fn riemann_lebesgue_eps() -> Vec<f64> {
    (1..=15).map(|k| 0.05 * k as f64).collect()
}

/// ξ on a cubic lattice of step 1.5 in [−12, 12]³ (ξ₃ ≥ 0 by symmetry of
/// real fields).
pub fn riemann_lebesgue_xi() -> Vec<Vec<f64>> {
    let axis: Vec<f64> = (-8..=8).map(|k| 1.5 * k as f64).collect();
    let mut out = Vec::new();
    for &a in &axis {
        for &b in &axis {
            for &c in axis.iter().filter(|c| **c >= 0.0) {
                out.push(vec![a, b, c]);
            }
        }
    }
    out
}

/// Translation range for the (C₀, α) fit.
pub const RIEMANN_LEBESGUE_DELTA: f64 = 0.13;

/// Largest minimal viable C over the corpus, per field.
pub fn riemann_lebesgue_ratios(grid: &Arc<Grid>) -> Result<Vec<(String, f64)>> {
    let eps = riemann_lebesgue_eps();
    let xi = riemann_lebesgue_xi();
    let eps0 = default_consts(grid).eps0;
    families::riemann_lebesgue_corpus()
        .into_iter()
        .map(|(name, c)| {
            let (_, q) = c.fields(grid.clone())?;
            let r = riemann_lebesgue_check(&q, &eps, &xi, RIEMANN_LEBESGUE_DELTA, eps0, None)?;
            Ok((name, r.min_constant))
        })
        .collect()
}

/// ‖A^sol‖_{L∞}/‖dA‖_{L∞} for one field.
pub fn morrey_ratio(a: &VectorField) -> Result<f64> {
    let sol = hodge_decompose(a)?.solenoidal;
    Ok(sol.max_abs() / exterior_derivative(a).max_abs())
}

pub fn morrey_corpus() -> Vec<Coefficients> {
    vec![families::background(), families::solenoidal_difference(), families::calibration_perturbation()]
}

pub fn morrey_ratios(grid: &Arc<Grid>) -> Result<Vec<f64>> {
    morrey_corpus().iter().map(|c| morrey_ratio(&c.fields(grid.clone())?.0)).collect()
}

/// Frequencies and semiclassical parameters of the CGO calibration runs.
pub fn cgo_corpus() -> Vec<(Vec<f64>, f64)> {
    vec![(vec![1.5, -1.0, 0.5], 0.4), (vec![1.0, 2.0, -1.0], 0.2), (vec![-2.0, 1.0, 1.0], 0.1)]
}

/// ‖u‖_{L²(Ω)}e^{−2R/h} for u₂ of the background pair.
pub fn cgo_growth_ratios(grid: &Arc<Grid>) -> Result<Vec<f64>> {
    let (a, q) = families::background().fields(grid.clone())?;
    let r = enclosing_radius(grid);
    cgo_corpus()
        .into_iter()
        .map(|(xi, h)| {
            let spec = CgoSpec::new(&xi, h, 1.0, AmplitudeMode::One)?;
            let u = assemble_reflected(&spec, Which::U2, &a, &q, Fault::None)?;
            Ok(u.u.l2_norm() * (-2.0 * r / h).exp())
        })
        .collect()
}

/// |pairing| / (e^{9R/h} gap) for background vs background + calibration
/// perturbation.
pub fn pairing_ratios(grid: &Arc<Grid>) -> Result<Vec<f64>> {
    let base = families::background();
    let p = Pipeline::from_coefficients(grid.clone(), &base, &base.plus(&families::calibration_perturbation()))?;
    let op2 = assemble(grid.clone(), &p.a2, &p.q2)?;
    let gap = dtn_gap_norm(&DtnMap::assemble(&p.op1, 0)?, &DtnMap::assemble(&op2, 0)?)?;
    let r = enclosing_radius(grid);
    cgo_corpus()
        .into_iter()
        .map(|(xi, h)| {
            let (u2, v) = p.cgo_pair(&CgoSpec::new(&xi, h, 1.0, AmplitudeMode::One)?)?;
            Ok(boundary_pairing(&p.op1, &u2, &v)?.norm() / ((9.0 * r / h).exp() * gap))
        })
        .collect()
}

/// |q sample − ℱq̃| / (‖A₂ − A₁‖_{L∞} + h) with both differences present.
pub fn q_contamination_ratios(grid: &Arc<Grid>) -> Result<Vec<f64>> {
    let base = families::background();
    let diff = families::calibration_perturbation();
    let p = Pipeline::from_coefficients(grid.clone(), &base, &base.plus(&diff))?;
    let (da, dq) = diff.fields(grid.clone())?;
    let a_inf = da.max_abs();
    let mut out = Vec::new();
    for (xi, h) in cgo_corpus() {
        let xi = nearest_lattice(grid, &xi)?;
        let s = fourier_sample_q(&p, &xi, h)?;
        let o = oracle_scalar(&dq, std::slice::from_ref(&xi))?[0];
        out.push((s.value[0] - o).norm() / (a_inf + h));
    }
    Ok(out)
}

fn nearest_lattice(grid: &Grid, xi: &[f64]) -> Result<Vec<f64>> {
    let torus = crate::recover::oracle_torus(grid)?;
    Ok(xi
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let step = 2.0 * PI / torus.period(k);
            (v / step).round() * step
        })
        .collect())
}

/// The sweep used to calibrate the stability multipliers: the calibration
/// perturbation on the default c = 9 box.
pub fn stability_calibration_config() -> Result<SweepConfig> {
    let grid = default_grid(9)?;
    Ok(SweepConfig {
        consts: default_consts(&grid),
        grid,
        base: families::background(),
        perturbation: families::calibration_perturbation(),
        taus: vec![1.0, 0.25],
        probe_h: 0.2,
        dtn_margin: 0,
        lattice_rho: Some(1.6),
        c_a: 1.0,
        c_q: 1.0,
    })
}

/// Largest error/rhs ratios (A in L∞, q in H⁻¹) with unit multipliers.
pub fn stability_ratios(cfg: &SweepConfig) -> Result<(f64, f64)> {
    let ex = Exponents::new(cfg.consts.n, cfg.consts.s, cfg.consts.alpha)?;
    let report = sweep(cfg)?;
    let mut ra: f64 = 0.0;
    let mut rq: f64 = 0.0;
    for row in report.rows.iter().filter(|r| r.error.is_none() && r.gap > 0.0) {
        ra = ra.max(row.err_a_linf / stability_rhs(row.gap, &ex, cfg.consts.s, Bound::ALinf, 1.0).value);
        rq = rq.max(row.err_q_hm1 / stability_rhs(row.gap, &ex, cfg.consts.s, Bound::QHminus1, 1.0).value);
    }
    Ok((ra, rq))
}
