//! Reconstruction and stability: integral pairings, Fourier samples of dÃ,
//! φ̃ and q̃, the truncated H⁻¹ norm, (h, ρ) schedules, the stability
//! right-hand sides, the quantitative Riemann–Lebesgue check and the
//! stability sweep.
//!
//! Fourier transforms are ℱf(ξ) = ∫ f(x)e^{−ix·ξ} dx, evaluated on the
//! padded torus of the doubled grid.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cgo::{assemble_reflected, AmplitudeMode, CgoSolution, CgoSpec, Fault, Which};
use crate::domain::{enclosing_radius, Grid};
use crate::dtn::{dtn_gap_norm, DtnMap};
use crate::error::{Error, Result};
use crate::families::Coefficients;
use crate::fields::{extend_reflect_a, extend_reflect_q, ScalarField, TwoForm, VectorField, PAD_FACTOR};
use crate::forward::{assemble, solve_navier, OperatorHandle};
use crate::spectral::Torus;
use crate::C64;

const ZERO: C64 = C64::new(0.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

/// The two coefficient pairs and the assembled operator of the first.
pub struct Pipeline {
    pub a1: VectorField,
    pub q1: ScalarField,
    pub a2: VectorField,
    pub q2: ScalarField,
    pub op1: OperatorHandle,
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline").field("op1", &self.op1).finish()
    }
}

impl Pipeline {
    pub fn new(a1: VectorField, q1: ScalarField, a2: VectorField, q2: ScalarField) -> Result<Pipeline> {
        let grid = a1.grid.clone();
        for g in [&q1.grid, &a2.grid, &q2.grid] {
            if g.as_ref() != grid.as_ref() {
                return Err(Error::DimensionMismatch("both coefficient pairs must share one grid".into()));
            }
        }
        let op1 = assemble(grid, &a1, &q1)?;
        Ok(Pipeline { a1, q1, a2, q2, op1 })
    }

    pub fn from_coefficients(grid: Arc<Grid>, c1: &Coefficients, c2: &Coefficients) -> Result<Pipeline> {
        let (a1, q1) = c1.fields(grid.clone())?;
        let (a2, q2) = c2.fields(grid)?;
        Pipeline::new(a1, q1, a2, q2)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.a1.grid
    }

    /// u₂ for (A⁽²⁾, q₂) and v for the adjoint of (A⁽¹⁾, q₁).
    pub fn cgo_pair(&self, spec: &CgoSpec) -> Result<(CgoSolution, CgoSolution)> {
        let u2 = assemble_reflected(spec, Which::U2, &self.a2, &self.q2, Fault::None)?;
        let v = assemble_reflected(spec, Which::V, &self.a1, &self.q1, Fault::None)?;
        Ok((u2, v))
    }
}

/// Σ_interior ΠΔ [(A⁽²⁾ − A⁽¹⁾)·Du₂ + (q₂ − q₁)u₂] v̄ with central D.
pub fn volume_pairing(
    a1: &VectorField,
    q1: &ScalarField,
    a2: &VectorField,
    q2: &ScalarField,
    u2: &CgoSolution,
    v: &CgoSolution,
) -> Result<C64> {
    let grid = &a1.grid;
    if u2.u.grid.as_ref() != grid.as_ref() || v.u.grid.as_ref() != grid.as_ref() {
        return Err(Error::DimensionMismatch("CGOs and coefficients live on different grids".into()));
    }
    let u = &u2.u.values;
    let mut acc = ZERO;
    for &m in grid.interior() {
        let mut t = (q2.values[m] - q1.values[m]) * u[m];
        for j in 0..grid.dim() {
            let da = a2.comps[j][m] - a1.comps[j][m];
            if da != ZERO {
                let s = grid.strides()[j];
                t += da * -I * (u[m + s] - u[m - s]) / (2.0 * grid.spacing()[j]);
            }
        }
        acc += t * v.u.values[m].conj();
    }
    Ok(acc * grid.cell_volume())
}

/// The pairing computed from Γ data only: u₁ solves the op₁ Navier problem
/// with the boundary values of (u₂, Δu₂), and with e = u₁ − u₂ the result
/// is Σ_Γ dS [∂_ν(Δe) v̄ + ∂_ν e conj(Δv) + (i/2)Δx_ν (A⁽¹⁾·ν) ∂_ν e v̄]
/// with two-point normal differences. This is the exact summation by parts
/// of the discrete operator, so it equals the volume pairing up to the CGO
/// residuals.
pub fn boundary_pairing(op1: &OperatorHandle, u2: &CgoSolution, v: &CgoSolution) -> Result<C64> {
    let grid = &op1.grid;
    let (u1, w1) = solve_navier(op1, &u2.u, &u2.w, None)?;
    let eu: Vec<C64> = u1.values.iter().zip(&u2.u.values).map(|(a, b)| a - b).collect();
    let ew: Vec<C64> = w1.values.iter().zip(&u2.w.values).map(|(a, b)| a - b).collect();
    let n = grid.dim();
    let vol = grid.cell_volume();
    let mut acc = ZERO;
    for &b in &op1.partition.gamma {
        let vb = v.u.values[b].conj();
        let zb = v.w.values[b].conj();
        for k in 0..n {
            let i = grid.axis_index(b, k);
            let last = grid.counts()[k] - 1;
            let (inner, sign) = if i == 0 {
                (b + grid.strides()[k], -1.0)
            } else if i == last {
                (b - grid.strides()[k], 1.0)
            } else {
                continue;
            };
            let dx = grid.spacing()[k];
            let ds = vol / dx;
            // e vanishes on ∂Ω, so ∂_ν e = −e(inner)/Δx
            let dn_u = -eu[inner] / dx;
            let dn_w = -ew[inner] / dx;
            acc += ds * (dn_w * vb + dn_u * zb + 0.5 * I * dx * sign * op1.a.comps[k][b] * dn_u * vb);
        }
    }
    Ok(acc)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampleMode {
    #[serde(rename = "dA")]
    DA,
    #[serde(rename = "phi")]
    Phi,
    #[serde(rename = "q")]
    Q,
}

impl SampleMode {
    pub fn name(self) -> &'static str {
        match self {
            SampleMode::DA => "dA",
            SampleMode::Phi => "phi",
            SampleMode::Q => "q",
        }
    }
}

/// One of the ±μ⁽²⁾ runs behind a sample.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub sign: f64,
    pub pairing: C64,
    pub volume: C64,
    /// h·sin(k_jΔ_j)/Δ_j, the discrete symbol of hD on the u₂ phase.
    pub symbol: Vec<C64>,
    pub remainder_u2: f64,
    pub remainder_v: f64,
    pub residual_u2: f64,
    pub residual_v: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FourierSample {
    pub xi: Vec<f64>,
    pub mode: SampleMode,
    pub h: f64,
    pub runs: [RunRecord; 2],
    /// (ℱdÃ)_{jk} in pair order for dA; a single value for φ and q.
    pub value: Vec<C64>,
    /// m(ξ, μ⁽¹⁾), m(ξ, μ⁽²⁾) for dA.
    pub projections: Option<[C64; 2]>,
    pub mu1: Vec<f64>,
    pub mu2: Vec<f64>,
    /// e^{−(ε²/π)|ξ′|²/(h²|ξ|²)} + ε^α with ε = √h: the cross-term bound.
    pub i2_bound: f64,
    /// h: the remainder-term bound.
    pub i3_bound: f64,
    pub cross_frequency: f64,
}

impl FourierSample {
    pub fn max_remainder(&self) -> f64 {
        self.runs.iter().map(|r| r.remainder_u2.max(r.remainder_v)).fold(0.0, f64::max)
    }
    pub fn max_pairing_mismatch(&self) -> f64 {
        self.runs.iter().map(|r| (r.pairing - r.volume).norm() / r.volume.norm().max(1e-300)).fold(0.0, f64::max)
    }
}

/// Default Riemann–Lebesgue exponent used in the I₂ bound.
pub const DEFAULT_ALPHA: f64 = 0.5;

pub fn fourier_sample(p: &Pipeline, mode: SampleMode, xi: &[f64], h: f64) -> Result<FourierSample> {
    let n = xi.len();
    let tan = xi[..n - 1].iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(tan > 0.0) {
        return Err(Error::InvalidArgument(format!("reconstruction frequency {xi:?} has ξ′ = 0")));
    }
    let grid = p.grid().clone();
    let amp = if mode == SampleMode::Phi { AmplitudeMode::Linear } else { AmplitudeMode::One };
    let mut runs = Vec::with_capacity(2);
    let mut frame = None;
    let mut cross = 0.0;
    for sign in [1.0, -1.0] {
        let spec = CgoSpec::new(xi, h, sign, amp)?;
        if frame.is_none() {
            frame = Some(spec.frame.clone());
            cross = spec.zetas.xi_plus[n - 1].abs();
        }
        let (u2, v) = p.cgo_pair(&spec)?;
        let pairing = boundary_pairing(&p.op1, &u2, &v)?;
        let volume = volume_pairing(&p.a1, &p.q1, &p.a2, &p.q2, &u2, &v)?;
        let symbol = u2
            .diagnostics
            .phase
            .iter()
            .zip(grid.spacing())
            .map(|(k, d)| h * (C64::new(k[0], k[1]) * d).sin() / d)
            .collect();
        runs.push(RunRecord {
            sign,
            pairing,
            volume,
            symbol,
            remainder_u2: u2.diagnostics.remainder_h1_scl,
            remainder_v: v.diagnostics.remainder_h1_scl,
            residual_u2: u2.diagnostics.pde_residual,
            residual_v: v.diagnostics.pde_residual,
        });
    }
    let frame = frame.unwrap();
    let (mu1, mu2) = (frame.mu1.clone(), frame.mu2.clone());
    let dotc = |d: &[C64], m: &[f64]| -> C64 { d.iter().zip(m).map(|(a, b)| a * b).sum() };
    let (value, projections) = match mode {
        SampleMode::DA => {
            // h·pairing_± ≈ d_±·ℱÃ with ℱÃ = m₁μ⁽¹⁾ + m₂μ⁽²⁾ + (ξ-part)
            let s: Vec<C64> = runs.iter().map(|r| h * r.pairing).collect();
            let (a11, a12) = (dotc(&runs[0].symbol, &mu1), dotc(&runs[0].symbol, &mu2));
            let (a21, a22) = (dotc(&runs[1].symbol, &mu1), dotc(&runs[1].symbol, &mu2));
            let det = a11 * a22 - a12 * a21;
            if det.norm() < 1e-12 {
                return Err(Error::Numerical(format!("±μ⁽²⁾ runs are degenerate at ξ = {xi:?}")));
            }
            let m1 = (s[0] * a22 - s[1] * a12) / det;
            let m2 = (a11 * s[1] - a21 * s[0]) / det;
            let proj: Vec<C64> = (0..n).map(|j| m1 * mu1[j] + m2 * mu2[j]).collect();
            let value = TwoForm::pairs(n).into_iter().map(|(j, k)| I * (xi[j] * proj[k] - xi[k] * proj[j])).collect();
            (value, Some([m1, m2]))
        }
        SampleMode::Phi => {
            let v = runs.iter().map(|r| h * r.pairing / dotc(&r.symbol, &mu1)).sum::<C64>() / 2.0;
            (vec![v], None)
        }
        SampleMode::Q => (vec![(runs[0].pairing + runs[1].pairing) / 2.0], None),
    };
    let eps = h.sqrt();
    let x2: f64 = xi.iter().map(|v| v * v).sum();
    let i2_bound = (-(eps * eps / PI) * tan * tan / (h * h * x2)).exp() + eps.powf(DEFAULT_ALPHA);
    let runs: [RunRecord; 2] = runs.try_into().unwrap();
    Ok(FourierSample {
        xi: xi.to_vec(),
        mode,
        h,
        runs,
        value,
        projections,
        mu1,
        mu2,
        i2_bound,
        i3_bound: h,
        cross_frequency: cross,
    })
}

pub fn fourier_sample_da(p: &Pipeline, xi: &[f64], h: f64) -> Result<FourierSample> {
    fourier_sample(p, SampleMode::DA, xi, h)
}
pub fn fourier_sample_phi(p: &Pipeline, xi: &[f64], h: f64) -> Result<FourierSample> {
    fourier_sample(p, SampleMode::Phi, xi, h)
}
pub fn fourier_sample_q(p: &Pipeline, xi: &[f64], h: f64) -> Result<FourierSample> {
    fourier_sample(p, SampleMode::Q, xi, h)
}

/// Samples at many frequencies, in input order.
pub fn fourier_samples(p: &Pipeline, mode: SampleMode, xis: &[Vec<f64>], h: f64) -> Vec<Result<FourierSample>> {
    xis.par_iter().map(|xi| fourier_sample(p, mode, xi, h)).collect()
}

/// The padded torus on which the oracles and sample lattices live.
pub fn oracle_torus(grid: &Grid) -> Result<Torus> {
    Ok(Torus::padded(&grid.doubled()?, PAD_FACTOR))
}

/// |ξ′| ≤ ρ and |ξ_n| ≤ ρ.
pub fn in_e_rho(xi: &[f64], rho: f64) -> bool {
    let n = xi.len();
    let tan: f64 = xi[..n - 1].iter().map(|v| v * v).sum::<f64>().sqrt();
    tan <= rho && xi[n - 1].abs() <= rho
}

fn lattice_cell(torus: &Torus) -> f64 {
    (0..torus.dim()).map(|k| 2.0 * PI / torus.period(k)).fold(f64::INFINITY, f64::min)
}

/// Lattice frequencies of `torus` in E(ρ) with |ξ′| at least one lattice
/// cell, in row-major slot order.
pub fn frequency_lattice(torus: &Torus, rho: f64) -> Vec<Vec<f64>> {
    let cell = lattice_cell(torus);
    let n = torus.dim();
    torus
        .frequencies()
        .into_iter()
        .filter(|xi| in_e_rho(xi, rho) && xi[..n - 1].iter().map(|v| v * v).sum::<f64>().sqrt() >= cell - 1e-12)
        .collect()
}

/// `count` lattice frequencies with |ξ| ≤ `max_norm` and |ξ′| ≥ |ξ|/√2,
/// spread evenly over the admissible set ordered by (|ξ|, slot).
pub fn oracle_frequencies(torus: &Torus, count: usize, max_norm: f64) -> Vec<Vec<f64>> {
    let cell = lattice_cell(torus);
    let n = torus.dim();
    let mut all: Vec<(f64, usize, Vec<f64>)> = torus
        .frequencies()
        .into_iter()
        .enumerate()
        .filter_map(|(i, xi)| {
            let norm = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
            let tan = xi[..n - 1].iter().map(|v| v * v).sum::<f64>().sqrt();
            (norm <= max_norm && tan >= cell - 1e-12 && tan * 2f64.sqrt() >= norm).then_some((norm, i, xi))
        })
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    if all.len() <= count {
        return all.into_iter().map(|t| t.2).collect();
    }
    (0..count).map(|i| all[(i * (all.len() - 1)) / (count - 1).max(1)].2.clone()).collect()
}

/// ℱ of the reflected extension of a scalar on Ω, at lattice frequencies.
pub fn oracle_scalar(f: &ScalarField, xis: &[Vec<f64>]) -> Result<Vec<C64>> {
    let ft = extend_reflect_q(f)?;
    let torus = oracle_torus(&f.grid)?;
    lookup(&torus, &torus.transform(&torus.embed(&ft.grid, &ft.values)), xis)
}

/// Spectral (ℱdÃ)_{jk} = i(ξ_jℱÃ_k − ξ_kℱÃ_j) of the reflected extension.
pub fn oracle_da(a: &VectorField, xis: &[Vec<f64>]) -> Result<Vec<Vec<C64>>> {
    let at = extend_reflect_a(a)?;
    let torus = oracle_torus(&a.grid)?;
    let n = a.dim();
    let comps: Vec<Vec<C64>> = at
        .comps
        .iter()
        .map(|c| lookup(&torus, &torus.transform(&torus.embed(&at.grid, c)), xis))
        .collect::<Result<_>>()?;
    Ok((0..xis.len())
        .map(|s| {
            let xi = &xis[s];
            TwoForm::pairs(n).into_iter().map(|(j, k)| I * (xi[j] * comps[k][s] - xi[k] * comps[j][s])).collect()
        })
        .collect())
}

fn lookup(torus: &Torus, spectrum: &[C64], xis: &[Vec<f64>]) -> Result<Vec<C64>> {
    let strides = torus.strides();
    xis.iter()
        .map(|xi| {
            let mut t = 0;
            for k in 0..torus.dim() {
                let m = (xi[k] * torus.period(k) / (2.0 * PI)).round();
                if (m * 2.0 * PI / torus.period(k) - xi[k]).abs() > 1e-9 * (1.0 + xi[k].abs()) {
                    return Err(Error::InvalidArgument(format!(
                        "{xi:?} is not a lattice frequency of the oracle torus"
                    )));
                }
                let p = torus.shape[k] as i64;
                t += (m as i64).rem_euclid(p) as usize * strides[k];
            }
            Ok(spectrum[t])
        })
        .collect()
}

/// Relative ℓ² error √(Σ|s − o|² / Σ|o|²) over all samples and components.
pub fn relative_error(samples: &[Vec<C64>], oracle: &[Vec<C64>]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (s, o) in samples.iter().zip(oracle) {
        for (a, b) in s.iter().zip(o) {
            num += (a - b).norm_sqr();
            den += b.norm_sqr();
        }
    }
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

/// (∫_{E(ρ)} |m(ξ)|²/(1+|ξ|²) dξ/(2π)ⁿ + M̂²/ρ²)^{1/2}, the integral as a
/// lattice sum with cell volume `cell`.
pub fn truncated_hminus1(samples: &[(Vec<f64>, Vec<C64>)], cell: f64, rho: f64, m_hat: f64) -> f64 {
    let mut inside = 0.0;
    let mut dim = 0;
    for (xi, m) in samples {
        dim = xi.len();
        if in_e_rho(xi, rho) {
            let w = 1.0 + xi.iter().map(|v| v * v).sum::<f64>();
            inside += m.iter().map(|v| v.norm_sqr()).sum::<f64>() / w;
        }
    }
    let inside = inside * cell / (2.0 * PI).powi(dim as i32);
    (inside + m_hat * m_hat / (rho * rho)).sqrt()
}

/// Constants entering the schedules.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConsts {
    /// Radius with Ω ∪ Ω* ⊂ B(0, R).
    pub r: f64,
    pub n: usize,
    pub s: f64,
    pub alpha: f64,
    pub h0: f64,
    pub eps0: f64,
}

impl ScheduleConsts {
    pub fn for_grid(grid: &Grid, s: f64, alpha: f64, h0: f64, eps0: f64) -> Result<ScheduleConsts> {
        Ok(ScheduleConsts { r: enclosing_radius(grid), n: grid.dim(), s, alpha, h0, eps0 })
    }
}

/// η, κ = η²/(2(1+s)²) and the logarithmic exponents θ₁, θ₂.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exponents {
    pub eta: f64,
    pub kappa: f64,
    pub theta1: f64,
    pub theta2: f64,
}

impl Exponents {
    pub fn new(n: usize, s: f64, alpha: f64) -> Result<Exponents> {
        let nf = n as f64;
        if !(s > nf / 2.0 + 1.0) {
            return Err(Error::InvalidArgument(format!("s = {s} must exceed n/2 + 1")));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("α = {alpha} must lie in (0, 1)")));
        }
        let eta = (s - nf / 2.0) / 2.0;
        let s1 = 1.0 + s;
        let e = Exponents {
            eta,
            kappa: eta * eta / (2.0 * s1 * s1),
            theta1: alpha * alpha * eta.powi(4) / ((nf + 2.0).powi(2) * s1.powi(4)),
            theta2: 2.0 * alpha * alpha * eta.powi(4) / ((nf + 2.0).powi(3) * s1.powi(4)),
        };
        for (name, t) in [("θ₁", e.theta1), ("θ₂", e.theta2)] {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::Numerical(format!("{name} = {t} is outside (0, 1)")));
            }
        }
        Ok(e)
    }
}

/// Which theorem the schedule serves: the A chain uses 11R, the q chain 22R.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    A,
    Q,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "branch", rename_all = "snake_case")]
pub enum Branch {
    /// gap < δ: the logarithmic choice of h.
    Small { h: f64, eps: f64, rho_da: f64, rho_phi: f64, rho_q: f64 },
    /// gap ≥ δ: the trivial bound 2M applies and no h is emitted.
    LargeGap,
    /// gap = 0: the uniqueness regime.
    ZeroGap,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub consts: ScheduleConsts,
    pub target: Target,
    pub gap: f64,
    pub exponents: Exponents,
    /// min{h₀, ε₀²}.
    pub h_tilde0: f64,
    /// log δ (δ itself underflows for every realistic constant set).
    pub log_delta: f64,
    pub branch: Branch,
}

/// ρ for the dA, φ and q chains at a given h.
pub fn rho_choices(h: f64, n: usize, s: f64, alpha: f64) -> (f64, f64, f64) {
    let nf = n as f64;
    let eta = (s - nf / 2.0) / 2.0;
    let s1 = 1.0 + s;
    (
        h.powf(-alpha / (nf + 2.0)),
        h.powf(-2.0 * alpha * eta / ((nf + 2.0).powi(2) * s1)),
        h.powf(-4.0 * alpha * eta * eta / ((nf + 2.0).powi(3) * s1 * s1)),
    )
}

/// h = (cR)^α |log gap|^{−ακ} with c = 11 (A) or 22 (q), valid when
/// gap < δ = exp(−(cR/h̃₀^{1/α})^{1/κ}), which is exactly h < h̃₀.
pub fn schedule_from_gap(gap: f64, consts: ScheduleConsts, target: Target) -> Result<ScheduleParams> {
    let ex = Exponents::new(consts.n, consts.s, consts.alpha)?;
    if !(gap >= 0.0) || !gap.is_finite() {
        return Err(Error::InvalidArgument(format!("DtN gap {gap} must be finite and nonnegative")));
    }
    let c = match target {
        Target::A => 11.0,
        Target::Q => 22.0,
    } * consts.r;
    let h_tilde0 = consts.h0.min(consts.eps0 * consts.eps0);
    let log_delta = -(c / h_tilde0.powf(1.0 / consts.alpha)).powf(1.0 / ex.kappa);
    let branch = if gap == 0.0 {
        Branch::ZeroGap
    } else if gap.ln() >= log_delta {
        Branch::LargeGap
    } else {
        let l = gap.ln().abs();
        let h = c.powf(consts.alpha) * l.powf(-consts.alpha * ex.kappa);
        let (rho_da, rho_phi, rho_q) = rho_choices(h, consts.n, consts.s, consts.alpha);
        let rho = rho_da.max(rho_phi).max(rho_q);
        if !(h < h_tilde0) || !(1.0 - h * h * 2.0 * rho * rho / 4.0 > 0.0) {
            return Err(Error::Numerical(format!("schedule h = {h} fails h < h̃₀ or 1 − h²|ξ|²/4 > 0 on E(ρ)")));
        }
        Branch::Small { h, eps: h.sqrt(), rho_da, rho_phi, rho_q }
    };
    Ok(ScheduleParams { consts, target, gap, exponents: ex, h_tilde0, log_delta, branch })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    /// ‖A⁽²⁾ − A⁽¹⁾‖_{L∞}.
    ALinf,
    /// ‖q₁ − q₂‖_{H⁻¹}.
    QHminus1,
    /// ‖q₁ − q₂‖_{L∞}.
    QLinf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhsFlag {
    /// gap = 0: returned as 0.
    ZeroGap,
    /// gap = 1: the logarithmic term is taken as its limit 0.
    UnitGap,
    /// gap > 1: outside the regime of the estimates.
    AboveOne,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RhsValue {
    pub value: f64,
    pub flag: Option<RhsFlag>,
}

/// C(gap^κ + |log gap|^{−θ}), raised to η/(1+s) inside C for q in L∞.
pub fn stability_rhs(gap: f64, ex: &Exponents, s: f64, which: Bound, c: f64) -> RhsValue {
    if gap == 0.0 {
        return RhsValue { value: 0.0, flag: Some(RhsFlag::ZeroGap) };
    }
    let theta = match which {
        Bound::ALinf => ex.theta1,
        Bound::QHminus1 | Bound::QLinf => ex.theta2,
    };
    let (log_term, flag) = if gap == 1.0 {
        (0.0, Some(RhsFlag::UnitGap))
    } else {
        (gap.ln().abs().powf(-theta), (gap > 1.0).then_some(RhsFlag::AboveOne))
    };
    let inner = gap.powf(ex.kappa) + log_term;
    let value = match which {
        Bound::QLinf => c * inner.powf(ex.eta / (1.0 + s)),
        _ => c * inner,
    };
    RhsValue { value, flag }
}

/// ‖f(· − y) − f‖_{L¹} for y = `shift` cells along `axis`, f zero outside
/// the grid.
pub fn translation_modulus(f: &ScalarField, axis: usize, shift: usize) -> f64 {
    let g = &f.grid;
    let c = g.counts()[axis];
    let s = g.strides()[axis];
    let mut acc = 0.0;
    for start in 0..g.len() {
        if g.axis_index(start, axis) != 0 {
            continue;
        }
        for t in 0..c + shift {
            let a = if t >= shift && t - shift < c { f.values[start + (t - shift) * s] } else { ZERO };
            let b = if t < c { f.values[start + t * s] } else { ZERO };
            acc += (a - b).norm();
        }
    }
    acc * g.cell_volume()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RiemannLebesgueReport {
    pub l1_norm: f64,
    /// Fitted hypothesis ‖f(·−y) − f‖_{L¹} ≤ C₀|y|^α on |y| < δ.
    pub c0: f64,
    pub alpha: f64,
    pub modulus: Vec<(f64, f64)>,
    /// Smallest C with |ℱf(ξ)| ≤ C(e^{−ε²|ξ|²/4π} + ε^α) on the grid.
    pub min_constant: f64,
    pub worst_eps: f64,
    pub worst_xi: Vec<f64>,
    pub excluded_eps: usize,
    pub holds: Option<bool>,
}

/// Fits (C₀, α) from the L¹ translation modulus and evaluates the
/// Riemann–Lebesgue bound over every (ε, ξ) with ε < ε₀.
pub fn riemann_lebesgue_check(
    f: &ScalarField,
    eps_grid: &[f64],
    xi_grid: &[Vec<f64>],
    delta: f64,
    eps0: f64,
    c_cal: Option<f64>,
) -> Result<RiemannLebesgueReport> {
    let g = &f.grid;
    let l1_norm = f.values.iter().map(|v| v.norm()).sum::<f64>() * g.cell_volume();
    let mut modulus = Vec::new();
    for axis in 0..g.dim() {
        let dx = g.spacing()[axis];
        let mut k = 1;
        while (k as f64) * dx < delta {
            modulus.push(((k as f64) * dx, translation_modulus(f, axis, k)));
            k += 1;
        }
    }
    let pts: Vec<(f64, f64)> = modulus.iter().filter(|(_, m)| *m > 0.0).map(|(y, m)| (y.ln(), m.ln())).collect();
    if pts.len() < 2 {
        return Err(Error::InvalidArgument("translation modulus needs two shifts below δ with nonzero change".into()));
    }
    let np = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / np, pts.iter().map(|p| p.1).sum::<f64>() / np);
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let alpha = if sxx > 0.0 { (sxy / sxx).clamp(1e-3, 1.0) } else { 1.0 };
    let c0 = modulus.iter().map(|(y, m)| m / y.powf(alpha)).fold(0.0, f64::max);
    let mut min_constant = 0.0;
    let mut worst_eps = f64::NAN;
    let mut worst_xi = Vec::new();
    let mut excluded = 0;
    let transforms: Vec<f64> = xi_grid.iter().map(|xi| crate::spectral::dtft(g, &f.values, xi).norm()).collect();
    for &eps in eps_grid {
        if !(eps > 0.0 && eps < eps0) {
            excluded += 1;
            continue;
        }
        for (xi, ft) in xi_grid.iter().zip(&transforms) {
            let x2: f64 = xi.iter().map(|v| v * v).sum();
            let bound = (-eps * eps * x2 / (4.0 * PI)).exp() + eps.powf(alpha);
            let ratio = ft / bound;
            if ratio > min_constant {
                min_constant = ratio;
                worst_eps = eps;
                worst_xi = xi.clone();
            }
        }
    }
    Ok(RiemannLebesgueReport {
        l1_norm,
        c0,
        alpha,
        modulus,
        min_constant,
        worst_eps,
        worst_xi,
        excluded_eps: excluded,
        holds: c_cal.map(|c| c >= min_constant),
    })
}

/// Everything a stability sweep needs.
#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub grid: Arc<Grid>,
    pub base: Coefficients,
    pub perturbation: Coefficients,
    pub taus: Vec<f64>,
    pub consts: ScheduleConsts,
    /// h used when the schedule is in the large-gap branch.
    pub probe_h: f64,
    pub dtn_margin: usize,
    /// Replaces the scheduled ρ of all three lattices when set.
    pub lattice_rho: Option<f64>,
    pub c_a: f64,
    pub c_q: f64,
}

#[derive(Clone, Debug)]
pub struct StabilityRecord {
    pub tau: f64,
    pub gap: f64,
    pub err_da_hm1: f64,
    pub err_q_hm1: f64,
    pub err_a_linf: f64,
    pub h: f64,
    pub rho: f64,
    pub branch: String,
    pub rhs_a_linf: f64,
    pub rhs_q_hm1: f64,
    pub error: Option<String>,
    pub samples: Vec<(FourierSample, Vec<C64>)>,
}

#[derive(Clone, Debug)]
pub struct SweepReport {
    pub rows: Vec<StabilityRecord>,
    /// Least-squares slopes of log error against log gap: dA, q, A.
    pub fitted: [f64; 3],
}

/// Slope of the least-squares line through (ln x, ln y) over positive pairs.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> =
        x.iter().zip(y).filter(|(a, b)| **a > 0.0 && **b > 0.0).map(|(a, b)| (a.ln(), b.ln())).collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let np = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / np, pts.iter().map(|p| p.1).sum::<f64>() / np);
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    sxy / sxx
}

fn l2_of<F: crate::fields::Components>(f: &F) -> f64 {
    let w = f.grid().cell_volume();
    f.components().iter().map(|c| c.iter().map(|v| v.norm_sqr()).sum::<f64>()).sum::<f64>().sqrt() * w.sqrt()
}

pub fn sweep(cfg: &SweepConfig) -> Result<SweepReport> {
    let grid = cfg.grid.clone();
    let ex = Exponents::new(cfg.consts.n, cfg.consts.s, cfg.consts.alpha)?;
    let (a1, q1) = cfg.base.fields(grid.clone())?;
    let op1 = assemble(grid.clone(), &a1, &q1)?;
    let map1 = DtnMap::assemble(&op1, cfg.dtn_margin)?;
    let torus = oracle_torus(&grid)?;
    let cell: f64 = (0..torus.dim()).map(|k| 2.0 * PI / torus.period(k)).product();
    if cfg.taus.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
        return Err(Error::InvalidArgument("sweep τ values must be finite and nonnegative".into()));
    }
    let mut rows = Vec::with_capacity(cfg.taus.len());
    for &tau in &cfg.taus {
        let row = sweep_row(cfg, &ex, &grid, &op1, &map1, &torus, cell, tau);
        rows.push(row.unwrap_or_else(|e| StabilityRecord {
            tau,
            gap: f64::NAN,
            err_da_hm1: f64::NAN,
            err_q_hm1: f64::NAN,
            err_a_linf: f64::NAN,
            h: f64::NAN,
            rho: f64::NAN,
            branch: "failed".into(),
            rhs_a_linf: f64::NAN,
            rhs_q_hm1: f64::NAN,
            error: Some(e.to_string()),
            samples: Vec::new(),
        }));
    }
    let gaps: Vec<f64> = rows.iter().map(|r| r.gap).collect();
    let fitted = [
        loglog_slope(&gaps, &rows.iter().map(|r| r.err_da_hm1).collect::<Vec<_>>()),
        loglog_slope(&gaps, &rows.iter().map(|r| r.err_q_hm1).collect::<Vec<_>>()),
        loglog_slope(&gaps, &rows.iter().map(|r| r.err_a_linf).collect::<Vec<_>>()),
    ];
    Ok(SweepReport { rows, fitted })
}

#[allow(clippy::too_many_arguments)]
fn sweep_row(
    cfg: &SweepConfig,
    ex: &Exponents,
    grid: &Arc<Grid>,
    op1: &OperatorHandle,
    map1: &DtnMap,
    torus: &Torus,
    cell: f64,
    tau: f64,
) -> Result<StabilityRecord> {
    let diff = cfg.perturbation.scaled(tau);
    let (a1, q1) = (op1.a.clone(), op1.q.clone());
    let (da, dq) = diff.fields(grid.clone())?;
    let a2 = VectorField {
        grid: grid.clone(),
        comps: a1.comps.iter().zip(&da.comps).map(|(x, y)| x.iter().zip(y).map(|(a, b)| a + b).collect()).collect(),
    };
    let q2 = ScalarField { grid: grid.clone(), values: q1.values.iter().zip(&dq.values).map(|(a, b)| a + b).collect() };
    let gap = if tau == 0.0 {
        0.0
    } else {
        let op2 = assemble(grid.clone(), &a2, &q2)?;
        dtn_gap_norm(map1, &DtnMap::assemble(&op2, cfg.dtn_margin)?)?
    };
    let sched = schedule_from_gap(gap, cfg.consts, Target::A)?;
    let (h, branch) = match sched.branch {
        Branch::Small { h, .. } => (h, "small_gap"),
        Branch::LargeGap => (cfg.probe_h, "large_gap"),
        Branch::ZeroGap => (cfg.probe_h, "zero_gap"),
    };
    let (mut rho_da, mut rho_phi, mut rho_q) = rho_choices(h, cfg.consts.n, cfg.consts.s, cfg.consts.alpha);
    if let Some(r) = cfg.lattice_rho {
        (rho_da, rho_phi, rho_q) = (r, r, r);
    }
    let rhs_a_linf = stability_rhs(gap, ex, cfg.consts.s, Bound::ALinf, cfg.c_a).value;
    let rhs_q_hm1 = stability_rhs(gap, ex, cfg.consts.s, Bound::QHminus1, cfg.c_q).value;
    if tau == 0.0 {
        return Ok(StabilityRecord {
            tau,
            gap,
            err_da_hm1: 0.0,
            err_q_hm1: 0.0,
            err_a_linf: 0.0,
            h,
            rho: rho_da,
            branch: branch.into(),
            rhs_a_linf,
            rhs_q_hm1,
            error: None,
            samples: Vec::new(),
        });
    }
    let p = Pipeline { a1, q1, a2, q2, op1: assemble(grid.clone(), &op1.a, &op1.q)? };
    let lat_da = frequency_lattice(torus, rho_da);
    let lat_phi = frequency_lattice(torus, rho_phi);
    let lat_q = frequency_lattice(torus, rho_q);
    let da_true = oracle_da(&da, &lat_da)?;
    let psi = crate::fields::hodge_decompose(&da)?.potential;
    let phi_true: Vec<C64> = oracle_scalar(&psi, &lat_phi)?.into_iter().map(|v| -v).collect();
    let q_true = oracle_scalar(&dq, &lat_q)?;
    let run = |mode: SampleMode, lat: &[Vec<f64>]| -> Result<Vec<FourierSample>> {
        fourier_samples(&p, mode, lat, h).into_iter().collect()
    };
    let s_da = run(SampleMode::DA, &lat_da)?;
    let s_phi = run(SampleMode::Phi, &lat_phi)?;
    let s_q = run(SampleMode::Q, &lat_q)?;
    // exact tails from the oracle spectra of the true differences
    let da_ext = extend_reflect_a(&da)?;
    let dq_ext = extend_reflect_q(&dq)?;
    let m_da = l2_of(&crate::fields::exterior_derivative(&da_ext));
    let m_q = l2_of(&dq_ext);
    let diff_da: Vec<(Vec<f64>, Vec<C64>)> = s_da
        .iter()
        .zip(&da_true)
        .map(|(s, t)| (s.xi.clone(), s.value.iter().zip(t).map(|(a, b)| a - b).collect()))
        .collect();
    let diff_q: Vec<(Vec<f64>, Vec<C64>)> =
        s_q.iter().zip(&q_true).map(|(s, t)| (s.xi.clone(), vec![s.value[0] - t])).collect();
    let err_da_hm1 = truncated_hminus1(&diff_da, cell, rho_da, m_da);
    let err_q_hm1 = truncated_hminus1(&diff_q, cell, rho_q, m_q);
    // Fourier-L¹ surrogate of ‖A‖_∞ through A = A^sol + ∇φ:
    // |ℱA^sol| = |ℱdA|/|ξ| and |ℱ∇φ| = |ξ||ℱφ|, plus the A tail beyond ρ.
    let a_ext = extend_reflect_a(&da)?;
    let a_spec: Vec<Vec<C64>> = a_ext.comps.iter().map(|c| torus.transform(&torus.embed(&a_ext.grid, c))).collect();
    let freqs = torus.frequencies();
    let rho_a = rho_da.min(rho_phi);
    let mut tail = 0.0;
    for (i, xi) in freqs.iter().enumerate() {
        if !in_e_rho(xi, rho_a) {
            tail += a_spec.iter().map(|c| c[i].norm_sqr()).sum::<f64>().sqrt();
        }
    }
    let mut inside = 0.0;
    for (s, t) in s_da.iter().zip(&da_true).filter(|(s, _)| in_e_rho(&s.xi, rho_a)) {
        let xn = s.xi.iter().map(|v| v * v).sum::<f64>().sqrt();
        inside += s.value.iter().zip(t).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt() / xn;
    }
    for (s, t) in s_phi.iter().zip(&phi_true).filter(|(s, _)| in_e_rho(&s.xi, rho_a)) {
        let xn = s.xi.iter().map(|v| v * v).sum::<f64>().sqrt();
        inside += xn * (s.value[0] - t).norm();
    }
    let err_a_linf = (inside + tail) * cell / (2.0 * PI).powi(grid.dim() as i32);
    let mut samples = Vec::new();
    samples.extend(s_da.into_iter().zip(da_true));
    samples.extend(s_phi.into_iter().zip(phi_true.into_iter().map(|v| vec![v])));
    samples.extend(s_q.into_iter().zip(q_true.into_iter().map(|v| vec![v])));
    Ok(StabilityRecord {
        tau,
        gap,
        err_da_hm1,
        err_q_hm1,
        err_a_linf,
        h,
        rho: rho_da,
        branch: branch.into(),
        rhs_a_linf,
        rhs_q_hm1,
        error: None,
        samples,
    })
}

/// Shortest round-trip representation, fixed across runs.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:e}")
}

pub const SWEEP_CSV_HEADER: &str =
    "tau,gap,err_dA_Hm1,err_q_Hm1,err_A_Linf,h,rho,branch,rhs_A_Linf,rhs_q_Hm1,fit_dA,fit_q,fit_A,status";

pub fn sweep_csv(report: &SweepReport) -> String {
    let mut out = String::new();
    out.push_str(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in &report.rows {
        let status = r.error.as_deref().map(|e| e.replace([',', '\n'], ";")).unwrap_or_else(|| "ok".into());
        let cols = [r.tau, r.gap, r.err_da_hm1, r.err_q_hm1, r.err_a_linf, r.h, r.rho];
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            cols.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(","),
            r.branch,
            fmt_f64(r.rhs_a_linf),
            fmt_f64(r.rhs_q_hm1),
            fmt_f64(report.fitted[0]),
            fmt_f64(report.fitted[1]),
            fmt_f64(report.fitted[2]),
            status
        );
    }
    out
}

pub fn samples_csv_header(n: usize) -> String {
    let xi: Vec<String> = (1..=n).map(|k| format!("xi_{k}")).collect();
    format!(
        "{},mode,h,component,re,im,oracle_re,oracle_im,plus_re,plus_im,minus_re,minus_im,max_remainder,pairing_mismatch,i2_bound,i3_bound,cross_frequency",
        xi.join(",")
    )
}

/// One line per sample component: value, oracle (if any), both raw runs
/// and the diagnostics.
pub fn samples_csv_rows(samples: &[(FourierSample, Vec<C64>)], tag: Option<&str>) -> String {
    let mut out = String::new();
    for (s, oracle) in samples {
        for (c, v) in s.value.iter().enumerate() {
            let o = oracle.get(c).copied().unwrap_or(C64::new(f64::NAN, f64::NAN));
            let xi: Vec<String> = s.xi.iter().map(|v| fmt_f64(*v)).collect();
            let mode = match tag {
                Some(t) => format!("{}@{t}", s.mode.name()),
                None => s.mode.name().to_string(),
            };
            let vals = [
                s.h,
                c as f64,
                v.re,
                v.im,
                o.re,
                o.im,
                s.runs[0].pairing.re,
                s.runs[0].pairing.im,
                s.runs[1].pairing.re,
                s.runs[1].pairing.im,
                s.max_remainder(),
                s.max_pairing_mismatch(),
                s.i2_bound,
                s.i3_bound,
                s.cross_frequency,
            ];
            let _ = writeln!(
                out,
                "{},{},{}",
                xi.join(","),
                mode,
                vals.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(",")
            );
        }
    }
    out
}
