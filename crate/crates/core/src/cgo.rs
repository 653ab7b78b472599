//! Reflected complex geometric optics solutions.
//!
//! Phases are lattice-null: the discrete phase k solves σ(k) = 0 for the
//! 7-point symbol σ, so the discrete Δ_h² annihilates e^{ix·k}a exactly for
//! constant and linear amplitudes and the remainder is driven only by the
//! lower-order terms. Remainders are computed on a periodic torus holding
//! the enclosing box B by inverting σ(κ + m)² on a half-shifted frequency
//! lattice, with the lower-order terms folded in by preconditioned GMRES.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::{reflect_index, Grid};
use crate::error::{Error, Result};
use crate::fields::{extend_reflect_a, extend_reflect_q, semiclassical_h1_norm, ScalarField, VectorField};
use crate::krylov::gmres;
use crate::spectral::{fast_size, signed_mode, FftPlan};
use crate::C64;

const ZERO: C64 = C64::new(0.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

/// B is the doubled box inflated by this factor per axis.
pub const BOX_INFLATION: f64 = 1.25;
/// Relative residual target of the remainder solve.
pub const REMAINDER_TOLERANCE: f64 = 1e-10;
const GMRES_RESTART: usize = 40;
const GMRES_MAX_ITERATIONS: usize = 2000;
/// Torus layers kept beyond the doubled grid when evaluating the total
/// field (the biharmonic stencil reaches two nodes out).
const HALO: usize = 2;

/// Orthonormal basis e(1..n) and the unit vectors μ⁽¹⁾, μ⁽²⁾.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub basis: Vec<Vec<f64>>,
    pub mu1: Vec<f64>,
    pub mu2: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn build_frame(xi: &[f64]) -> Result<Frame> {
    let n = xi.len();
    if n < 3 {
        return Err(Error::InvalidArgument(format!("frames need n >= 3, got {n}")));
    }
    let xn = norm(xi);
    if !(xn > 0.0) || !xn.is_finite() {
        return Err(Error::InvalidArgument("ξ must be a nonzero finite vector".into()));
    }
    let tan = norm(&xi[..n - 1]);
    let unit = |k: usize| (0..n).map(|j| if j == k { 1.0 } else { 0.0 }).collect::<Vec<f64>>();
    let basis: Vec<Vec<f64>> = if tan == 0.0 {
        (0..n).map(unit).collect()
    } else {
        let mut e1: Vec<f64> = xi[..n - 1].iter().map(|v| v / tan).collect();
        e1.push(0.0);
        let mut basis = vec![e1, unit(n - 1)];
        // Gram–Schmidt over e_1, e_2, … for the middle vectors.
        for k in 0..n {
            if basis.len() == n {
                break;
            }
            let mut v = unit(k);
            for _ in 0..2 {
                for b in &basis {
                    let c = dot(b, &v);
                    v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
                }
            }
            let l = norm(&v);
            if l > 1e-8 {
                v.iter_mut().for_each(|x| *x /= l);
                basis.push(v);
            }
        }
        let en = basis.remove(1);
        basis.push(en);
        basis
    };
    let (a, b) = (-xi[n - 1] / xn, tan / xn);
    let mu1: Vec<f64> = (0..n).map(|j| a * basis[0][j] + b * basis[n - 1][j]).collect();
    let mu2 = basis[1].clone();
    Ok(Frame { basis, mu1, mu2 })
}

impl Frame {
    /// The frame with μ⁽²⁾ replaced by −μ⁽²⁾.
    pub fn flipped(&self) -> Frame {
        Frame { basis: self.basis.clone(), mu1: self.mu1.clone(), mu2: self.mu2.iter().map(|v| -v).collect() }
    }

    /// Largest violation of the orthonormality conditions against ξ.
    pub fn defect(&self, xi: &[f64]) -> f64 {
        let xn = norm(xi);
        [
            dot(&self.mu1, &self.mu2).abs(),
            dot(&self.mu1, xi).abs() / xn,
            dot(&self.mu2, xi).abs() / xn,
            (norm(&self.mu1) - 1.0).abs(),
            (norm(&self.mu2) - 1.0).abs(),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Complex frequencies of the two CGOs and the cross frequencies ξ±.
#[derive(Clone, Debug, PartialEq)]
pub struct Zetas {
    pub zeta1: Vec<C64>,
    pub zeta2: Vec<C64>,
    pub xi_plus: Vec<f64>,
    pub xi_minus: Vec<f64>,
}

pub fn build_zetas(frame: &Frame, xi: &[f64], h: f64) -> Result<Zetas> {
    let n = xi.len();
    let x2 = dot(xi, xi);
    let disc = 1.0 - h * h * x2 / 4.0;
    if !(h > 0.0) || disc < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "need h > 0 and 1 − h²|ξ|²/4 ≥ 0, got h = {h}, |ξ| = {}",
            x2.sqrt()
        )));
    }
    let c = disc.sqrt();
    let zeta1 = (0..n).map(|j| C64::new(h * xi[j] / 2.0 + c * frame.mu1[j], frame.mu2[j])).collect();
    let zeta2 = (0..n).map(|j| C64::new(-h * xi[j] / 2.0 + c * frame.mu1[j], -frame.mu2[j])).collect();
    let tn = (2.0 / h) * c * norm(&xi[..n - 1]) / x2.sqrt();
    let mut xi_plus = xi[..n - 1].to_vec();
    let mut xi_minus = xi_plus.clone();
    xi_plus.push(tn);
    xi_minus.push(-tn);
    Ok(Zetas { zeta1, zeta2, xi_plus, xi_minus })
}

pub fn complex_dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AmplitudeMode {
    /// a ≡ 1.
    One,
    /// a(x) = μ⁽¹⁾·x, so (ζ⁽⁰⁾·∇)a = 1.
    Linear,
}

/// Which CGO of the pair: u₂ solves ℒu₂ = 0, v solves ℒ*v = 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Which {
    U2,
    V,
}

/// Everything that defines one reflected CGO pair.
#[derive(Clone, Debug, PartialEq)]
pub struct CgoSpec {
    pub xi: Vec<f64>,
    pub h: f64,
    /// +1 or −1: the sign in front of μ⁽²⁾.
    pub sign: f64,
    /// Frame with the sign applied to μ⁽²⁾.
    pub frame: Frame,
    pub zetas: Zetas,
    pub zeta1_0: Vec<C64>,
    pub zeta2_0: Vec<C64>,
    pub mode_u2: AmplitudeMode,
    pub mode_v: AmplitudeMode,
}

impl CgoSpec {
    pub fn new(xi: &[f64], h: f64, sign: f64, mode_u2: AmplitudeMode) -> Result<CgoSpec> {
        if sign != 1.0 && sign != -1.0 {
            return Err(Error::InvalidArgument(format!("μ⁽²⁾ sign must be ±1, got {sign}")));
        }
        let base = build_frame(xi)?;
        let frame = if sign < 0.0 { base.flipped() } else { base };
        let zetas = build_zetas(&frame, xi, h)?;
        let zeta1_0 = frame.mu1.iter().zip(&frame.mu2).map(|(a, b)| C64::new(*a, *b)).collect();
        let zeta2_0 = frame.mu1.iter().zip(&frame.mu2).map(|(a, b)| C64::new(*a, -*b)).collect();
        Ok(CgoSpec { xi: xi.to_vec(), h, sign, frame, zetas, zeta1_0, zeta2_0, mode_u2, mode_v: AmplitudeMode::One })
    }

    pub fn amplitude(&self, which: Which) -> Amplitude {
        let mode = match which {
            Which::U2 => self.mode_u2,
            Which::V => self.mode_v,
        };
        Amplitude { mode, mu1: self.frame.mu1.clone() }
    }

    pub fn zeta0(&self, which: Which) -> &[C64] {
        match which {
            Which::U2 => &self.zeta2_0,
            Which::V => &self.zeta1_0,
        }
    }
}

/// A solution of the transport equations (ζ⁽⁰⁾·∇)²a = 0.
#[derive(Clone, Debug, PartialEq)]
pub struct Amplitude {
    pub mode: AmplitudeMode,
    pub mu1: Vec<f64>,
}

impl Amplitude {
    pub fn eval(&self, x: &[f64]) -> C64 {
        match self.mode {
            AmplitudeMode::One => C64::new(1.0, 0.0),
            AmplitudeMode::Linear => C64::new(dot(&self.mu1, x), 0.0),
        }
    }

    /// ∇a (constant for both modes).
    pub fn gradient(&self) -> Vec<f64> {
        match self.mode {
            AmplitudeMode::One => vec![0.0; self.mu1.len()],
            AmplitudeMode::Linear => self.mu1.clone(),
        }
    }

    /// (ζ⁽⁰⁾·∇)a and (ζ⁽⁰⁾·∇)²a.
    pub fn transport(&self, zeta0: &[C64]) -> (C64, C64) {
        let g = self.gradient();
        (zeta0.iter().zip(&g).map(|(z, d)| z * d).sum(), ZERO)
    }
}

/// The amplitude of `mode` sampled on a grid, after checking the transport
/// equations against ζ⁽⁰⁾.
pub fn solve_amplitude(mode: AmplitudeMode, frame: &Frame, zeta0: &[C64], grid: Arc<Grid>) -> Result<ScalarField> {
    let amp = Amplitude { mode, mu1: frame.mu1.clone() };
    let (first, second) = amp.transport(zeta0);
    if second != ZERO || (mode == AmplitudeMode::Linear && (first - 1.0).norm() > 1e-12) {
        return Err(Error::InvalidArgument("amplitude does not solve the transport equation for this ζ⁽⁰⁾".into()));
    }
    Ok(ScalarField::from_fn(grid, |x| amp.eval(x)))
}

/// σ(k) = Σ_j (2cos(k_jΔ_j) − 2)/Δ_j², the symbol of the 7-point Laplacian.
pub fn lattice_symbol(k: &[C64], spacing: &[f64]) -> C64 {
    k.iter().zip(spacing).map(|(kj, d)| (2.0 * (kj * d).cos() - 2.0) / (d * d)).sum()
}

/// Discrete phases k₁ (for v) and k₂ (for u₂) with σ(k₁) = σ(k₂) = 0 and
/// k₂ − conj(k₁) = −ξ exactly; they tend to ζ₁/h and ζ₂/h as Δ → 0.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticePhases {
    pub k1: Vec<C64>,
    pub k2: Vec<C64>,
    pub newton_iterations: usize,
    /// max(|σ(k₁)|, |σ(k₂)|) / |k|².
    pub residual: f64,
}

pub fn lattice_phases(spec: &CgoSpec, spacing: &[f64]) -> Result<LatticePhases> {
    let n = spec.xi.len();
    let h = spec.h;
    let xi = &spec.xi;
    let xn = norm(xi);
    // ζ₁/h = ξ/2 + w₀, ζ₂/h = −ξ/2 + conj(w₀)
    let mut w: Vec<C64> = (0..n).map(|j| spec.zetas.zeta1[j] / h - xi[j] / 2.0).collect();
    let scale: f64 = w.iter().map(|v| v.norm_sqr()).sum::<f64>().max(1.0);
    let alpha: Vec<f64> = spacing.iter().map(|d| 2.0 / (d * d)).collect();
    let cj: Vec<f64> = (0..n).map(|j| (xi[j] * spacing[j] / 2.0).cos()).collect();
    let sj: Vec<f64> = (0..n).map(|j| (xi[j] * spacing[j] / 2.0).sin()).collect();
    let eval = |w: &[C64]| -> (C64, C64) {
        let mut f1 = ZERO;
        let mut f2 = ZERO;
        for j in 0..n {
            let z = w[j] * spacing[j];
            f1 += alpha[j] * (cj[j] * z.cos() - 1.0);
            f2 += alpha[j] * sj[j] * z.sin() / xn;
        }
        (f1, f2)
    };
    let mut iterations = 0;
    for it in 1..=60 {
        iterations = it;
        let (f1, f2) = eval(&w);
        let j1: Vec<C64> = (0..n).map(|j| -alpha[j] * spacing[j] * cj[j] * (w[j] * spacing[j]).sin()).collect();
        let j2: Vec<C64> = (0..n).map(|j| alpha[j] * spacing[j] * sj[j] * (w[j] * spacing[j]).cos() / xn).collect();
        // min-norm step −Jᴴ(JJᴴ)⁻¹F
        let g11: C64 = j1.iter().map(|v| v.norm_sqr()).sum::<f64>().into();
        let g22: C64 = j2.iter().map(|v| v.norm_sqr()).sum::<f64>().into();
        let g12: C64 = j1.iter().zip(&j2).map(|(a, b)| a * b.conj()).sum();
        let det = g11 * g22 - g12 * g12.conj();
        if det.norm() == 0.0 {
            return Err(Error::Numerical("lattice phase Jacobian is singular".into()));
        }
        let y1 = (g22 * f1 - g12 * f2) / det;
        let y2 = (-g12.conj() * f1 + g11 * f2) / det;
        let mut step = 0.0;
        for j in 0..n {
            let d = -(j1[j].conj() * y1 + j2[j].conj() * y2);
            w[j] += d;
            step += d.norm_sqr();
        }
        if step.sqrt() <= 1e-15 * scale.sqrt() {
            break;
        }
    }
    let k1: Vec<C64> = (0..n).map(|j| xi[j] / 2.0 + w[j]).collect();
    let k2: Vec<C64> = (0..n).map(|j| -xi[j] / 2.0 + w[j].conj()).collect();
    let residual = lattice_symbol(&k1, spacing).norm().max(lattice_symbol(&k2, spacing).norm()) / scale;
    if !(residual <= 1e-12) {
        return Err(Error::NotConverged {
            iterations,
            what: "lattice-null phase Newton iteration".into(),
            history: vec![residual],
        });
    }
    Ok(LatticePhases { k1, k2, newton_iterations: iterations, residual })
}

/// Periodic lattice covering B with the doubled grid embedded at an offset.
#[derive(Clone, Debug, PartialEq)]
pub struct RemainderTorus {
    pub shape: Vec<usize>,
    pub spacing: Vec<f64>,
    /// Torus index of doubled-grid node 0 along each axis.
    pub offset: Vec<usize>,
    /// Physical position of torus node 0.
    pub origin: Vec<f64>,
}

impl RemainderTorus {
    pub fn for_grid(doubled: &Grid) -> RemainderTorus {
        let n = doubled.dim();
        let mut shape = Vec::with_capacity(n);
        let mut offset = Vec::with_capacity(n);
        let mut origin = Vec::with_capacity(n);
        for k in 0..n {
            let c = doubled.counts()[k];
            let want = ((BOX_INFLATION * (c - 1) as f64).ceil() as usize + 1).max(c + 2 * HALO + 2);
            let p = fast_size(want);
            let o = (p - c) / 2;
            shape.push(p);
            offset.push(o);
            origin.push(doubled.lo()[k] - o as f64 * doubled.spacing()[k]);
        }
        RemainderTorus { shape, spacing: doubled.spacing().to_vec(), offset, origin }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn strides(&self) -> Vec<usize> {
        let n = self.shape.len();
        let mut s = vec![1usize; n];
        for k in (0..n - 1).rev() {
            s[k] = s[k + 1] * self.shape[k + 1];
        }
        s
    }

    fn position(&self, t: usize, out: &mut [f64]) {
        let s = self.strides();
        for k in 0..self.shape.len() {
            out[k] = self.origin[k] + ((t / s[k]) % self.shape[k]) as f64 * self.spacing[k];
        }
    }

    /// Index of the torus neighbour of `t` one step along `axis`.
    fn shift(&self, t: usize, axis: usize, step: isize, strides: &[usize]) -> usize {
        let p = self.shape[axis];
        let i = (t / strides[axis]) % p;
        let j = (i as isize + step).rem_euclid(p as isize) as usize;
        t + j * strides[axis] - i * strides[axis]
    }

    fn embed(&self, doubled: &Grid, values: &[C64]) -> Vec<C64> {
        let strides = self.strides();
        let n = doubled.dim();
        let mut out = vec![ZERO; self.len()];
        let mut mi = vec![0usize; n];
        for (idx, v) in values.iter().enumerate() {
            doubled.multi_index(idx, &mut mi);
            let t: usize = (0..n).map(|k| (mi[k] + self.offset[k]) * strides[k]).sum();
            out[t] = *v;
        }
        out
    }
}

/// Outcome of one torus remainder solve.
#[derive(Clone, Debug)]
pub struct RemainderSolution {
    pub torus: RemainderTorus,
    /// Phase of the ansatz e^{ix·k}(a + r).
    pub k: Vec<C64>,
    /// Half-lattice shift s; r = e^{ix·s}ρ with ρ periodic.
    pub shift: Vec<f64>,
    pub rho: Vec<C64>,
    pub min_symbol: f64,
    pub history: Vec<f64>,
    /// ‖P_κρ − f‖/‖f‖ on the torus.
    pub residual: f64,
}

/// Coefficients prepared on the torus.
struct TorusCoefficients {
    a: Vec<Vec<C64>>,
    q: Vec<C64>,
    adjoint: bool,
}

impl TorusCoefficients {
    fn new(torus: &RemainderTorus, a: &VectorField, q: &ScalarField, adjoint: bool) -> TorusCoefficients {
        let g = &a.grid;
        let conj = |v: Vec<C64>| if adjoint { v.into_iter().map(|c| c.conj()).collect() } else { v };
        TorusCoefficients {
            a: a.comps.iter().map(|c| conj(torus.embed(g, c))).collect(),
            q: conj(torus.embed(g, &q.values)),
            adjoint,
        }
    }

    /// Σ_j A_j D_j + q (or Σ_j D_j(Ā_j ·) + q̄) conjugated by the phase
    /// e^{ix·κ}, applied to a periodic ρ.
    fn apply(&self, torus: &RemainderTorus, kappa: &[C64], rho: &[C64]) -> Vec<C64> {
        let strides = torus.strides();
        let n = torus.shape.len();
        let ep: Vec<C64> = (0..n).map(|j| (I * kappa[j] * torus.spacing[j]).exp()).collect();
        let em: Vec<C64> = (0..n).map(|j| (-I * kappa[j] * torus.spacing[j]).exp()).collect();
        let mut out: Vec<C64> = rho.iter().zip(&self.q).map(|(r, q)| r * q).collect();
        for j in 0..n {
            let c = -I / (2.0 * torus.spacing[j]);
            let aj = &self.a[j];
            if self.adjoint {
                for t in 0..rho.len() {
                    let p = torus.shift(t, j, 1, &strides);
                    let m = torus.shift(t, j, -1, &strides);
                    if aj[p] != ZERO || aj[m] != ZERO {
                        out[t] += c * (ep[j] * aj[p] * rho[p] - em[j] * aj[m] * rho[m]);
                    }
                }
            } else {
                for t in 0..rho.len() {
                    if aj[t] != ZERO {
                        let p = torus.shift(t, j, 1, &strides);
                        let m = torus.shift(t, j, -1, &strides);
                        out[t] += aj[t] * c * (ep[j] * rho[p] - em[j] * rho[m]);
                    }
                }
            }
        }
        out
    }

    /// The same operator on e^{ix·k}a, divided by e^{ix·k}, for a
    /// non-periodic amplitude evaluated at physical positions.
    fn apply_to_amplitude(&self, torus: &RemainderTorus, k: &[C64], amp: &Amplitude) -> Vec<C64> {
        let strides = torus.strides();
        let n = torus.shape.len();
        let ep: Vec<C64> = (0..n).map(|j| (I * k[j] * torus.spacing[j]).exp()).collect();
        let em: Vec<C64> = (0..n).map(|j| (-I * k[j] * torus.spacing[j]).exp()).collect();
        let mut x = vec![0.0; n];
        let mut out = vec![ZERO; torus.len()];
        for (t, o) in out.iter_mut().enumerate() {
            torus.position(t, &mut x);
            let a0 = amp.eval(&x);
            let mut acc = self.q[t] * a0;
            for j in 0..n {
                let c = -I / (2.0 * torus.spacing[j]);
                let mut xp = x.clone();
                xp[j] += torus.spacing[j];
                let mut xm = x.clone();
                xm[j] -= torus.spacing[j];
                let (ap, am) = (amp.eval(&xp), amp.eval(&xm));
                if self.adjoint {
                    let p = torus.shift(t, j, 1, &strides);
                    let m = torus.shift(t, j, -1, &strides);
                    acc += c * (ep[j] * self.a[j][p] * ap - em[j] * self.a[j][m] * am);
                } else if self.a[j][t] != ZERO {
                    acc += self.a[j][t] * c * (ep[j] * ap - em[j] * am);
                }
            }
            *o = acc;
        }
        out
    }
}

/// e^{−ix·k}Δ_h²(e^{ix·k}a) for constant or linear a: σ²a + 2σb with
/// b = 2iΣ_j ∂_j a·sin(k_jΔ_j)/Δ_j.
fn bilaplacian_of_amplitude(k: &[C64], spacing: &[f64], amp: &Amplitude, x: &[f64]) -> C64 {
    let s = lattice_symbol(k, spacing);
    let g = amp.gradient();
    let b: C64 = (0..k.len()).map(|j| 2.0 * I * g[j] * (k[j] * spacing[j]).sin() / spacing[j]).sum();
    s * s * amp.eval(x) + 2.0 * s * b
}

/// Solve for r with ℒ(e^{ix·k}(a + r)) = 0 on the torus (or ℒ* when
/// `adjoint`); `a_t`, `q_t` live on the doubled grid and vanish outside it.
pub fn solve_remainder(
    a_t: &VectorField,
    q_t: &ScalarField,
    k: &[C64],
    amp: &Amplitude,
    adjoint: bool,
) -> Result<RemainderSolution> {
    let doubled = &a_t.grid;
    let n = doubled.dim();
    let torus = RemainderTorus::for_grid(doubled);
    let coeffs = TorusCoefficients::new(&torus, a_t, q_t, adjoint);
    let len = torus.len();
    let strides = torus.strides();
    // Pick the half-lattice shift that keeps σ(κ + m) farthest from zero.
    let freq = |j: usize, m: usize| {
        2.0 * std::f64::consts::PI * signed_mode(m, torus.shape[j]) as f64 / (torus.shape[j] as f64 * torus.spacing[j])
    };
    let mut best: Option<(f64, Vec<f64>, Vec<C64>)> = None;
    for pattern in 1..(1usize << n) {
        let shift: Vec<f64> = (0..n)
            .map(|j| {
                if pattern >> j & 1 == 1 {
                    std::f64::consts::PI / (torus.shape[j] as f64 * torus.spacing[j])
                } else {
                    0.0
                }
            })
            .collect();
        let mut symbol = vec![ZERO; len];
        let mut min = f64::INFINITY;
        let mut kk = vec![ZERO; n];
        for (t, s) in symbol.iter_mut().enumerate() {
            for j in 0..n {
                kk[j] = k[j] + shift[j] + freq(j, (t / strides[j]) % torus.shape[j]);
            }
            *s = lattice_symbol(&kk, &torus.spacing);
            min = min.min(s.norm());
        }
        if best.as_ref().map_or(true, |b| min > b.0) {
            best = Some((min, shift, symbol));
        }
    }
    let (min_symbol, shift, symbol) = best.unwrap();
    let max_symbol = symbol.iter().map(|s| s.norm()).fold(0.0, f64::max);
    if !(min_symbol > 1e-10 * max_symbol) {
        return Err(Error::Numerical(format!(
            "Faddeev symbol minimum {min_symbol:e} is too small on every half shift"
        )));
    }
    let kappa: Vec<C64> = (0..n).map(|j| k[j] + shift[j]).collect();
    // Source −e^{−ix·s}[Δ_k²a + lower-order terms on a].
    let lower_a = coeffs.apply_to_amplitude(&torus, k, amp);
    let mut x = vec![0.0; n];
    let f: Vec<C64> = (0..len)
        .map(|t| {
            torus.position(t, &mut x);
            let phase = C64::from_polar(1.0, -dot(&x, &shift));
            -phase * (bilaplacian_of_amplitude(k, &torus.spacing, amp, &x) + lower_a[t])
        })
        .collect();
    let plan = FftPlan::new(&torus.shape);
    let inv_mult: Vec<C64> = symbol.iter().map(|s| 1.0 / (s * s * len as f64)).collect();
    let precondition = |g: &[C64]| -> Vec<C64> {
        let mut d = g.to_vec();
        plan.process(&mut d, false);
        d.iter_mut().zip(&inv_mult).for_each(|(a, m)| *a *= m);
        plan.process(&mut d, true);
        d
    };
    let rhs = precondition(&f);
    let op = |r: &[C64]| -> Vec<C64> {
        let l = coeffs.apply(&torus, &kappa, r);
        let m = precondition(&l);
        r.iter().zip(&m).map(|(a, b)| a + b).collect()
    };
    let out = gmres(op, &rhs, REMAINDER_TOLERANCE, GMRES_RESTART, GMRES_MAX_ITERATIONS, "remainder GMRES")?;
    let rho = out.x;
    // Unpreconditioned residual.
    let mut d = rho.clone();
    plan.process(&mut d, false);
    d.iter_mut().zip(&symbol).for_each(|(a, s)| *a *= s * s / len as f64);
    plan.process(&mut d, true);
    let l = coeffs.apply(&torus, &kappa, &rho);
    let fnorm = f.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let residual = if fnorm == 0.0 {
        0.0
    } else {
        d.iter().zip(&l).zip(&f).map(|((a, b), c)| (a + b - c).norm_sqr()).sum::<f64>().sqrt() / fnorm
    };
    Ok(RemainderSolution { torus, k: k.to_vec(), shift, rho, min_symbol, history: out.history, residual })
}

impl RemainderSolution {
    /// r = e^{ix·s}ρ at torus node `t`.
    fn r_at(&self, t: usize, x: &[f64]) -> C64 {
        self.rho[t] * C64::from_polar(1.0, dot(x, &self.shift))
    }

    /// Total field e^{ix·k}(a + r), its 7-point Laplacian and r on the
    /// doubled grid.
    fn fields_on(&self, doubled: &Grid, amp: &Amplitude) -> (Vec<C64>, Vec<C64>, Vec<C64>, Vec<C64>) {
        let n = doubled.dim();
        let torus = &self.torus;
        let strides = torus.strides();
        // Box of doubled nodes plus HALO layers, in torus indices.
        let lo: Vec<usize> = torus.offset.iter().map(|o| o - HALO).collect();
        let ext: Vec<usize> = doubled.counts().iter().map(|c| c + 2 * HALO).collect();
        let mut ext_strides = vec![1usize; n];
        for k in (0..n - 1).rev() {
            ext_strides[k] = ext_strides[k + 1] * ext[k + 1];
        }
        let ext_len: usize = ext.iter().product();
        let mut x = vec![0.0; n];
        let mut mi = vec![0usize; n];
        let to_torus = |e: usize, mi: &mut [usize]| -> usize {
            let mut t = 0;
            for k in 0..n {
                mi[k] = (e / ext_strides[k]) % ext[k];
                t += (mi[k] + lo[k]) * strides[k];
            }
            t
        };
        let mut total = vec![ZERO; ext_len];
        for (e, u) in total.iter_mut().enumerate() {
            let t = to_torus(e, &mut mi);
            torus.position(t, &mut x);
            let phase = complex_dot(&self.k, &x.iter().map(|v| C64::new(*v, 0.0)).collect::<Vec<_>>());
            *u = (I * phase).exp() * (amp.eval(&x) + self.r_at(t, &x));
        }
        let lap_at = |e: usize| -> C64 {
            let mut acc = ZERO;
            for k in 0..n {
                let d = torus.spacing[k];
                acc += (total[e + ext_strides[k]] - 2.0 * total[e] + total[e - ext_strides[k]]) / (d * d);
            }
            acc
        };
        let mut u = vec![ZERO; doubled.len()];
        let mut w = vec![ZERO; doubled.len()];
        let mut r = vec![ZERO; doubled.len()];
        let mut a = vec![ZERO; doubled.len()];
        for idx in 0..doubled.len() {
            doubled.multi_index(idx, &mut mi);
            let e: usize = (0..n).map(|k| (mi[k] + HALO) * ext_strides[k]).sum();
            let t: usize = (0..n).map(|k| (mi[k] + torus.offset[k]) * strides[k]).sum();
            u[idx] = total[e];
            w[idx] = lap_at(e);
            torus.position(t, &mut x);
            r[idx] = self.r_at(t, &x);
            a[idx] = amp.eval(&x);
        }
        (u, w, r, a)
    }
}

/// Residual of ℒ (or ℒ*) applied to the total field on the doubled grid,
/// computed in physical space from U and W = Δ_h U. Each node is weighted
/// by 1/|e^{ix·k}| so the exponential growth of U does not swamp the sum.
fn physical_residual(
    doubled: &Grid,
    a_t: &VectorField,
    q_t: &ScalarField,
    u: &[C64],
    w: &[C64],
    k: &[C64],
    adjoint: bool,
) -> (f64, f64) {
    let n = doubled.dim();
    let mut res = 0.0;
    let mut scale = 0.0;
    for &m in doubled.interior() {
        // skip nodes whose Δ_h W would need W outside the doubled grid
        let mut lw = ZERO;
        for k in 0..n {
            let s = doubled.strides()[k];
            let d = doubled.spacing()[k];
            lw += (w[m + s] - 2.0 * w[m] + w[m - s]) / (d * d);
        }
        let mut lower = ZERO;
        for j in 0..n {
            let s = doubled.strides()[j];
            let c = -I / (2.0 * doubled.spacing()[j]);
            let (aj, p, q) = (&a_t.comps[j], m + s, m - s);
            lower += if adjoint { c * (aj[p].conj() * u[p] - aj[q].conj() * u[q]) } else { aj[m] * c * (u[p] - u[q]) };
        }
        let qm = if adjoint { q_t.values[m].conj() } else { q_t.values[m] };
        lower += qm * u[m];
        let weight = (0..n).map(|j| doubled.coord(m, j) * k[j].im).sum::<f64>().exp();
        res += ((lw + lower) * weight).norm_sqr();
        scale += (lower * weight).norm_sqr();
    }
    (res.sqrt(), scale.sqrt())
}

/// Injected faults for the self-check suite.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Add the reflected copy instead of subtracting it.
    ReflectionSign,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CgoDiagnostics {
    /// ‖ℒU‖ over the size of its lower-order part, both weighted by
    /// 1/|e^{ix·k}| over interior doubled nodes.
    pub pde_residual: f64,
    /// Torus residual of the remainder equation.
    pub torus_residual: f64,
    pub remainder_h1_scl: f64,
    pub remainder_h1_scl_doubled: f64,
    pub gmres_iterations: usize,
    pub gmres_history: Vec<f64>,
    pub min_symbol: f64,
    pub shift: Vec<f64>,
    pub phase: Vec<[f64; 2]>,
    pub newton_residual: f64,
    /// max(|u|, |Δ_h u|) on Γ₀ over the max on Ω.
    pub gamma0_relative: f64,
    pub u_l2: f64,
}

/// A reflected CGO restricted to Ω together with the unreflected field on
/// Ω ∪ Ω*.
#[derive(Clone, Debug)]
pub struct CgoSolution {
    pub which: Which,
    pub u: ScalarField,
    /// Δ_h u at every Ω node (boundary nodes use torus neighbours).
    pub w: ScalarField,
    pub total: ScalarField,
    pub total_laplacian: ScalarField,
    pub amplitude: ScalarField,
    pub remainder: ScalarField,
    pub diagnostics: CgoDiagnostics,
}

/// u = Ũ − Ũ∘x* on Ω with Ũ = e^{ix·k}(a + r) built from the reflected
/// coefficients; for `Which::V` the adjoint operator is used. `a`, `q` are
/// given on Ω.
pub fn assemble_reflected(
    spec: &CgoSpec,
    which: Which,
    a: &VectorField,
    q: &ScalarField,
    fault: Fault,
) -> Result<CgoSolution> {
    let grid = a.grid.clone();
    if !grid.is_half_space() {
        return Err(Error::InvalidGrid("reflected CGOs need a box with top face on x_n = 0".into()));
    }
    if q.grid.as_ref() != grid.as_ref() {
        return Err(Error::DimensionMismatch("A and q live on different grids".into()));
    }
    let a_t = extend_reflect_a(a)?;
    let q_t = extend_reflect_q(q)?;
    let doubled = a_t.grid.clone();
    let phases = lattice_phases(spec, doubled.spacing())?;
    let (k, adjoint) = match which {
        Which::U2 => (phases.k2.clone(), false),
        Which::V => (phases.k1.clone(), true),
    };
    let amp = spec.amplitude(which);
    let sol = solve_remainder(&a_t, &q_t, &k, &amp, adjoint)?;
    let (tu, tw, tr, ta) = sol.fields_on(&doubled, &amp);
    let (res, scale) = physical_residual(&doubled, &a_t, &q_t, &tu, &tw, &k, adjoint);
    let sign = match fault {
        Fault::None => -1.0,
        Fault::ReflectionSign => 1.0,
    };
    let mut u = ScalarField::zeros(grid.clone());
    let mut w = ScalarField::zeros(grid.clone());
    let mut r_omega = ScalarField::zeros(grid.clone());
    for idx in 0..grid.len() {
        let d = grid.to_doubled(idx, &doubled);
        let ds = reflect_index(&doubled, d);
        u.values[idx] = tu[d] + sign * tu[ds];
        w.values[idx] = tw[d] + sign * tw[ds];
        r_omega.values[idx] = tr[d];
    }
    let part_top = grid.counts()[grid.dim() - 1] - 1;
    let mut top_max = 0.0f64;
    let mut all_max = 0.0f64;
    for idx in 0..grid.len() {
        let m = u.values[idx].norm().max(w.values[idx].norm());
        all_max = all_max.max(m);
        if grid.axis_index(idx, grid.dim() - 1) == part_top {
            top_max = top_max.max(m);
        }
    }
    let remainder = ScalarField { grid: doubled.clone(), values: tr };
    let diagnostics = CgoDiagnostics {
        pde_residual: if scale > 0.0 { res / scale } else { res },
        torus_residual: sol.residual,
        remainder_h1_scl: semiclassical_h1_norm(&r_omega, spec.h)?,
        remainder_h1_scl_doubled: semiclassical_h1_norm(&remainder, spec.h)?,
        gmres_iterations: sol.history.len(),
        gmres_history: sol.history.clone(),
        min_symbol: sol.min_symbol,
        shift: sol.shift.clone(),
        phase: k.iter().map(|c| [c.re, c.im]).collect(),
        newton_residual: phases.residual,
        gamma0_relative: if all_max > 0.0 { top_max / all_max } else { 0.0 },
        u_l2: u.l2_norm(),
    };
    Ok(CgoSolution {
        which,
        u,
        w,
        total: ScalarField { grid: doubled.clone(), values: tu },
        total_laplacian: ScalarField { grid: doubled.clone(), values: tw },
        amplitude: ScalarField { grid: doubled, values: ta },
        remainder,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::domain::build_grid;
    use crate::forward::assemble;

    fn grid(c: usize) -> Arc<Grid> {
        Arc::new(build_grid(3, &[(-1.0, 1.0), (-1.0, 1.0), (-1.0, 0.0)], &[2 * c - 1, 2 * c - 1, c]).unwrap())
    }

    #[test]
    fn frame_examples() {
        let f = build_frame(&[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(f.mu1, vec![0.0, 0.0, 1.0]);
        assert_eq!(f.mu2, vec![0.0, 1.0, 0.0]);
        let f = build_frame(&[0.0, 0.0, 1.0]).unwrap();
        assert_eq!(f.mu1, vec![-1.0, 0.0, 0.0]);
        assert_eq!(f.mu2, vec![0.0, 1.0, 0.0]);
        assert!(build_frame(&[0.0, 0.0, 0.0]).is_err());
        let f = build_frame(&[0.3, -2.0, 1.1, 0.4]).unwrap();
        assert!(f.defect(&[0.3, -2.0, 1.1, 0.4]) < 1e-14);
    }

    #[test]
    fn zeta_examples() {
        let xi = [1.0, 0.0, 0.0];
        let z = build_zetas(&build_frame(&xi).unwrap(), &xi, 0.1).unwrap();
        let c = (1.0f64 - 0.0025).sqrt();
        assert!((z.zeta1[0] - C64::new(0.05, 0.0)).norm() < 1e-15);
        assert!((z.zeta1[1] - C64::new(0.0, 1.0)).norm() < 1e-15);
        assert!((z.zeta1[2] - C64::new(0.998_749_217_771_909, 0.0)).norm() < 1e-14);
        assert!((z.zeta2[0] - C64::new(-0.05, 0.0)).norm() < 1e-15);
        assert!((z.zeta2[1] - C64::new(0.0, -1.0)).norm() < 1e-15);
        assert!((z.zeta2[2].re - c).abs() < 1e-15);
        assert!((z.xi_plus[2] - 19.974_984_355_438_18).abs() < 1e-12);
        assert_eq!(z.xi_minus[2], -z.xi_plus[2]);
        assert!(build_zetas(&build_frame(&xi).unwrap(), &xi, 2.5).is_err());
    }

    proptest! {
        #[test]
        fn zeta_identities(x0 in -5.0f64..5.0, x1 in -5.0f64..5.0, x2 in -5.0f64..5.0, hf in 0.01f64..1.0, flip in any::<bool>()) {
            let xi = [x0, x1, x2];
            let xn = norm(&xi);
            prop_assume!(xn > 1e-3);
            let h = hf * 2.0 / xn;
            let spec = CgoSpec::new(&xi, h, if flip { -1.0 } else { 1.0 }, AmplitudeMode::One).unwrap();
            prop_assert!(spec.frame.defect(&xi) < 1e-13);
            let z = &spec.zetas;
            prop_assert!(complex_dot(&z.zeta1, &z.zeta1).norm() < 1e-13);
            prop_assert!(complex_dot(&z.zeta2, &z.zeta2).norm() < 1e-13);
            for j in 0..3 {
                prop_assert!(((z.zeta2[j] - z.zeta1[j].conj()) / h + xi[j]).norm() < 1e-13 * (1.0 + xi[j].abs()));
            }
            let tan = norm(&xi[..2]);
            prop_assert!((norm(&z.xi_plus[..2]) - tan).abs() < 1e-13 * (1.0 + tan));
            let tn = 2.0 / h * (1.0 - h * h * xn * xn / 4.0).sqrt() * tan / xn;
            prop_assert!((z.xi_plus[2].abs() - tn).abs() <= 1e-13 * (1.0 + tn));
        }
    }

    #[test]
    fn amplitude_transport() {
        let spec = CgoSpec::new(&[1.0, -0.5, 2.0], 0.2, 1.0, AmplitudeMode::Linear).unwrap();
        let amp = spec.amplitude(Which::U2);
        let (first, second) = amp.transport(spec.zeta0(Which::U2));
        assert!((first - 1.0).norm() < 1e-15);
        assert_eq!(second, ZERO);
        let g = grid(5);
        let a = solve_amplitude(AmplitudeMode::Linear, &spec.frame, &spec.zeta2_0, g.clone()).unwrap();
        assert!((a.values[7] - C64::new(dot(&spec.frame.mu1, &g.coords(7)), 0.0)).norm() < 1e-15);
        let one = solve_amplitude(AmplitudeMode::One, &spec.frame, &spec.zeta1_0, g).unwrap();
        assert!(one.values.iter().all(|v| *v == C64::new(1.0, 0.0)));
    }

    #[test]
    fn lattice_phases_are_null_and_consistent() {
        let spec = CgoSpec::new(&[2.0, -1.0, 1.5], 0.2, -1.0, AmplitudeMode::One).unwrap();
        let mut prev = f64::INFINITY;
        for d in [0.125, 0.0625, 0.03125] {
            let p = lattice_phases(&spec, &[d, d, d]).unwrap();
            assert!(lattice_symbol(&p.k1, &[d, d, d]).norm() < 1e-9);
            assert!(lattice_symbol(&p.k2, &[d, d, d]).norm() < 1e-9);
            for j in 0..3 {
                assert!((p.k2[j] - p.k1[j].conj() + spec.xi[j]).norm() < 1e-12);
            }
            let dev: f64 = (0..3).map(|j| (p.k2[j] - spec.zetas.zeta2[j] / spec.h).norm()).fold(0.0, f64::max);
            assert!(dev < prev / 3.0, "{dev} vs {prev}");
            prev = dev;
        }
    }

    #[test]
    fn unperturbed_remainder_vanishes_and_gamma0_is_exact() {
        let g = grid(9);
        let a = VectorField::zeros(g.clone());
        let q = ScalarField::zeros(g.clone());
        for mode in [AmplitudeMode::One, AmplitudeMode::Linear] {
            let spec = CgoSpec::new(&[1.0, 0.5, -1.0], 0.3, 1.0, mode).unwrap();
            for which in [Which::U2, Which::V] {
                let s = assemble_reflected(&spec, which, &a, &q, Fault::None).unwrap();
                assert!(s.remainder.max_abs() < 1e-10, "{}", s.remainder.max_abs());
                assert!(s.diagnostics.gamma0_relative <= 1e-12);
                let top = g.counts()[2] - 1;
                for idx in 0..g.len() {
                    if g.axis_index(idx, 2) == top {
                        assert_eq!(s.u.values[idx], ZERO);
                        assert_eq!(s.w.values[idx], ZERO);
                    }
                }
            }
        }
    }

    fn bump(x: &[f64], c: [f64; 3], r: f64) -> f64 {
        let d2 = (0..3).map(|k| (x[k] - c[k]).powi(2)).sum::<f64>() / (r * r);
        if d2 < 1.0 {
            (1.0 - d2).powi(3)
        } else {
            0.0
        }
    }

    fn coefficients(g: &Arc<Grid>) -> (VectorField, ScalarField) {
        let a = VectorField::from_fn(g.clone(), |x| {
            let b = bump(x, [0.1, -0.2, -0.5], 0.45);
            vec![C64::new(0.8 * b, 0.0), C64::new(-0.5 * b, 0.2 * b), C64::new(0.6 * b * x[0], 0.0)]
        });
        let q = ScalarField::from_fn(g.clone(), |x| C64::new(2.0 * bump(x, [-0.2, 0.1, -0.45], 0.4), 0.5));
        (a, q)
    }

    #[test]
    fn perturbed_cgo_solves_the_discrete_equation_on_omega() {
        let g = grid(9);
        let (a, q) = coefficients(&g);
        let spec = CgoSpec::new(&[1.5, 0.0, 1.0], 0.25, 1.0, AmplitudeMode::Linear).unwrap();
        let u2 = assemble_reflected(&spec, Which::U2, &a, &q, Fault::None).unwrap();
        assert!(u2.diagnostics.pde_residual < 1e-6, "{:?}", u2.diagnostics);
        assert!(u2.diagnostics.gamma0_relative < 1e-12);
        // Ω split system: L(u, w|∂Ω) = 0 at interior nodes.
        let op = assemble(g.clone(), &a, &q).unwrap();
        let lu = op.apply(&u2.u, &u2.w);
        let scale = u2.u.max_abs() / g.spacing()[0].powi(4);
        assert!(lu.max_abs() < 1e-9 * scale, "{} vs {scale}", lu.max_abs());
        // v against the adjoint coefficients in divergence form.
        let v = assemble_reflected(&spec, Which::V, &a, &q, Fault::None).unwrap();
        assert!(v.diagnostics.pde_residual < 1e-6, "{:?}", v.diagnostics);
        let bad = assemble_reflected(&spec, Which::V, &a, &q, Fault::ReflectionSign).unwrap();
        assert!(bad.diagnostics.gamma0_relative > 1e-3);
    }

    #[test]
    fn remainder_shrinks_with_h() {
        let g = grid(9);
        let (a, q) = coefficients(&g);
        let mut norms = Vec::new();
        for h in [0.4, 0.2] {
            let spec = CgoSpec::new(&[1.0, 1.0, 0.5], h, 1.0, AmplitudeMode::One).unwrap();
            let s = assemble_reflected(&spec, Which::U2, &a, &q, Fault::None).unwrap();
            norms.push(s.diagnostics.remainder_h1_scl);
        }
        assert!(norms[1] < norms[0], "{norms:?}");
    }
}
