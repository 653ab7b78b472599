//! Invariant suites run by `biharm check`.

use std::f64::consts::PI;
use std::sync::Arc;

use biharm_core::calibration::{riemann_lebesgue_ratios, RIEMANN_LEBESGUE_C};
use biharm_core::cgo::{assemble_reflected, complex_dot, AmplitudeMode, CgoSpec, Fault, Which};
use biharm_core::domain::Grid;
use biharm_core::families::{self, default_grid};
use biharm_core::fields::{
    divergence, gradient, hodge_decompose, interpolation_bound_of, parseval_split, Embedding, ScalarField, Spectrum,
    VectorField,
};
use biharm_core::forward::{greens_residual, AdjointConvention};
use biharm_core::C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckItem {
    pub suite: &'static str,
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckItem {
    /// Passes when measured ≤ tolerance.
    fn at_most(suite: &'static str, name: impl Into<String>, measured: f64, tolerance: f64) -> CheckItem {
        CheckItem { suite, name: name.into(), measured, tolerance, pass: measured <= tolerance }
    }
    /// Passes when measured ≥ tolerance.
    fn at_least(suite: &'static str, name: impl Into<String>, measured: f64, tolerance: f64) -> CheckItem {
        CheckItem { suite, name: name.into(), measured, tolerance, pass: measured >= tolerance }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CheckOptions {
    pub seed: u64,
    pub fault: Fault,
    /// Random fields in the interpolation suite.
    pub interpolation_fields: usize,
    /// Random (ξ, h) in the CGO identity suite.
    pub cgo_draws: usize,
}

impl CheckOptions {
    pub fn new(seed: u64, fault: Fault) -> CheckOptions {
        CheckOptions { seed, fault, interpolation_fields: 1000, cgo_draws: 100 }
    }
}

pub const SUITES: [&str; 7] =
    ["green", "cgo_identities", "gamma0", "hodge", "interpolation", "parseval", "riemann_lebesgue"];

pub fn run_all(opts: &CheckOptions) -> Result<Vec<CheckItem>, CliError> {
    let mut out = Vec::new();
    out.extend(green()?);
    out.extend(cgo_identities(opts));
    out.extend(gamma0(opts.fault)?);
    out.extend(hodge()?);
    out.extend(interpolation(opts));
    out.extend(parseval(opts));
    out.extend(riemann_lebesgue()?);
    Ok(out)
}

fn re(x: f64) -> C64 {
    C64::new(x, 0.0)
}

fn smooth_bump(x: &[f64], c: &[f64], r: f64) -> f64 {
    let d2: f64 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (r * r);
    if d2 >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - d2)).exp()
    }
}

pub fn green() -> Result<Vec<CheckItem>, CliError> {
    let g = default_grid(9)?;
    let u =
        |x: &[f64]| C64::new(smooth_bump(x, &[0.1, -0.2, -0.5], 0.3), 0.3 * smooth_bump(x, &[0.0, 0.0, -0.45], 0.25));
    let v = |x: &[f64]| C64::new(smooth_bump(x, &[-0.1, 0.0, -0.5], 0.3), -smooth_bump(x, &[0.2, 0.1, -0.5], 0.25));
    let a = |x: &[f64]| vec![C64::new(x[1], 0.2), C64::new(0.5, x[0]), re(x[2] * x[0])];
    let q = |x: &[f64]| C64::new(1.0 + x[0], 2.0 + x[1]);
    let good = greens_residual(&g, u, v, a, q, AdjointConvention::Conjugated)?;
    let bad = greens_residual(&g, u, v, a, q, AdjointConvention::Unconjugated)?;
    let one = |_: &[f64]| re(1.0);
    let triv = greens_residual(
        &*default_grid(5)?,
        one,
        one,
        |_| vec![re(0.0); 3],
        |_| re(0.0),
        AdjointConvention::Conjugated,
    )?;
    let mut order = Vec::new();
    for c in [5, 9, 17] {
        let r = greens_residual(
            &*default_grid(c)?,
            |x| C64::new((x[0] + 0.5 * x[1]).sin() * (x[2] + 0.3).cos(), x[0] * x[2]),
            |x| C64::new((0.7 * x[2] - x[0]).exp(), (x[1] * 1.5).sin()),
            |x| vec![C64::new(x[1], 0.1), re(0.4), C64::new(x[0], -0.2)],
            |x| C64::new(1.0 + x[2], x[0]),
            AdjointConvention::Conjugated,
        )?;
        order.push(r.residual.norm());
    }
    let fitted = (order[1] / order[2]).log2().min((order[0] / order[1]).log2());
    Ok(vec![
        CheckItem::at_most("green", "compact_support_relative_residual", good.relative, 1e-10),
        CheckItem::at_least("green", "unconjugated_adjoint_detected", bad.relative / good.relative.max(1e-16), 1e4),
        CheckItem::at_most("green", "constant_fields_residual", triv.residual.norm(), 1e-12),
        CheckItem::at_least("green", "residual_order", fitted, 1.9),
    ])
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn cgo_identities(opts: &CheckOptions) -> Vec<CheckItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let (mut frame, mut null, mut shift) = (0.0f64, 0.0f64, 0.0f64);
    let mut failures = 0usize;
    for _ in 0..opts.cgo_draws {
        let xi: Vec<f64> = loop {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-4.0..4.0)).collect();
            if norm(&x) > 0.25 {
                break x;
            }
        };
        let h = rng.random_range(0.01..(2.0 / norm(&xi)).min(0.5));
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let Ok(spec) = CgoSpec::new(&xi, h, sign, AmplitudeMode::One) else {
            failures += 1;
            continue;
        };
        let z = &spec.zetas;
        frame = frame.max(spec.frame.defect(&xi));
        null = null.max(complex_dot(&z.zeta1, &z.zeta1).norm()).max(complex_dot(&z.zeta2, &z.zeta2).norm());
        for j in 0..3 {
            shift = shift.max(((z.zeta2[j] - z.zeta1[j].conj()) / h + xi[j]).norm() / (1.0 + xi[j].abs()));
        }
    }
    vec![
        CheckItem::at_most("cgo_identities", "frame_defect", frame, 1e-13),
        CheckItem::at_most("cgo_identities", "zeta_null", null, 1e-13),
        CheckItem::at_most("cgo_identities", "zeta_shift", shift, 1e-13),
        CheckItem::at_most("cgo_identities", "rejected_draws", failures as f64, 0.0),
    ]
}

/// Reflected CGOs and their Laplacians on Γ₀ relative to their size on Ω.
pub fn gamma0(fault: Fault) -> Result<Vec<CheckItem>, CliError> {
    let g = default_grid(5)?;
    let (a, q) = families::background().fields(g)?;
    let mut out = Vec::new();
    for (xi, h, mode) in [([1.5, 0.0, 1.0], 0.25, AmplitudeMode::Linear), ([-1.0, 2.0, 0.5], 0.3, AmplitudeMode::One)] {
        let spec = CgoSpec::new(&xi, h, 1.0, mode)?;
        for which in [Which::U2, Which::V] {
            let s = assemble_reflected(&spec, which, &a, &q, fault)?;
            out.push(CheckItem::at_most(
                "gamma0",
                format!("{which:?}_xi={xi:?}_h={h}").to_lowercase(),
                s.diagnostics.gamma0_relative,
                1e-12,
            ));
        }
    }
    Ok(out)
}

fn interior_l2(g: &Grid, f: &ScalarField) -> f64 {
    g.interior().iter().map(|&i| f.values[i].norm_sqr() * g.cell_volume()).sum::<f64>().sqrt()
}

pub fn hodge() -> Result<Vec<CheckItem>, CliError> {
    let g = default_grid(9)?;
    let a = VectorField::from_fn(g.clone(), |x| {
        vec![
            C64::new((2.0 * x[0] + x[2]).sin(), x[1]),
            re(x[0] * x[1] * x[2]),
            C64::new(x[2].cos(), (x[0] - x[1]).exp()),
        ]
    });
    let h = hodge_decompose(&a)?;
    let scale = a.l2_norm();
    let back = h.solenoidal.sub(&gradient(&h.potential).scale(-1.0));
    let bnd = g.boundary().iter().map(|&b| h.potential.values[b].norm()).fold(0.0, f64::max);
    let rot = VectorField::from_fn(g.clone(), |x| vec![re(-x[1]), re(x[0]), re(0.0)]);
    let hr = hodge_decompose(&rot)?;
    Ok(vec![
        CheckItem::at_most("hodge", "roundtrip", back.sub(&a).l2_norm() / scale, 1e-8),
        CheckItem::at_most("hodge", "solenoidality", interior_l2(&g, &divergence(&h.solenoidal)) / scale, 1e-8),
        CheckItem::at_most("hodge", "boundary_vanishing", bnd / h.potential.max_abs().max(1e-300), 1e-8),
        CheckItem::at_most("hodge", "rotation_potential", hr.potential.max_abs(), 1e-8),
    ])
}

fn random_field(rng: &mut ChaCha8Rng, g: &Arc<Grid>) -> ScalarField {
    let vals = (0..g.len()).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
    ScalarField::new(g.clone(), vals).expect("grid sized")
}

pub fn interpolation(opts: &CheckOptions) -> Vec<CheckItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(1));
    let g = default_grid(5).expect("static grid");
    let mut worst: f64 = f64::NEG_INFINITY;
    for _ in 0..opts.interpolation_fields {
        let f = random_field(&mut rng, &g);
        let a = rng.random_range(-2.0..0.0);
        let b = a + rng.random_range(0.5..4.0);
        let t = rng.random_range(0.0..1.0);
        let (l, r) = interpolation_bound_of(&Spectrum::new(&f, Embedding::ZeroPadded), a, b, t).expect("a < b");
        worst = worst.max((l - r) / r);
    }
    // Single lattice modes on an 8³ periodic box.
    let gm = Arc::new(Grid::new_box(&[(0.0, 7.0), (0.0, 7.0), (-7.0, 0.0)], &[8, 8, 8]).expect("static grid"));
    let mut eq: f64 = 0.0;
    for _ in 0..20 {
        let m: Vec<f64> = (0..3).map(|_| rng.random_range(-3i32..=4) as f64).collect();
        let xi0: Vec<f64> = m.iter().map(|k| 2.0 * PI * k / 8.0).collect();
        let f =
            ScalarField::from_fn(gm.clone(), |x| C64::from_polar(1.0, x.iter().zip(&xi0).map(|(a, b)| a * b).sum()));
        let (l, r) =
            interpolation_bound_of(&Spectrum::new(&f, Embedding::Periodic), -1.0, 2.6, rng.random_range(0.0..1.0))
                .expect("a < b");
        eq = eq.max((l - r).abs() / l);
    }
    vec![
        CheckItem::at_most("interpolation", "random_fields_lhs_minus_rhs", worst, 1e-12),
        CheckItem::at_most("interpolation", "single_mode_equality", eq, 1e-12),
    ]
}

pub fn parseval(opts: &CheckOptions) -> Vec<CheckItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(2));
    let g = default_grid(5).expect("static grid");
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let spec = Spectrum::new(&random_field(&mut rng, &g), Embedding::ZeroPadded);
        let total = spec.norm(-1.0).powi(2);
        for rho in [0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 1e9] {
            let (inside, tail) = parseval_split(&spec, rho);
            worst = worst.max((inside + tail - total).abs() / total);
        }
    }
    vec![CheckItem::at_most("parseval", "split_exactness", worst, 1e-12)]
}

pub fn riemann_lebesgue() -> Result<Vec<CheckItem>, CliError> {
    let g = default_grid(17)?;
    Ok(riemann_lebesgue_ratios(&g)?
        .into_iter()
        .map(|(name, c)| CheckItem::at_most("riemann_lebesgue", format!("min_constant_{name}"), c, RIEMANN_LEBESGUE_C))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_suites_pass() {
        let opts = CheckOptions { interpolation_fields: 50, cgo_draws: 100, ..CheckOptions::new(3, Fault::None) };
        let items: Vec<CheckItem> =
            [cgo_identities(&opts), interpolation(&opts), parseval(&opts), hodge().unwrap()].concat();
        assert!(items.iter().all(|i| i.pass), "{items:#?}");
    }

    #[test]
    fn reflection_sign_fault_breaks_gamma0() {
        let items = gamma0(Fault::ReflectionSign).unwrap();
        assert!(items.iter().all(|i| !i.pass), "{items:#?}");
        assert!(gamma0(Fault::None).unwrap().iter().all(|i| i.pass));
    }
}
