//! Property tests for the cross-module invariants.

use std::sync::Arc;

use biharm_core::domain::{build_grid, reflect_index, BoundaryPartition, Grid};
use biharm_core::fields::{
    extend_reflect_a, extend_reflect_q, exterior_derivative, gradient, interpolation_bound, ScalarField, VectorField,
};
use biharm_core::recover::{
    rho_choices, schedule_from_gap, stability_rhs, Bound, Branch, Exponents, ScheduleConsts, Target,
};
use biharm_core::C64;
use proptest::prelude::*;

fn half_space(counts: [usize; 3], lo: [f64; 3], hi: [f64; 2]) -> Arc<Grid> {
    Arc::new(build_grid(3, &[(lo[0], hi[0]), (lo[1], hi[1]), (lo[2], 0.0)], &counts).unwrap())
}

fn grid_strategy() -> impl Strategy<Value = Arc<Grid>> {
    (prop::array::uniform3(5usize..9), prop::array::uniform3(-2.0f64..-0.5), prop::array::uniform2(0.5f64..2.0))
        .prop_map(|(c, lo, hi)| half_space(c, lo, hi))
}

/// ∫ over [lo, hi] of a + b·x.
fn affine_integral(a: f64, b: f64, lo: f64, hi: f64) -> f64 {
    a * (hi - lo) + b * (hi * hi - lo * lo) / 2.0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn reflection_is_an_involution_fixing_gamma0(g in grid_strategy()) {
        let d = g.doubled().unwrap();
        let top = g.counts()[2] - 1;
        for idx in 0..d.len() {
            let r = reflect_index(&d, idx);
            prop_assert_eq!(reflect_index(&d, r), idx);
            prop_assert_eq!(r == idx, d.axis_index(idx, 2) == top);
            prop_assert_eq!(d.coord(r, 2), -d.coord(idx, 2));
        }
    }

    #[test]
    fn trapezoid_rule_is_exact_on_products_of_affine_factors(
        g in grid_strategy(),
        a in prop::array::uniform3(-2.0f64..2.0),
        b in prop::array::uniform3(-2.0f64..2.0),
    ) {
        let w = g.volume_weights();
        let num: f64 = (0..g.len())
            .map(|i| w[i] * (0..3).map(|k| a[k] + b[k] * g.coord(i, k)).product::<f64>())
            .sum();
        let exact: f64 = (0..3).map(|k| affine_integral(a[k], b[k], g.lo()[k], g.hi()[k])).product();
        prop_assert!((num - exact).abs() <= 1e-12 * (1.0 + exact.abs()), "{num} vs {exact}");
        let p = BoundaryPartition::new(&g);
        let area: f64 = p.weights.iter().sum();
        let (lx, ly, lz) = (g.hi()[0] - g.lo()[0], g.hi()[1] - g.lo()[1], g.hi()[2] - g.lo()[2]);
        let exact_area = 2.0 * (lx * ly + ly * lz + lx * lz);
        prop_assert!((area - exact_area).abs() <= 1e-12 * exact_area);
    }

    #[test]
    fn boundary_nodes_are_partitioned(g in grid_strategy()) {
        let p = BoundaryPartition::new(&g);
        let mut seen = vec![0u8; g.len()];
        for &i in p.gamma0.iter().chain(&p.gamma) {
            seen[i] += 1;
        }
        for &b in g.boundary() {
            prop_assert_eq!(seen[b], 1);
            prop_assert_eq!(p.in_gamma0(&g, b), p.gamma0.contains(&b));
        }
        prop_assert!(g.interior().iter().all(|&i| seen[i] == 0));
    }

    #[test]
    fn extensions_have_the_stated_parity(g in grid_strategy(), c in prop::array::uniform4(-2.0f64..2.0)) {
        let a = VectorField::from_fn(g.clone(), |x| {
            vec![C64::new(c[0] * x[0] + x[2], 0.1), C64::new(x[1] * x[2], c[1]), C64::new(c[2] + x[0] * x[1], c[3] * x[2])]
        });
        let q = ScalarField::from_fn(g.clone(), |x| C64::new(c[3] * x[2] * x[2] + x[0], x[1]));
        let (at, qt) = (extend_reflect_a(&a).unwrap(), extend_reflect_q(&q).unwrap());
        let d = &qt.grid;
        for idx in 0..d.len() {
            let r = reflect_index(d, idx);
            prop_assert_eq!(at.comps[0][r], at.comps[0][idx]);
            prop_assert_eq!(at.comps[1][r], at.comps[1][idx]);
            prop_assert_eq!(at.comps[2][r], -at.comps[2][idx]);
            prop_assert_eq!(qt.values[r], qt.values[idx]);
        }
    }

    #[test]
    fn curl_of_gradient_vanishes_on_multilinear_potentials(
        g in grid_strategy(),
        c in prop::array::uniform4(-2.0f64..2.0),
    ) {
        let phi = ScalarField::from_fn(g.clone(), |x| {
            C64::new(c[0] + c[1] * x[0] * x[1] + c[2] * x[1] * x[2] * x[0], c[3] * x[2])
        });
        let scale = 1.0 + c.iter().map(|v| v.abs()).sum::<f64>();
        prop_assert!(exterior_derivative(&gradient(&phi)).max_abs() <= 1e-12 * scale);
    }

    #[test]
    fn interpolation_holds_for_every_exponent_triple(
        seed in 0u64..1000,
        a in -2.0f64..1.0,
        gap in 0.1f64..3.0,
        t in 0.0f64..=1.0,
    ) {
        let g = half_space([5, 5, 5], [-1.0, -1.0, -1.0], [1.0, 1.0]);
        let f = ScalarField::from_fn(g, |x| {
            let s = seed as f64;
            C64::new((s * 0.37 + 3.0 * x[0] * x[1]).sin(), (x[2] * s * 0.11).cos() * x[0])
        });
        let (l, r) = interpolation_bound(&f, a, a + gap, t).unwrap();
        prop_assert!(l <= r * (1.0 + 1e-12), "{l} > {r}");
    }

    #[test]
    fn exponents_lie_in_the_unit_interval(n in 2usize..6, ds in 0.01f64..6.0, alpha in 0.01f64..0.99) {
        let s = n as f64 / 2.0 + 1.0 + ds;
        let e = Exponents::new(n, s, alpha).unwrap();
        prop_assert!(e.theta1 > 0.0 && e.theta1 < 1.0);
        prop_assert!(e.theta2 > 0.0 && e.theta2 < 1.0);
        prop_assert!(e.kappa > 0.0);
    }

    // Desk-scale constants put δ below the smallest double, so the small-gap
    // branch is exercised with a small radius and a large s.
    #[test]
    fn scheduled_parameters_are_feasible(
        log_gap in -700.0f64..-0.01,
        r in 0.02f64..0.08,
        s in 10.0f64..30.0,
        alpha in 0.3f64..0.9,
        target_q in any::<bool>(),
    ) {
        let consts = ScheduleConsts { r, n: 3, s, alpha, h0: 1.0, eps0: 1.0 };
        let target = if target_q { Target::Q } else { Target::A };
        let p = schedule_from_gap(log_gap.exp(), consts, target).unwrap();
        prop_assume!(log_gap < p.log_delta);
        let Branch::Small { h, rho_da, rho_phi, rho_q, .. } = p.branch else {
            return Err(TestCaseError::fail(format!("gap below δ gave {:?}", p.branch)));
        };
        prop_assert!(h < p.h_tilde0);
        let rho = rho_da.max(rho_phi).max(rho_q);
        prop_assert!(1.0 - h * h * 2.0 * rho * rho / 4.0 > 0.0);
        prop_assert_eq!(rho_choices(h, 3, s, alpha), (rho_da, rho_phi, rho_q));
    }

    #[test]
    fn stability_rhs_grows_with_the_gap(g1 in 1e-12f64..0.5, f in 1.0f64..100.0) {
        let ex = Exponents::new(3, 2.6, 0.5).unwrap();
        for b in [Bound::ALinf, Bound::QHminus1, Bound::QLinf] {
            let lo = stability_rhs(g1, &ex, 2.6, b, 1.0).value;
            let hi = stability_rhs((g1 * f).min(0.9), &ex, 2.6, b, 1.0).value;
            prop_assert!(hi >= lo);
        }
    }
}
