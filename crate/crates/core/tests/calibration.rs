//! The frozen stability multipliers cover their calibration sweep, and the
//! sweep errors scale linearly with the perturbation.

use biharm_core::calibration::{stability_calibration_config, stability_ratios, STABILITY_C_A, STABILITY_C_Q};
use biharm_core::recover::sweep;

#[test]
fn stability_multipliers_dominate_the_calibration_sweep() {
    let cfg = stability_calibration_config().unwrap();
    let (ra, rq) = stability_ratios(&cfg).unwrap();
    assert!(ra > 0.0 && rq > 0.0);
    assert!(ra <= STABILITY_C_A, "A ratio {ra}");
    assert!(rq <= STABILITY_C_Q, "q ratio {rq}");
}

#[test]
fn sweep_errors_are_linear_in_tau() {
    let mut cfg = stability_calibration_config().unwrap();
    cfg.taus = vec![0.5, 0.25];
    let r = sweep(&cfg).unwrap();
    let (a, b) = (&r.rows[0], &r.rows[1]);
    assert!(a.error.is_none() && b.error.is_none());
    // gap, dA and q errors all halve within a few percent
    for (x, y) in [(a.gap, b.gap), (a.err_da_hm1, b.err_da_hm1), (a.err_q_hm1, b.err_q_hm1)] {
        assert!((x / y - 2.0).abs() < 0.1, "{x} / {y}");
    }
}
