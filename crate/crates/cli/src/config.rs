//! Run configuration: a TOML document, unknown keys rejected.

use std::sync::Arc;

use biharm_core::calibration::{STABILITY_C_A, STABILITY_C_Q};
use biharm_core::cgo::{AmplitudeMode, Which};
use biharm_core::domain::{build_grid, enclosing_radius, Grid};
use biharm_core::families::{self, Coefficients};
use biharm_core::recover::{ScheduleConsts, SweepConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: String,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub coefficients: CoefficientSpec,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub lattice: LatticeSpec,
    #[serde(default)]
    pub sweep: SweepSpec,
    #[serde(default)]
    pub forward: ForwardSpec,
    #[serde(default)]
    pub cgo: CgoSection,
}

fn default_out() -> String {
    "out".into()
}

/// Box [lo, hi] per axis with `counts` nodes; the last axis must end at 0
/// for anything that reflects.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub extents: Vec<[f64; 2]>,
    pub counts: Vec<usize>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { extents: vec![[-1.0, 1.0], [-1.0, 1.0], [-1.0, 0.0]], counts: vec![17, 17, 9] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientSpec {
    /// (A₁, q₁).
    #[serde(default = "families::background")]
    pub base: Coefficients,
    /// (A₂ − A₁, q₂ − q₁); scaled by τ in the sweep.
    #[serde(default = "families::sweep_perturbation")]
    pub difference: Coefficients,
}

impl Default for CoefficientSpec {
    fn default() -> Self {
        CoefficientSpec { base: families::background(), difference: families::sweep_perturbation() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub s: f64,
    pub alpha: f64,
    pub h0: f64,
    pub eps0: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec { s: 2.6, alpha: 0.5, h0: 0.5, eps0: 0.8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSpec {
    /// Number of oracle frequencies for recover-da / recover-q.
    pub count: usize,
    pub max_norm: f64,
    /// Semiclassical ladder for recover-da / recover-q.
    pub h: Vec<f64>,
    /// Overrides the scheduled ρ in the sweep.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
}

impl Default for LatticeSpec {
    fn default() -> Self {
        LatticeSpec { count: 20, max_norm: 4.0, h: vec![0.2, 0.1], rho: Some(1.6) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub taus: Vec<f64>,
    pub probe_h: f64,
    #[serde(default)]
    pub dtn_margin: usize,
    #[serde(default = "default_c_a")]
    pub c_a: f64,
    #[serde(default = "default_c_q")]
    pub c_q: f64,
}

fn default_c_a() -> f64 {
    STABILITY_C_A
}
fn default_c_q() -> f64 {
    STABILITY_C_Q
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            taus: (0..6).map(|k| 0.5f64.powi(k)).collect(),
            probe_h: 0.2,
            dtn_margin: 0,
            c_a: STABILITY_C_A,
            c_q: STABILITY_C_Q,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForwardMode {
    /// Zero boundary data and source.
    Zero,
    /// Manufactured-solution refinement study.
    Mms,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForwardSpec {
    pub mode: ForwardMode,
    #[serde(default = "default_levels")]
    pub mms_levels: Vec<usize>,
    #[serde(default = "default_true")]
    pub with_coefficients: bool,
}

fn default_levels() -> Vec<usize> {
    vec![5, 9, 17]
}
fn default_true() -> bool {
    true
}

impl Default for ForwardSpec {
    fn default() -> Self {
        ForwardSpec { mode: ForwardMode::Zero, mms_levels: default_levels(), with_coefficients: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CgoSection {
    pub xi: Vec<f64>,
    pub h: f64,
    #[serde(default = "default_sign")]
    pub sign: f64,
    #[serde(default = "default_amplitude")]
    pub amplitude: AmplitudeMode,
    #[serde(default = "default_which")]
    pub which: Which,
}

fn default_sign() -> f64 {
    1.0
}
fn default_amplitude() -> AmplitudeMode {
    AmplitudeMode::One
}
fn default_which() -> Which {
    Which::U2
}

impl Default for CgoSection {
    fn default() -> Self {
        CgoSection { xi: vec![1.5, -1.0, 0.5], h: 0.25, sign: 1.0, amplitude: AmplitudeMode::One, which: Which::U2 }
    }
}

fn bad(key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("`{key}`: {msg}"))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// sha256 of the canonical TOML serialization.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn build_grid(&self) -> Result<Arc<Grid>, CliError> {
        let g = &self.grid;
        if g.extents.len() != g.counts.len() {
            return Err(bad("grid.counts", format!("{} counts for {} extents", g.counts.len(), g.extents.len())));
        }
        let ext: Vec<(f64, f64)> = g.extents.iter().map(|e| (e[0], e[1])).collect();
        build_grid(ext.len(), &ext, &g.counts).map(Arc::new).map_err(|e| bad("grid", e))
    }

    /// Every precondition the subcommands rely on, checked before any solve.
    pub fn validate(&self) -> Result<Arc<Grid>, CliError> {
        let grid = self.build_grid()?;
        self.coefficients.base.validate(&grid).map_err(|e| bad("coefficients.base", e))?;
        self.coefficients.difference.validate(&grid).map_err(|e| bad("coefficients.difference", e))?;
        let s = &self.schedule;
        if !(s.s > grid.dim() as f64 / 2.0) {
            return Err(bad("schedule.s", format!("need s > n/2, got {}", s.s)));
        }
        if !(s.alpha > 0.0 && s.alpha <= 1.0) {
            return Err(bad("schedule.alpha", format!("need 0 < α ≤ 1, got {}", s.alpha)));
        }
        if !(s.h0 > 0.0) {
            return Err(bad("schedule.h0", "must be positive"));
        }
        if !(s.eps0 > 0.0) {
            return Err(bad("schedule.eps0", "must be positive"));
        }
        let l = &self.lattice;
        if l.count == 0 {
            return Err(bad("lattice.count", "must be positive"));
        }
        if !(l.max_norm > 0.0) {
            return Err(bad("lattice.max_norm", "must be positive"));
        }
        if l.h.is_empty() || l.h.iter().any(|h| !(*h > 0.0)) {
            return Err(bad("lattice.h", "needs at least one positive value"));
        }
        if let Some(r) = l.rho {
            if !(r > 0.0) {
                return Err(bad("lattice.rho", "must be positive"));
            }
        }
        let w = &self.sweep;
        if w.taus.is_empty() || w.taus.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
            return Err(bad("sweep.taus", "values must lie in (0, 1]"));
        }
        if !(w.probe_h > 0.0) {
            return Err(bad("sweep.probe_h", "must be positive"));
        }
        if !(w.c_a > 0.0) || !(w.c_q > 0.0) {
            return Err(bad("sweep.c_a", "multipliers must be positive"));
        }
        if self.forward.mms_levels.iter().any(|c| *c < 3) {
            return Err(bad("forward.mms_levels", "each level needs at least 3 nodes per unit"));
        }
        let c = &self.cgo;
        if c.xi.len() != grid.dim() {
            return Err(bad("cgo.xi", format!("needs {} components", grid.dim())));
        }
        if c.sign != 1.0 && c.sign != -1.0 {
            return Err(bad("cgo.sign", "must be 1 or -1"));
        }
        if !(c.h > 0.0) {
            return Err(bad("cgo.h", "must be positive"));
        }
        Ok(grid)
    }

    pub fn schedule_consts(&self, grid: &Grid) -> ScheduleConsts {
        let s = &self.schedule;
        ScheduleConsts { r: enclosing_radius(grid), n: grid.dim(), s: s.s, alpha: s.alpha, h0: s.h0, eps0: s.eps0 }
    }

    pub fn sweep_config(&self, grid: Arc<Grid>) -> SweepConfig {
        SweepConfig {
            consts: self.schedule_consts(&grid),
            grid,
            base: self.coefficients.base.clone(),
            perturbation: self.coefficients.difference.clone(),
            taus: self.sweep.taus.clone(),
            probe_h: self.sweep.probe_h,
            dtn_margin: self.sweep.dtn_margin,
            lattice_rho: self.lattice.rho,
            c_a: self.sweep.c_a,
            c_q: self.sweep.c_q,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: default_out(),
            grid: GridSpec::default(),
            coefficients: CoefficientSpec::default(),
            schedule: ScheduleSpec::default(),
            lattice: LatticeSpec::default(),
            sweep: SweepSpec::default(),
            forward: ForwardSpec::default(),
            cgo: CgoSection::default(),
        }
    }
}

/// `NxNxN` → counts.
pub fn parse_grid_override(s: &str) -> Result<Vec<usize>, CliError> {
    s.split('x')
        .map(|p| p.trim().parse::<usize>().map_err(|_| bad("--grid", format!("expected NxNxN, got {s:?}"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert!(c.validate().is_ok());
    }

    #[test]
    fn roundtrip_and_hash_are_stable() {
        let c = RunConfig::default();
        let back = RunConfig::parse(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let mut d = c.clone();
        d.seed = 1;
        assert_ne!(d.hash(), c.hash());
    }

    #[test]
    fn unknown_and_invalid_keys_are_named() {
        let e = RunConfig::parse("[lattice]\ncount = 3\nmax_norm = 1.0\nh = [0.1]\nbogus = 1\n").unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
        let mut c = RunConfig::default();
        c.sweep.taus = vec![2.0];
        assert!(c.validate().unwrap_err().to_string().contains("sweep.taus"));
        c = RunConfig::default();
        c.grid.counts = vec![9, 9];
        assert!(c.validate().unwrap_err().to_string().contains("grid.counts"));
    }

    #[test]
    fn grid_override() {
        assert_eq!(parse_grid_override("33x33x17").unwrap(), vec![33, 33, 17]);
        assert!(parse_grid_override("3x?").is_err());
    }
}
