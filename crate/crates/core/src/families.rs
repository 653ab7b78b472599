//! Built-in coefficient families and the declared test corpora.
//!
//! Every bump is the profile p(x) = e^{−r²/2σ²}χ(r²/R²) for r < R, with
//! r = |x − c| and cutoff χ(t) = (1 − t)⁶ (steep, C⁵) or (1 − t²)⁴ (flat,
//! C³, leaves the Gaussian core nearly untouched). R = ∞ gives the plain
//! Gaussian.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::Grid;
use crate::error::{Error, Result};
use crate::fields::{ScalarField, VectorField};
use crate::C64;

/// The bump profile and its gradient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bump {
    pub center: Vec<f64>,
    pub sigma: f64,
    pub radius: f64,
    #[serde(default)]
    pub cutoff: Cutoff,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cutoff {
    #[default]
    Steep,
    Flat,
}

impl Cutoff {
    /// χ(t) and χ′(t).
    fn eval(self, t: f64) -> (f64, f64) {
        match self {
            Cutoff::Steep => ((1.0 - t).powi(6), -6.0 * (1.0 - t).powi(5)),
            Cutoff::Flat => {
                let s = 1.0 - t * t;
                (s.powi(4), -8.0 * t * s.powi(3))
            }
        }
    }
}

impl Bump {
    pub fn new(center: &[f64], sigma: f64, radius: f64) -> Bump {
        Bump { center: center.to_vec(), sigma, radius, cutoff: Cutoff::Steep }
    }

    pub fn flat(center: &[f64], sigma: f64, radius: f64) -> Bump {
        Bump { cutoff: Cutoff::Flat, ..Bump::new(center, sigma, radius) }
    }

    fn r2(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.center).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let r2 = self.r2(x);
        let t = r2 / (self.radius * self.radius);
        if t >= 1.0 {
            return 0.0;
        }
        (-r2 / (2.0 * self.sigma * self.sigma)).exp() * self.cutoff.eval(t).0
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let r2 = self.r2(x);
        let rr = self.radius * self.radius;
        let t = r2 / rr;
        if t >= 1.0 {
            return vec![0.0; x.len()];
        }
        let (c, dc) = self.cutoff.eval(t);
        let g = (-r2 / (2.0 * self.sigma * self.sigma)).exp();
        let f = g * (-c / (self.sigma * self.sigma) + 2.0 * dc / rr);
        x.iter().zip(&self.center).map(|(a, b)| f * (a - b)).collect()
    }

    fn validate(&self, grid: &Grid) -> Result<()> {
        let n = grid.dim();
        if self.center.len() != n || !(self.sigma > 0.0) || !(self.radius > 0.0) {
            return Err(Error::InvalidArgument(format!("bump needs an {n}-vector center and positive σ, R")));
        }
        if self.radius.is_infinite() {
            return Ok(());
        }
        for k in 0..n {
            let clear = (self.center[k] - self.radius - grid.lo()[k]).min(grid.hi()[k] - self.center[k] - self.radius);
            if !(clear > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "bump at {:?} with radius {} is not strictly inside Ω along axis {k}",
                    self.center, self.radius
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalarTerm {
    Constant { value: f64 },
    Gaussian { bump: Bump, amplitude: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VectorTerm {
    Constant {
        value: Vec<f64>,
    },
    /// amplitude · p(x).
    Gaussian {
        bump: Bump,
        amplitude: Vec<f64>,
    },
    /// amplitude · (∂_b p e_a − ∂_a p e_b), divergence free.
    Solenoidal {
        bump: Bump,
        amplitude: f64,
        plane: [usize; 2],
    },
    /// amplitude · ∇p, with potential amplitude · p vanishing near ∂Ω.
    Gradient {
        bump: Bump,
        amplitude: f64,
    },
}

/// A coefficient pair (A, q) as a sum of family terms.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Coefficients {
    #[serde(default)]
    pub a: Vec<VectorTerm>,
    #[serde(default)]
    pub q: Vec<ScalarTerm>,
}

impl Coefficients {
    pub fn validate(&self, grid: &Grid) -> Result<()> {
        let n = grid.dim();
        for t in &self.q {
            if let ScalarTerm::Gaussian { bump, .. } = t {
                bump.validate(grid)?;
            }
        }
        for t in &self.a {
            match t {
                VectorTerm::Constant { value } if value.len() != n => {
                    return Err(Error::InvalidArgument(format!("constant A needs {n} components")))
                }
                VectorTerm::Gaussian { bump, amplitude } => {
                    if amplitude.len() != n {
                        return Err(Error::InvalidArgument(format!("Gaussian A amplitude needs {n} components")));
                    }
                    bump.validate(grid)?;
                }
                VectorTerm::Solenoidal { bump, plane, .. } => {
                    if plane[0] == plane[1] || plane[0] >= n || plane[1] >= n {
                        return Err(Error::InvalidArgument(format!(
                            "solenoidal plane {plane:?} is not a coordinate plane"
                        )));
                    }
                    bump.validate(grid)?;
                }
                VectorTerm::Gradient { bump, .. } => bump.validate(grid)?,
                VectorTerm::Constant { .. } => {}
            }
        }
        Ok(())
    }

    pub fn q_at(&self, x: &[f64]) -> f64 {
        self.q
            .iter()
            .map(|t| match t {
                ScalarTerm::Constant { value } => *value,
                ScalarTerm::Gaussian { bump, amplitude } => amplitude * bump.value(x),
            })
            .sum()
    }

    pub fn a_at(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        for t in &self.a {
            match t {
                VectorTerm::Constant { value } => out.iter_mut().zip(value).for_each(|(o, v)| *o += v),
                VectorTerm::Gaussian { bump, amplitude } => {
                    let p = bump.value(x);
                    out.iter_mut().zip(amplitude).for_each(|(o, v)| *o += v * p);
                }
                VectorTerm::Solenoidal { bump, amplitude, plane } => {
                    let g = bump.gradient(x);
                    out[plane[0]] += amplitude * g[plane[1]];
                    out[plane[1]] -= amplitude * g[plane[0]];
                }
                VectorTerm::Gradient { bump, amplitude } => {
                    out.iter_mut().zip(bump.gradient(x)).for_each(|(o, v)| *o += amplitude * v);
                }
            }
        }
        out
    }

    /// Σ amplitude·p over the gradient terms: the scalar whose gradient
    /// they are.
    pub fn gradient_potential_at(&self, x: &[f64]) -> f64 {
        self.a
            .iter()
            .map(|t| match t {
                VectorTerm::Gradient { bump, amplitude } => amplitude * bump.value(x),
                _ => 0.0,
            })
            .sum()
    }

    pub fn fields(&self, grid: Arc<Grid>) -> Result<(VectorField, ScalarField)> {
        self.validate(&grid)?;
        let a = VectorField::from_fn(grid.clone(), |x| self.a_at(x).into_iter().map(|v| C64::new(v, 0.0)).collect());
        let q = ScalarField::from_fn(grid, |x| C64::new(self.q_at(x), 0.0));
        Ok((a, q))
    }

    pub fn gradient_potential(&self, grid: Arc<Grid>) -> ScalarField {
        ScalarField::from_fn(grid, |x| C64::new(self.gradient_potential_at(x), 0.0))
    }

    /// Every amplitude multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Coefficients {
        let a = self
            .a
            .iter()
            .map(|t| match t.clone() {
                VectorTerm::Constant { value } => VectorTerm::Constant { value: value.iter().map(|v| v * s).collect() },
                VectorTerm::Gaussian { bump, amplitude } => {
                    VectorTerm::Gaussian { bump, amplitude: amplitude.iter().map(|v| v * s).collect() }
                }
                VectorTerm::Solenoidal { bump, amplitude, plane } => {
                    VectorTerm::Solenoidal { bump, amplitude: amplitude * s, plane }
                }
                VectorTerm::Gradient { bump, amplitude } => VectorTerm::Gradient { bump, amplitude: amplitude * s },
            })
            .collect();
        let q = self
            .q
            .iter()
            .map(|t| match t.clone() {
                ScalarTerm::Constant { value } => ScalarTerm::Constant { value: value * s },
                ScalarTerm::Gaussian { bump, amplitude } => ScalarTerm::Gaussian { bump, amplitude: amplitude * s },
            })
            .collect();
        Coefficients { a, q }
    }

    /// Term-wise concatenation: the coefficients of self + other.
    pub fn plus(&self, other: &Coefficients) -> Coefficients {
        let mut out = self.clone();
        out.a.extend(other.a.iter().cloned());
        out.q.extend(other.q.iter().cloned());
        out
    }
}

/// The default half-space box [−1, 1]² × [−1, 0] with `c` nodes per unit
/// length plus one.
pub fn default_grid(c: usize) -> Result<Arc<Grid>> {
    Ok(Arc::new(crate::domain::build_grid(3, &[(-1.0, 1.0), (-1.0, 1.0), (-1.0, 0.0)], &[2 * c - 1, 2 * c - 1, c])?))
}

fn centered_bump(sigma: f64, radius: f64) -> Bump {
    Bump::new(&[0.0, 0.0, -0.5], sigma, radius)
}

/// Background pair used by the recovery oracles: a mild smooth A and q.
pub fn background() -> Coefficients {
    Coefficients {
        a: vec![VectorTerm::Gaussian {
            bump: Bump::new(&[0.2, -0.1, -0.5], 0.3, 0.4),
            amplitude: vec![0.3, -0.2, 0.1],
        }],
        q: vec![
            ScalarTerm::Constant { value: 0.5 },
            ScalarTerm::Gaussian { bump: Bump::new(&[-0.2, 0.2, -0.5], 0.25, 0.4), amplitude: 1.0 },
        ],
    }
}

/// q₂ − q₁: a plain Gaussian.
pub fn q_difference() -> Coefficients {
    Coefficients {
        a: vec![],
        q: vec![ScalarTerm::Gaussian { bump: centered_bump(0.2, f64::INFINITY), amplitude: 2.0 }],
    }
}

/// A₂ − A₁: a divergence-free bump in the (x₁, x₂) plane plus one in the
/// (x₂, x₃) plane.
pub fn solenoidal_difference() -> Coefficients {
    Coefficients {
        a: vec![
            VectorTerm::Solenoidal { bump: Bump::flat(&[0.0, 0.0, -0.5], 0.2, 0.49), amplitude: 0.15, plane: [0, 1] },
            VectorTerm::Solenoidal { bump: Bump::flat(&[0.1, 0.0, -0.5], 0.2, 0.49), amplitude: 0.1, plane: [1, 2] },
        ],
        q: vec![],
    }
}

/// A₂ − A₁ = ∇ψ with ψ a bump vanishing near ∂Ω.
pub fn gradient_difference() -> Coefficients {
    Coefficients {
        a: vec![VectorTerm::Gradient { bump: Bump::flat(&[0.0, 0.0, -0.5], 0.2, 0.49), amplitude: 0.15 }],
        q: vec![],
    }
}

/// Smooth compactly supported pairs for the remainder scaling study.
pub fn remainder_corpus() -> Vec<Coefficients> {
    vec![
        background(),
        Coefficients {
            a: vec![VectorTerm::Solenoidal { bump: centered_bump(0.25, 0.45), amplitude: 0.5, plane: [0, 2] }],
            q: vec![ScalarTerm::Gaussian { bump: Bump::new(&[0.3, 0.0, -0.45], 0.2, 0.4), amplitude: 3.0 }],
        },
    ]
}

/// Fixed perturbation scaled by τ in the stability sweep.
pub fn sweep_perturbation() -> Coefficients {
    solenoidal_difference().plus(&q_difference())
}

/// A second perturbation, used only to calibrate the stability constants.
/// Its norms exceed those of the sweep perturbation so that the calibrated
/// multipliers cover the sweep's a priori bound.
pub fn calibration_perturbation() -> Coefficients {
    Coefficients {
        a: vec![VectorTerm::Solenoidal {
            bump: Bump::flat(&[-0.1, 0.1, -0.5], 0.2, 0.49),
            amplitude: 0.25,
            plane: [0, 2],
        }],
        q: vec![ScalarTerm::Gaussian { bump: Bump::new(&[0.1, -0.1, -0.5], 0.22, f64::INFINITY), amplitude: 2.5 }],
    }
}

/// Integrable fields for the Riemann–Lebesgue check.
pub fn riemann_lebesgue_corpus() -> Vec<(String, Coefficients)> {
    vec![
        ("gaussian".into(), q_difference()),
        (
            "narrow".into(),
            Coefficients {
                a: vec![],
                q: vec![ScalarTerm::Gaussian { bump: Bump::new(&[0.1, 0.0, -0.5], 0.1, 0.3), amplitude: 1.0 }],
            },
        ),
        (
            "plateau".into(),
            Coefficients {
                a: vec![],
                q: vec![ScalarTerm::Gaussian { bump: centered_bump(10.0, 0.45), amplitude: 1.0 }],
            },
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::divergence;

    #[test]
    fn bump_gradient_matches_differences() {
        let x = [0.2, -0.05, -0.55];
        for b in [Bump::new(&[0.1, -0.2, -0.4], 0.3, 0.5), Bump::flat(&[0.1, -0.2, -0.4], 0.3, 0.5)] {
            let g = b.gradient(&x);
            for k in 0..3 {
                let mut xp = x;
                let mut xm = x;
                xp[k] += 1e-6;
                xm[k] -= 1e-6;
                let fd = (b.value(&xp) - b.value(&xm)) / 2e-6;
                assert!((fd - g[k]).abs() < 1e-8, "{fd} {}", g[k]);
            }
            assert_eq!(b.value(&[1.0, 1.0, -1.0]), 0.0);
        }
        let plain = Bump::new(&[0.0; 3], 0.3, f64::INFINITY);
        assert!((plain.value(&x) - (-(0.04 + 0.0025 + 0.3025) / 0.18f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn solenoidal_terms_are_divergence_free() {
        // the discrete divergence is pure truncation error: O(Δx²)
        let div = |c: usize| {
            let (a, _) = solenoidal_difference().fields(default_grid(c).unwrap()).unwrap();
            divergence(&a).max_abs()
        };
        let (coarse, fine) = (div(17), div(33));
        assert!(fine < coarse / 3.0, "{coarse} {fine}");
        let g = default_grid(9).unwrap();
        let (a, _) = solenoidal_difference().fields(g.clone()).unwrap();
        let (a2, _) = solenoidal_difference().scaled(2.0).fields(g).unwrap();
        assert!((a2.max_abs() - 2.0 * a.max_abs()).abs() < 1e-14);
    }

    #[test]
    fn supports_must_stay_inside() {
        let g = default_grid(9).unwrap();
        let c = Coefficients {
            a: vec![],
            q: vec![ScalarTerm::Gaussian { bump: Bump::new(&[0.0, 0.0, -0.1], 0.2, 0.3), amplitude: 1.0 }],
        };
        assert!(c.fields(g.clone()).is_err());
        for c in remainder_corpus().into_iter().chain([
            sweep_perturbation(),
            gradient_difference(),
            calibration_perturbation(),
        ]) {
            c.fields(g.clone()).unwrap();
        }
    }

    #[test]
    fn config_roundtrip_rejects_unknown_keys() {
        // JSON has no ∞, so the plain-Gaussian q corpus is left out here
        let c = solenoidal_difference().plus(&gradient_difference());
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<Coefficients>(&s).unwrap(), c);
        assert!(serde_json::from_str::<Coefficients>(r#"{"q":[{"kind":"constant","value":1.0,"extra":2}]}"#).is_err());
    }
}
