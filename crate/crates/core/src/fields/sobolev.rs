//! Torus Sobolev norms, the interpolation bound and the semiclassical H¹
//! norm.

use super::{Components, ScalarField};
use crate::domain::Grid;
use crate::error::{Error, Result};
use crate::spectral::Torus;
use crate::stencil;

/// How a grid field is placed on a torus.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Embedding {
    /// Zero extension onto a torus of `PAD_FACTOR` times the grid extent
    /// per axis.
    ZeroPadded,
    /// The grid nodes are one period (the last node row is not repeated).
    Periodic,
}

/// Torus side over grid extent for zero-padded norms.
pub const PAD_FACTOR: f64 = 3.0;

/// Power spectrum Σ_components |f̂(ξ_m)|² with lattice weights 1+|ξ_m|².
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub power: Vec<f64>,
    pub symbol: Vec<f64>,
    pub freqs: Vec<Vec<f64>>,
    pub weight: f64,
}

impl Spectrum {
    pub fn new<F: Components + ?Sized>(f: &F, embedding: Embedding) -> Spectrum {
        let grid = f.grid();
        let torus = match embedding {
            Embedding::ZeroPadded => Torus::padded(grid, PAD_FACTOR),
            Embedding::Periodic => {
                Torus { shape: grid.counts().to_vec(), spacing: grid.spacing().to_vec(), origin: grid.lo().to_vec() }
            }
        };
        Self::on_torus(grid, &torus, f)
    }

    pub fn on_torus<F: Components + ?Sized>(grid: &Grid, torus: &Torus, f: &F) -> Spectrum {
        let mut power = vec![0.0; torus.len()];
        for c in f.components() {
            let t = torus.transform(&torus.embed(grid, c));
            for (p, v) in power.iter_mut().zip(&t) {
                *p += v.norm_sqr();
            }
        }
        let freqs = torus.frequencies();
        let symbol = freqs.iter().map(|xi| 1.0 + xi.iter().map(|v| v * v).sum::<f64>()).collect();
        Spectrum { power, symbol, freqs, weight: torus.frequency_weight() }
    }

    /// ‖f‖_{H^s} = (Σ_m (1+|ξ_m|²)^s |f̂_m|² w)^{1/2}.
    pub fn norm(&self, s: f64) -> f64 {
        (self.power.iter().zip(&self.symbol).map(|(p, w)| w.powf(s) * p).sum::<f64>() * self.weight).sqrt()
    }
}

/// H^s norm of the zero extension on a padded torus.
pub fn sobolev_norm<F: Components + ?Sized>(f: &F, s: f64) -> f64 {
    Spectrum::new(f, Embedding::ZeroPadded).norm(s)
}

/// H^s norm treating the grid as one torus period.
pub fn sobolev_norm_periodic<F: Components + ?Sized>(f: &F, s: f64) -> f64 {
    Spectrum::new(f, Embedding::Periodic).norm(s)
}

/// (‖f‖_{H^c}, ‖f‖_{H^a}^{1−t}‖f‖_{H^b}^t) with c = (1−t)a + tb.
pub fn interpolation_bound<F: Components + ?Sized>(f: &F, a: f64, b: f64, t: f64) -> Result<(f64, f64)> {
    interpolation_bound_of(&Spectrum::new(f, Embedding::ZeroPadded), a, b, t)
}

pub fn interpolation_bound_of(spec: &Spectrum, a: f64, b: f64, t: f64) -> Result<(f64, f64)> {
    if !(a < b) || !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("need a < b and t in [0,1], got a={a}, b={b}, t={t}")));
    }
    let c = (1.0 - t) * a + t * b;
    let lhs = spec.norm(c);
    let rhs = spec.norm(a).powf(1.0 - t) * spec.norm(b).powf(t);
    Ok((lhs, rhs))
}

/// Split ‖f‖²_{H^{-1}} into the part from lattice frequencies in
/// E(ρ) = {|ξ′| ≤ ρ, |ξ_n| ≤ ρ} and the exact tail.
pub fn parseval_split(spec: &Spectrum, rho: f64) -> (f64, f64) {
    let mut inside = 0.0;
    let mut tail = 0.0;
    for ((p, w), xi) in spec.power.iter().zip(&spec.symbol).zip(&spec.freqs) {
        let v = p / w * spec.weight;
        if in_e_rho(xi, rho) {
            inside += v;
        } else {
            tail += v;
        }
    }
    (inside, tail)
}

pub(crate) fn in_e_rho(xi: &[f64], rho: f64) -> bool {
    let n = xi.len();
    let tan: f64 = xi[..n - 1].iter().map(|v| v * v).sum::<f64>().sqrt();
    tan <= rho && xi[n - 1].abs() <= rho
}

/// (‖u‖² + ‖hDu‖²)^{1/2} with trapezoid weights and the discrete gradient.
pub fn semiclassical_h1_norm(u: &ScalarField, h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("semiclassical parameter h = {h} must be positive")));
    }
    let g = &u.grid;
    let w = g.volume_weights();
    let mut acc = 0.0;
    for i in 0..g.len() {
        let mut s = u.values[i].norm_sqr();
        for k in 0..g.dim() {
            s += h * h * stencil::partial(g, &u.values, k, i).norm_sqr();
        }
        acc += w[i] * s;
    }
    Ok(acc.sqrt())
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;
    use std::sync::Arc;

    use super::*;
    use crate::domain::build_grid;
    use crate::fields::VectorField;
    use crate::C64;

    fn grid(c: usize) -> Arc<Grid> {
        Arc::new(build_grid(3, &[(-1.0, 1.0), (-1.0, 1.0), (-1.0, 0.0)], &[2 * c - 1, 2 * c - 1, c]).unwrap())
    }

    #[test]
    fn zero_field_has_zero_norm() {
        let f = ScalarField::zeros(grid(5));
        for s in [-1.0, 0.0, 2.6] {
            assert_eq!(sobolev_norm(&f, s), 0.0);
        }
    }

    #[test]
    fn single_mode_norm_and_interpolation_equality() {
        // One period of 8 cells per axis on [0, 7/8·L].
        let g = Arc::new(Grid::new_box(&[(0.0, 7.0), (0.0, 7.0), (-7.0, 0.0)], &[8, 8, 8]).unwrap());
        let xi0 = [2.0 * PI * 2.0 / 8.0, -2.0 * PI / 8.0, 2.0 * PI * 3.0 / 8.0];
        let f = ScalarField::from_fn(g, |x| C64::from_polar(1.0, x.iter().zip(&xi0).map(|(a, b)| a * b).sum()));
        let l2 = sobolev_norm_periodic(&f, 0.0);
        assert!((l2 * l2 - 512.0).abs() < 1e-9);
        let k2: f64 = xi0.iter().map(|v| v * v).sum();
        for s in [-1.0, 0.5, 2.6] {
            let ns = sobolev_norm_periodic(&f, s);
            assert!((ns - (1.0 + k2).powf(s / 2.0) * l2).abs() < 1e-12 * ns);
        }
        let spec = Spectrum::new(&f, Embedding::Periodic);
        let (l, r) = interpolation_bound_of(&spec, -1.0, 2.6, 0.5).unwrap();
        assert!((l - r).abs() <= 1e-12 * l);
    }

    #[test]
    fn gaussian_hminus1_matches_continuous_quadrature() {
        // f = e^{−|x−c|²/(2σ²)}; |f̂(ξ)|² = (2πσ²)³ e^{−σ²|ξ|²}.
        let sigma: f64 = 0.15;
        let g = grid(33);
        let f = ScalarField::from_fn(g, |x| {
            C64::new((-(x[0] * x[0] + x[1] * x[1] + (x[2] + 0.5).powi(2)) / (2.0 * sigma * sigma)).exp(), 0.0)
        });
        let num = sobolev_norm(&f, -1.0);
        // radial quadrature of (2π)^{-3} ∫ |f̂|²/(1+|ξ|²) dξ
        let m = 20000;
        let kmax = 12.0 / sigma;
        let dk = kmax / m as f64;
        let mut acc = 0.0;
        for i in 0..m {
            let k = (i as f64 + 0.5) * dk;
            acc += 4.0 * PI * k * k * (2.0 * PI * sigma * sigma).powi(3) * (-sigma * sigma * k * k).exp()
                / (1.0 + k * k)
                * dk;
        }
        let exact = (acc / (2.0 * PI).powi(3)).sqrt();
        assert!((num - exact).abs() < 0.01 * exact, "{num} vs {exact}");
    }

    #[test]
    fn interpolation_t_zero_and_vector_fields() {
        let g = grid(5);
        let a = VectorField::from_fn(g, |x| vec![C64::new(x[0], 0.0), C64::new(x[1] * x[2], 1.0), C64::new(0.3, x[0])]);
        let (l, r) = interpolation_bound(&a, -1.0, 2.6, 0.0).unwrap();
        assert!((l - r).abs() < 1e-14 * l);
        assert!((l - sobolev_norm(&a, -1.0)).abs() < 1e-14 * l);
        let (l, r) = interpolation_bound(&a, -1.0, 2.6, 0.5).unwrap();
        assert!(l <= r);
        assert!(interpolation_bound(&a, 1.0, 1.0, 0.5).is_err());
    }

    #[test]
    fn parseval_split_is_exact() {
        let g = grid(5);
        let f = ScalarField::from_fn(g, |x| C64::new((x[0] * 3.0).sin() * (x[2] + 1.0), x[1]));
        let spec = Spectrum::new(&f, Embedding::ZeroPadded);
        let total = spec.norm(-1.0).powi(2);
        for rho in [0.0, 1.0, 3.3, 10.0, 1e9] {
            let (i, t) = parseval_split(&spec, rho);
            assert!((i + t - total).abs() <= 1e-12 * total);
        }
    }

    #[test]
    fn semiclassical_norm_examples() {
        let g = grid(9);
        let one = ScalarField::from_fn(g.clone(), |_| C64::new(1.0, 0.0));
        assert!((semiclassical_h1_norm(&one, 0.1).unwrap() - 2.0).abs() < 1e-14);
        assert!(semiclassical_h1_norm(&one, 0.0).is_err());
        let g = grid(33);
        let h = 0.25;
        let u = ScalarField::from_fn(g, |x| C64::from_polar(1.0, x[0] / h));
        let v = semiclassical_h1_norm(&u, h).unwrap();
        assert!((v - 8f64.sqrt()).abs() < 0.01 * v, "{v}");
        let small = semiclassical_h1_norm(&u, 1e-6).unwrap();
        assert!((small - 2.0).abs() < 1e-6);
    }
}
