//! FFTs on flat row-major arrays and the periodic tori used for Sobolev
//! norms, Fourier oracles and remainder solves.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use crate::domain::Grid;
use crate::C64;

/// Smallest 2^a·3^b·5^c that is at least `n`.
pub fn fast_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// Signed integer frequency of FFT slot `m` out of `p`.
pub fn signed_mode(m: usize, p: usize) -> i64 {
    if 2 * m < p {
        m as i64
    } else {
        m as i64 - p as i64
    }
}

/// In-place unnormalized n-dimensional FFT (forward: e^{−i…}).
pub fn fft_nd(data: &mut [C64], shape: &[usize], inverse: bool) {
    FftPlan::new(shape).process(data, inverse);
}

/// Forward and inverse plans for every axis of one shape.
#[derive(Clone)]
pub struct FftPlan {
    shape: Vec<usize>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
}

impl std::fmt::Debug for FftPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FftPlan").field("shape", &self.shape).finish()
    }
}

impl FftPlan {
    pub fn new(shape: &[usize]) -> FftPlan {
        let mut planner = FftPlanner::<f64>::new();
        FftPlan {
            shape: shape.to_vec(),
            forward: shape.iter().map(|&p| planner.plan_fft_forward(p)).collect(),
            inverse: shape.iter().map(|&p| planner.plan_fft_inverse(p)).collect(),
        }
    }

    pub fn process(&self, data: &mut [C64], inverse: bool) {
        let shape = &self.shape;
        let len: usize = shape.iter().product();
        assert_eq!(data.len(), len);
        let mut stride = 1usize;
        for axis in (0..shape.len()).rev() {
            let p = shape[axis];
            let fft = if inverse { &self.inverse[axis] } else { &self.forward[axis] };
            let mut line = vec![C64::new(0.0, 0.0); p];
            let mut scratch = vec![C64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
            let block = stride * p;
            for outer in 0..len / block {
                for inner in 0..stride {
                    let base = outer * block + inner;
                    for (t, l) in line.iter_mut().enumerate() {
                        *l = data[base + t * stride];
                    }
                    fft.process_with_scratch(&mut line, &mut scratch);
                    for (t, l) in line.iter().enumerate() {
                        data[base + t * stride] = *l;
                    }
                }
            }
            stride *= p;
        }
    }
}

/// Periodic lattice with node `t` (multi-index) at `origin + t·spacing`.
#[derive(Clone, Debug, PartialEq)]
pub struct Torus {
    pub shape: Vec<usize>,
    pub spacing: Vec<f64>,
    pub origin: Vec<f64>,
}

impl Torus {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn dim(&self) -> usize {
        self.shape.len()
    }
    pub fn period(&self, axis: usize) -> f64 {
        self.shape[axis] as f64 * self.spacing[axis]
    }
    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }
    pub fn strides(&self) -> Vec<usize> {
        let n = self.dim();
        let mut s = vec![1usize; n];
        for k in (0..n.saturating_sub(1)).rev() {
            s[k] = s[k + 1] * self.shape[k + 1];
        }
        s
    }

    /// Torus holding `grid` with at least `factor` times its extent per
    /// axis, grid node (0,..,0) at torus node (0,..,0).
    pub fn padded(grid: &Grid, factor: f64) -> Torus {
        let shape = grid.counts().iter().map(|&c| fast_size((c as f64 * factor).ceil() as usize)).collect();
        Torus { shape, spacing: grid.spacing().to_vec(), origin: grid.lo().to_vec() }
    }

    /// Signed lattice frequency of FFT slot `m` along `axis`.
    pub fn frequency(&self, axis: usize, m: usize) -> f64 {
        2.0 * PI * signed_mode(m, self.shape[axis]) as f64 / self.period(axis)
    }

    /// Frequencies of all FFT slots, flat in row-major order.
    pub fn frequencies(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let strides = self.strides();
        (0..self.len())
            .map(|idx| (0..n).map(|k| self.frequency(k, (idx / strides[k]) % self.shape[k])).collect())
            .collect()
    }

    /// Embed a grid field (grid node multi-index = torus multi-index).
    pub fn embed(&self, grid: &Grid, values: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); self.len()];
        let strides = self.strides();
        let n = grid.dim();
        let mut mi = vec![0usize; n];
        for (idx, v) in values.iter().enumerate() {
            grid.multi_index(idx, &mut mi);
            let t: usize = mi.iter().zip(&strides).map(|(i, s)| i * s).sum();
            out[t] = *v;
        }
        out
    }

    /// f̂(ξ_m) = ΠΔ Σ_x f(x) e^{−ix·ξ_m} for every lattice frequency ξ_m,
    /// with x the physical node positions.
    pub fn transform(&self, values: &[C64]) -> Vec<C64> {
        let mut data = values.to_vec();
        fft_nd(&mut data, &self.shape, false);
        let vol = self.cell_volume();
        let strides = self.strides();
        let n = self.dim();
        for (idx, d) in data.iter_mut().enumerate() {
            let mut phase = 0.0;
            for k in 0..n {
                phase += self.origin[k] * self.frequency(k, (idx / strides[k]) % self.shape[k]);
            }
            *d *= C64::from_polar(vol, -phase);
        }
        data
    }

    /// Frequency-cell weight (2π)^{−n}·Π(2π/L_k); Parseval reads
    /// Σ_x |f|²ΠΔ = Σ_m |f̂_m|²·w.
    pub fn frequency_weight(&self) -> f64 {
        (0..self.dim()).map(|k| 1.0 / self.period(k)).product()
    }
}

/// Direct sum ΠΔ Σ_x f(x) e^{−ix·ξ} over the nodes of a grid, at any ξ.
pub fn dtft(grid: &Grid, values: &[C64], xi: &[f64]) -> C64 {
    let n = grid.dim();
    let vol = grid.cell_volume();
    let mut acc = C64::new(0.0, 0.0);
    for (idx, v) in values.iter().enumerate() {
        if *v == C64::new(0.0, 0.0) {
            continue;
        }
        let mut phase = 0.0;
        for k in 0..n {
            phase += grid.coord(idx, k) * xi[k];
        }
        acc += v * C64::from_polar(1.0, -phase);
    }
    acc * vol
}
