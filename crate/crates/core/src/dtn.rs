//! Partial Dirichlet-to-Neumann maps on Γ, boundary Sobolev norms from a
//! discrete Laplace–Beltrami operator, and the operator-norm gap between
//! two maps.

use std::io::{BufRead, BufReader, Read, Write};

use faer::{Mat, Side};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{trapezoid_1d, BoundaryPartition, Grid, GridHeader};
use crate::error::{Error, Result};
use crate::fields::ScalarField;
use crate::forward::{hex, OperatorHandle};
use crate::io::{complex_bytes, complex_from_bytes};
use crate::stencil;
use crate::C64;

const ZERO: C64 = C64::new(0.0, 0.0);

/// Columns per batched solve. Fixed so results do not depend on the
/// thread count.
const BATCH: usize = 32;

/// Power iteration stops at this relative change of the estimate.
pub const GAP_TOLERANCE: f64 = 1e-6;
pub const GAP_MAX_ITERATIONS: usize = 10_000;

/// SHA-256 of the grid description.
pub fn grid_hash(grid: &Grid) -> String {
    let json = serde_json::to_string(&grid.header()).expect("grid header serializes");
    hex(&Sha256::digest(json.as_bytes()))
}

/// Boundary data (f, g) in `Grid::boundary()` order.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceData {
    pub f: Vec<C64>,
    pub g: Vec<C64>,
    /// Nodes allowed to carry data. Data flagged Γ-supported must not
    /// energize Γ₀.
    pub support: Vec<bool>,
    pub gamma_supported: bool,
}

impl TraceData {
    pub fn zeros(grid: &Grid) -> TraceData {
        let nb = grid.boundary().len();
        TraceData { f: vec![ZERO; nb], g: vec![ZERO; nb], support: vec![true; nb], gamma_supported: false }
    }

    /// Zero data whose support is Γ.
    pub fn on_gamma(grid: &Grid, partition: &BoundaryPartition) -> TraceData {
        let mut t = TraceData::zeros(grid);
        for &b in &partition.gamma0 {
            t.support[partition.slot[b]] = false;
        }
        t.gamma_supported = true;
        t
    }

    /// Boundary values of two grid fields; not flagged Γ-supported.
    pub fn from_fields(f: &ScalarField, g: &ScalarField) -> TraceData {
        let grid = &f.grid;
        let mut t = TraceData::zeros(grid);
        for (k, &b) in grid.boundary().iter().enumerate() {
            t.f[k] = f.values[b];
            t.g[k] = g.values[b];
        }
        t
    }

    pub fn len(&self) -> usize {
        self.f.len()
    }
    pub fn is_empty(&self) -> bool {
        self.f.is_empty()
    }

    pub fn validate(&self, grid: &Grid, partition: &BoundaryPartition) -> Result<()> {
        let nb = grid.boundary().len();
        if self.f.len() != nb || self.g.len() != nb || self.support.len() != nb {
            return Err(Error::DimensionMismatch(format!(
                "trace data has {} / {} / {} entries for {nb} boundary nodes",
                self.f.len(),
                self.g.len(),
                self.support.len()
            )));
        }
        for (k, &b) in grid.boundary().iter().enumerate() {
            let energized = self.f[k] != ZERO || self.g[k] != ZERO;
            if energized && !self.support[k] {
                return Err(Error::InvalidArgument(format!("trace data energizes node {b} outside its support")));
            }
            if self.gamma_supported && energized && partition.in_gamma0(grid, b) {
                return Err(Error::InvalidArgument(format!("Γ-supported trace data energizes Γ₀ node {b}")));
            }
        }
        Ok(())
    }

    pub fn scale(&self, c: C64) -> TraceData {
        let mut t = self.clone();
        t.f.iter_mut().chain(t.g.iter_mut()).for_each(|v| *v *= c);
        t
    }

    pub fn add(&self, other: &TraceData) -> TraceData {
        let mut t = self.clone();
        t.f.iter_mut().zip(&other.f).for_each(|(a, b)| *a += b);
        t.g.iter_mut().zip(&other.g).for_each(|(a, b)| *a += b);
        t.support.iter_mut().zip(&other.support).for_each(|(a, b)| *a |= b);
        t.gamma_supported &= other.gamma_supported;
        t
    }
}

/// (∂_ν u, ∂_ν Δu) at every boundary node for Navier data (f, g);
/// Γ-supported inputs yield outputs restricted to Γ.
pub fn apply_dtn(op: &OperatorHandle, t: &TraceData) -> Result<TraceData> {
    t.validate(&op.grid, &op.partition)?;
    let (u, w) = op.solve_boundary_many(&[(t.f.clone(), t.g.clone())])?.pop().unwrap();
    let mut out = normal_traces(op, &u, &w);
    if t.gamma_supported {
        for &b in &op.partition.gamma0 {
            let s = op.partition.slot[b];
            out.f[s] = ZERO;
            out.g[s] = ZERO;
            out.support[s] = false;
        }
        out.gamma_supported = true;
    }
    Ok(out)
}

fn normal_traces(op: &OperatorHandle, u: &[C64], w: &[C64]) -> TraceData {
    let grid = &op.grid;
    let mut out = TraceData::zeros(grid);
    for (k, &b) in grid.boundary().iter().enumerate() {
        let nu = &op.partition.normals[k];
        out.f[k] = stencil::normal_derivative(grid, u, b, nu);
        out.g[k] = stencil::normal_derivative(grid, w, b, nu);
    }
    out
}

/// Γ nodes usable as inputs: those more than `margin` node layers below the
/// top plane. Margin 0 keeps every Γ node, including the top rim.
pub fn input_nodes(grid: &Grid, partition: &BoundaryPartition, margin: usize) -> Vec<usize> {
    let n = grid.dim();
    let top = grid.counts()[n - 1] - 1;
    partition.gamma.iter().copied().filter(|&b| grid.axis_index(b, n - 1) + margin <= top).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DtnHeader {
    pub kind: String,
    pub version: String,
    pub grid: GridHeader,
    pub grid_hash: String,
    pub coefficient_hash: String,
    pub margin: usize,
    /// Grid indices of the input basis nodes.
    pub inputs: Vec<usize>,
    /// Grid indices of the output nodes.
    pub outputs: Vec<usize>,
    pub rows: usize,
    pub cols: usize,
    /// Where the Γ₀/Γ rim nodes went.
    pub rim: String,
}

/// Dense partial DtN matrix. Columns: f-basis on `inputs`, then g-basis.
/// Rows: ∂_ν u on `outputs`, then ∂_ν Δu.
#[derive(Clone, Debug, PartialEq)]
pub struct DtnMap {
    pub header: DtnHeader,
    /// Column-major, `rows × cols`.
    pub matrix: Vec<C64>,
}

impl DtnMap {
    pub fn assemble(op: &OperatorHandle, margin: usize) -> Result<DtnMap> {
        let grid = &op.grid;
        let part = &op.partition;
        let inputs = input_nodes(grid, part, margin);
        if inputs.is_empty() {
            return Err(Error::InvalidArgument(format!("margin {margin} leaves no Γ input nodes")));
        }
        let outputs = part.gamma.clone();
        let ni = inputs.len();
        let no = outputs.len();
        let nb = grid.boundary().len();
        // Trigger the margin check once before fanning out.
        op.margin()?;
        let cols: Vec<usize> = (0..2 * ni).collect();
        let blocks: Vec<Result<Vec<Vec<C64>>>> = cols
            .par_chunks(BATCH)
            .map(|chunk| {
                let data: Vec<(Vec<C64>, Vec<C64>)> = chunk
                    .iter()
                    .map(|&c| {
                        let mut f = vec![ZERO; nb];
                        let mut g = vec![ZERO; nb];
                        let s = part.slot[inputs[c % ni]];
                        if c < ni {
                            f[s] = C64::new(1.0, 0.0);
                        } else {
                            g[s] = C64::new(1.0, 0.0);
                        }
                        (f, g)
                    })
                    .collect();
                let sols = op.solve_boundary_many(&data)?;
                Ok(sols
                    .iter()
                    .map(|(u, w)| {
                        let mut col = Vec::with_capacity(2 * no);
                        for field in [u, w] {
                            for &b in &outputs {
                                col.push(stencil::normal_derivative(grid, field, b, part.normal(b)));
                            }
                        }
                        col
                    })
                    .collect())
            })
            .collect();
        let mut matrix = Vec::with_capacity(4 * ni * no);
        for b in blocks {
            for col in b? {
                matrix.extend(col);
            }
        }
        let header = DtnHeader {
            kind: "dtn".into(),
            version: crate::VERSION.into(),
            grid: grid.header(),
            grid_hash: grid_hash(grid),
            coefficient_hash: op.coefficient_hash(),
            margin,
            inputs,
            outputs,
            rows: 2 * no,
            cols: 2 * ni,
            rim: "gamma".into(),
        };
        Ok(DtnMap { header, matrix })
    }

    pub fn rows(&self) -> usize {
        self.header.rows
    }
    pub fn cols(&self) -> usize {
        self.header.cols
    }

    pub fn column(&self, j: usize) -> &[C64] {
        &self.matrix[j * self.rows()..(j + 1) * self.rows()]
    }

    /// Matrix-vector product with input coefficients (f on inputs, g on inputs).
    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![ZERO; self.rows()];
        for (j, &xj) in x.iter().enumerate() {
            if xj != ZERO {
                y.iter_mut().zip(self.column(j)).for_each(|(a, c)| *a += c * xj);
            }
        }
        y
    }

    pub fn apply_adjoint(&self, y: &[C64]) -> Vec<C64> {
        (0..self.cols()).map(|j| self.column(j).iter().zip(y).map(|(c, v)| c.conj() * v).sum()).collect()
    }

    /// Input coefficients of Γ-supported trace data.
    pub fn coefficients(&self, grid: &Grid, t: &TraceData) -> Result<Vec<C64>> {
        let part = BoundaryPartition::new(grid);
        t.validate(grid, &part)?;
        let ni = self.header.inputs.len();
        let mut on = vec![false; grid.len()];
        self.header.inputs.iter().for_each(|&b| on[b] = true);
        for (k, &b) in grid.boundary().iter().enumerate() {
            if !on[b] && (t.f[k] != ZERO || t.g[k] != ZERO) {
                return Err(Error::InvalidArgument(format!("trace data energizes node {b} outside the input basis")));
            }
        }
        let mut x = vec![ZERO; 2 * ni];
        for (j, &b) in self.header.inputs.iter().enumerate() {
            x[j] = t.f[part.slot[b]];
            x[ni + j] = t.g[part.slot[b]];
        }
        Ok(x)
    }

    pub fn scaled(&self, c: C64) -> DtnMap {
        DtnMap { header: self.header.clone(), matrix: self.matrix.iter().map(|v| v * c).collect() }
    }

    pub fn difference(&self, other: &DtnMap) -> Result<Vec<C64>> {
        self.check_compatible(other)?;
        Ok(self.matrix.iter().zip(&other.matrix).map(|(a, b)| a - b).collect())
    }

    fn check_compatible(&self, other: &DtnMap) -> Result<()> {
        let (a, b) = (&self.header, &other.header);
        if a.grid_hash != b.grid_hash || a.inputs != b.inputs || a.outputs != b.outputs {
            return Err(Error::DimensionMismatch("DtN maps live on different grids or Γ bases".into()));
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, out: &mut W) -> Result<()> {
        let line = serde_json::to_string(&self.header).map_err(|e| Error::Format(e.to_string()))?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
        out.write_all(&complex_bytes(&self.matrix))?;
        Ok(())
    }

    pub fn read<R: Read>(input: R) -> Result<DtnMap> {
        let mut r = BufReader::new(input);
        let mut line = String::new();
        r.read_line(&mut line)?;
        let header: DtnHeader =
            serde_json::from_str(line.trim_end()).map_err(|e| Error::Format(format!("DtN header: {e}")))?;
        if header.kind != "dtn" {
            return Err(Error::Format(format!("expected a dtn file, found kind {:?}", header.kind)));
        }
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let matrix = complex_from_bytes(&bytes)?;
        if matrix.len() != header.rows * header.cols {
            return Err(Error::Format(format!(
                "DtN payload has {} entries, expected {}",
                matrix.len(),
                header.rows * header.cols
            )));
        }
        Ok(DtnMap { header, matrix })
    }
}

/// Eigenpairs of the symmetrized boundary Laplace–Beltrami operator
/// M^{-1/2} K M^{-1/2}, K the face-wise stiffness and M the lumped mass.
#[derive(Clone, Debug)]
pub struct BoundarySpectrum {
    /// Boundary nodes in `Grid::boundary()` order.
    pub nodes: Vec<usize>,
    pub mass: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors, column-major.
    pub vectors: Vec<f64>,
}

impl BoundarySpectrum {
    pub fn new(grid: &Grid) -> Result<BoundarySpectrum> {
        let part = BoundaryPartition::new(grid);
        let n = grid.dim();
        let nb = grid.boundary().len();
        let mut k = Mat::<f64>::zeros(nb, nb);
        let axis_w: Vec<Vec<f64>> = (0..n).map(|a| trapezoid_1d(grid.counts()[a], grid.spacing()[a])).collect();
        for face in &part.faces {
            for &idx in &face.nodes {
                for t in (0..n).filter(|&t| t != face.axis) {
                    let Some(nb_idx) = grid.neighbor(idx, t, 1) else { continue };
                    let w = (0..n)
                        .filter(|&o| o != face.axis && o != t)
                        .map(|o| axis_w[o][grid.axis_index(idx, o)])
                        .product::<f64>()
                        / grid.spacing()[t];
                    let (i, j) = (part.slot[idx], part.slot[nb_idx]);
                    k[(i, i)] += w;
                    k[(j, j)] += w;
                    k[(i, j)] -= w;
                    k[(j, i)] -= w;
                }
            }
        }
        let mass = part.weights.clone();
        let rs: Vec<f64> = mass.iter().map(|m| 1.0 / m.sqrt()).collect();
        let s = Mat::<f64>::from_fn(nb, nb, |i, j| rs[i] * k[(i, j)] * rs[j]);
        let evd =
            s.self_adjoint_eigen(Side::Lower).map_err(|e| Error::Numerical(format!("boundary eigensolver: {e:?}")))?;
        let eigenvalues: Vec<f64> = evd.S().column_vector().iter().map(|v| v.max(0.0)).collect();
        let u = evd.U();
        let mut vectors = Vec::with_capacity(nb * nb);
        for j in 0..nb {
            for i in 0..nb {
                vectors.push(u[(i, j)]);
            }
        }
        Ok(BoundarySpectrum { nodes: grid.boundary().to_vec(), mass, eigenvalues, vectors })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn vector(&self, j: usize) -> &[f64] {
        &self.vectors[j * self.len()..(j + 1) * self.len()]
    }

    /// ‖(I + Λ_B)^{τ/2} t‖_{L²(∂Ω)} for t in `Grid::boundary()` order.
    pub fn norm(&self, t: &[C64], tau: f64) -> f64 {
        let y: Vec<C64> = t.iter().zip(&self.mass).map(|(v, m)| v * m.sqrt()).collect();
        let mut acc = 0.0;
        for (j, &lam) in self.eigenvalues.iter().enumerate() {
            let c: C64 = self.vector(j).iter().zip(&y).map(|(q, v)| v * q).sum();
            acc += (1.0 + lam).powf(tau) * c.norm_sqr();
        }
        acc.sqrt()
    }

    /// Gram matrix of the τ-norm restricted to `slots` (positions in
    /// `Grid::boundary()` order), row-major.
    pub fn gram(&self, slots: &[usize], tau: f64) -> Vec<f64> {
        let m = slots.len();
        let d: Vec<f64> = self.eigenvalues.iter().map(|l| (1.0 + l).powf(tau)).collect();
        // rows of Q restricted to slots, scaled by √mass
        let qr: Vec<Vec<f64>> =
            slots.iter().map(|&s| (0..self.len()).map(|j| self.vectors[j * self.len() + s]).collect()).collect();
        let sm: Vec<f64> = slots.iter().map(|&s| self.mass[s].sqrt()).collect();
        let mut g = vec![0.0; m * m];
        for a in 0..m {
            for b in a..m {
                let v: f64 = qr[a].iter().zip(&qr[b]).zip(&d).map(|((x, y), w)| x * y * w).sum::<f64>() * sm[a] * sm[b];
                g[a * m + b] = v;
                g[b * m + a] = v;
            }
        }
        g
    }
}

/// Norm of boundary values of a grid field.
pub fn boundary_sobolev_norm(t: &ScalarField, tau: f64) -> Result<f64> {
    let spec = BoundarySpectrum::new(&t.grid)?;
    let vals: Vec<C64> = t.grid.boundary().iter().map(|&b| t.values[b]).collect();
    Ok(spec.norm(&vals, tau))
}

/// ‖(f, g)‖ in the (τ_f, τ_g) product norm.
pub fn trace_norm(spec: &BoundarySpectrum, t: &TraceData, tau_f: f64, tau_g: f64) -> f64 {
    (spec.norm(&t.f, tau_f).powi(2) + spec.norm(&t.g, tau_g).powi(2)).sqrt()
}

/// Cholesky factors of the input weight and the output weight, reusable
/// across many gap evaluations on one grid and Γ basis.
#[derive(Clone, Debug)]
pub struct GapWeights {
    inputs: Vec<usize>,
    outputs: Vec<usize>,
    /// Lower Cholesky factors of the (7/2) and (3/2) input Grams.
    chol_f: Vec<f64>,
    chol_g: Vec<f64>,
    /// (5/2) and (1/2) output Grams.
    out_f: Vec<f64>,
    out_g: Vec<f64>,
}

impl GapWeights {
    pub fn new(grid: &Grid, map: &DtnMap) -> Result<GapWeights> {
        let spec = BoundarySpectrum::new(grid)?;
        Self::with_spectrum(grid, &spec, map)
    }

    pub fn with_spectrum(grid: &Grid, spec: &BoundarySpectrum, map: &DtnMap) -> Result<GapWeights> {
        if map.header.grid_hash != grid_hash(grid) {
            return Err(Error::DimensionMismatch("DtN map was assembled on another grid".into()));
        }
        let part = BoundaryPartition::new(grid);
        let si: Vec<usize> = map.header.inputs.iter().map(|&b| part.slot[b]).collect();
        let so: Vec<usize> = map.header.outputs.iter().map(|&b| part.slot[b]).collect();
        Ok(GapWeights {
            inputs: map.header.inputs.clone(),
            outputs: map.header.outputs.clone(),
            chol_f: cholesky(&spec.gram(&si, 3.5), si.len())?,
            chol_g: cholesky(&spec.gram(&si, 1.5), si.len())?,
            out_f: spec.gram(&so, 2.5),
            out_g: spec.gram(&so, 0.5),
        })
    }
}

fn cholesky(g: &[f64], m: usize) -> Result<Vec<f64>> {
    let a = Mat::<f64>::from_fn(m, m, |i, j| g[i * m + j]);
    let llt =
        a.llt(Side::Lower).map_err(|e| Error::Numerical(format!("trace-norm Gram is not positive definite: {e:?}")))?;
    let l = llt.L();
    let mut out = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..=i {
            out[i * m + j] = l[(i, j)];
        }
    }
    Ok(out)
}

/// Solve L y = b in place (L lower, row-major).
fn forward_sub(l: &[f64], y: &mut [C64]) {
    let m = y.len();
    for i in 0..m {
        let mut s = y[i];
        for j in 0..i {
            s -= l[i * m + j] * y[j];
        }
        y[i] = s / l[i * m + i];
    }
}

/// Solve Lᵀ y = b in place.
fn backward_sub(l: &[f64], y: &mut [C64]) {
    let m = y.len();
    for i in (0..m).rev() {
        let mut s = y[i];
        for j in i + 1..m {
            s -= l[j * m + i] * y[j];
        }
        y[i] = s / l[i * m + i];
    }
}

fn sym_apply(g: &[f64], x: &[C64]) -> Vec<C64> {
    let m = x.len();
    (0..m).map(|i| g[i * m..(i + 1) * m].iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

/// Result of the gap power iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GapEstimate {
    pub value: f64,
    pub iterations: usize,
}

/// Largest singular value of W_out^{1/2}(Λ₁ − Λ₂)W_in^{−1/2}.
pub fn dtn_gap_norm(l1: &DtnMap, l2: &DtnMap) -> Result<f64> {
    let grid = Grid::from_header(&l1.header.grid)?;
    let w = GapWeights::new(&grid, l1)?;
    Ok(dtn_gap_with(l1, l2, &w)?.value)
}

pub fn dtn_gap_with(l1: &DtnMap, l2: &DtnMap, w: &GapWeights) -> Result<GapEstimate> {
    if l1.header.inputs != w.inputs || l1.header.outputs != w.outputs {
        return Err(Error::DimensionMismatch("gap weights were built for another Γ basis".into()));
    }
    let diff = DtnMap { header: l1.header.clone(), matrix: l1.difference(l2)? };
    gap_power_iteration(&diff, w)
}

fn gap_power_iteration(d: &DtnMap, w: &GapWeights) -> Result<GapEstimate> {
    let ni = w.inputs.len();
    let no = w.outputs.len();
    if d.matrix.iter().all(|v| *v == ZERO) {
        return Ok(GapEstimate { value: 0.0, iterations: 0 });
    }
    // y ↦ L⁻¹ Dᴴ W_out D L⁻ᴴ y, Hermitian positive semidefinite.
    let step = |y: &[C64]| -> Vec<C64> {
        let mut x = y.to_vec();
        backward_sub(&w.chol_f, &mut x[..ni]);
        backward_sub(&w.chol_g, &mut x[ni..]);
        let z = d.apply(&x);
        let mut t = sym_apply(&w.out_f, &z[..no]);
        t.extend(sym_apply(&w.out_g, &z[no..]));
        let mut s = d.apply_adjoint(&t);
        forward_sub(&w.chol_f, &mut s[..ni]);
        forward_sub(&w.chol_g, &mut s[ni..]);
        s
    };
    let mut y: Vec<C64> =
        (0..2 * ni).map(|k| C64::new(1.0 + 0.5 * (k as f64 * 0.7).sin(), 0.25 * (k as f64 * 1.3).cos())).collect();
    let nrm = |v: &[C64]| v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let n0 = nrm(&y);
    y.iter_mut().for_each(|v| *v /= n0);
    let mut lam = 0.0;
    for it in 1..=GAP_MAX_ITERATIONS {
        let z = step(&y);
        let next: f64 = y.iter().zip(&z).map(|(a, b)| (a.conj() * b).re).sum();
        let nz = nrm(&z);
        if !nz.is_finite() {
            return Err(Error::Numerical("gap power iteration overflowed".into()));
        }
        if nz == 0.0 {
            return Ok(GapEstimate { value: 0.0, iterations: it });
        }
        if it > 1 && (next - lam).abs() <= GAP_TOLERANCE * next {
            return Ok(GapEstimate { value: next.max(0.0).sqrt(), iterations: it });
        }
        lam = next;
        y = z.into_iter().map(|v| v / nz).collect();
    }
    Err(Error::NotConverged {
        iterations: GAP_MAX_ITERATIONS,
        what: "DtN gap power iteration".into(),
        history: vec![lam],
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::domain::build_grid;
    use crate::fields::VectorField;
    use crate::forward::assemble;

    fn grid(c: usize) -> Arc<Grid> {
        Arc::new(build_grid(3, &[(-1.0, 1.0), (-1.0, 1.0), (-1.0, 0.0)], &[2 * c - 1, 2 * c - 1, c]).unwrap())
    }

    fn op(g: &Arc<Grid>, s: f64) -> OperatorHandle {
        let a = VectorField::from_fn(g.clone(), |x| {
            vec![C64::new(0.3 * s * x[1], 0.0), C64::new(-0.2 * s * x[0], 0.0), C64::new(0.1 * s * (x[0] + x[2]), 0.0)]
        });
        let q = ScalarField::from_fn(g.clone(), |x| C64::new(1.0 + s * x[0] * x[1], 0.0));
        assemble(g.clone(), &a, &q).unwrap()
    }

    #[test]
    fn constant_norm_is_root_area() {
        let g = grid(5);
        let one = ScalarField::from_fn(g.clone(), |_| C64::new(1.0, 0.0));
        let area: f64 = 2.0 * 4.0 + 4.0 * 2.0;
        for tau in [0.5, 1.5, 3.5, -1.0] {
            let v = boundary_sobolev_norm(&one, tau).unwrap();
            assert!((v - area.sqrt()).abs() < 1e-10 * v, "{tau}: {v}");
        }
    }

    #[test]
    fn eigenvector_norm_and_tau_monotonicity() {
        let g = grid(5);
        let spec = BoundarySpectrum::new(&g).unwrap();
        let j = spec.len() / 2;
        let lam = spec.eigenvalues[j];
        // nodal values t = M^{-1/2} q_j have L² norm 1
        let t: Vec<C64> = spec.vector(j).iter().zip(&spec.mass).map(|(q, m)| C64::new(q / m.sqrt(), 0.0)).collect();
        assert!((spec.norm(&t, 0.0) - 1.0).abs() < 1e-12);
        for tau in [0.5, 2.5] {
            assert!((spec.norm(&t, tau) - (1.0 + lam).powf(tau / 2.0)).abs() < 1e-10 * (1.0 + lam).powf(tau / 2.0));
        }
        let f: Vec<C64> = g
            .boundary()
            .iter()
            .map(|&b| {
                let x = g.coords(b);
                C64::new(x[0] * x[2] + x[1], x[0])
            })
            .collect();
        let mut prev = 0.0;
        for tau in [0.5, 1.5, 2.5, 3.5] {
            let v = spec.norm(&f, tau);
            assert!(v >= prev);
            prev = v;
        }
        assert!(spec.eigenvalues[0].abs() < 1e-10);
        assert!(spec.eigenvalues[1] > 1e-3);
    }

    #[test]
    fn gram_matches_norm() {
        let g = grid(5);
        let spec = BoundarySpectrum::new(&g).unwrap();
        let slots: Vec<usize> = (0..spec.len()).step_by(3).collect();
        let mut t = vec![ZERO; spec.len()];
        for (k, &s) in slots.iter().enumerate() {
            t[s] = C64::new((k as f64).sin(), 0.3 * k as f64 / 10.0);
        }
        let x: Vec<C64> = slots.iter().map(|&s| t[s]).collect();
        let gm = spec.gram(&slots, 1.5);
        let q: f64 = x.iter().zip(sym_apply(&gm, &x)).map(|(a, b)| (a.conj() * b).re).sum();
        let v = spec.norm(&t, 1.5);
        assert!((q.sqrt() - v).abs() < 1e-9 * v);
    }

    #[test]
    fn apply_matches_columns_and_is_linear() {
        let g = grid(5);
        let o = op(&g, 1.0);
        let map = DtnMap::assemble(&o, 0).unwrap();
        let part = &o.partition;
        let mut t = TraceData::on_gamma(&g, part);
        for (k, &b) in map.header.inputs.iter().enumerate() {
            let s = part.slot[b];
            t.f[s] = C64::new((k as f64 * 0.37).cos(), 0.1);
            t.g[s] = C64::new(0.0, (k as f64 * 0.11).sin());
        }
        let x = map.coefficients(&g, &t).unwrap();
        let via_map = map.apply(&x);
        let direct = apply_dtn(&o, &t).unwrap();
        let no = map.header.outputs.len();
        let scale = via_map.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for (r, &b) in map.header.outputs.iter().enumerate() {
            let s = part.slot[b];
            assert!((via_map[r] - direct.f[s]).norm() <= 1e-12 * scale);
            assert!((via_map[no + r] - direct.g[s]).norm() <= 1e-12 * scale);
        }
        // linearity
        let t2 = t.scale(C64::new(0.0, 2.0));
        let lhs = apply_dtn(&o, &t.scale(C64::new(3.0, 0.0)).add(&t2)).unwrap();
        let a = apply_dtn(&o, &t).unwrap();
        let b = apply_dtn(&o, &t2).unwrap();
        for k in 0..lhs.len() {
            assert!((lhs.f[k] - 3.0 * a.f[k] - b.f[k]).norm() <= 1e-10 * scale);
            assert!((lhs.g[k] - 3.0 * a.g[k] - b.g[k]).norm() <= 1e-10 * scale);
        }
        let zero = apply_dtn(&o, &TraceData::on_gamma(&g, part)).unwrap();
        assert!(zero.f.iter().chain(&zero.g).all(|v| *v == ZERO));
    }

    #[test]
    fn gamma0_energy_is_rejected() {
        let g = grid(5);
        let o = op(&g, 0.0);
        let mut t = TraceData::on_gamma(&g, &o.partition);
        let b = o.partition.gamma0[0];
        t.f[o.partition.slot[b]] = C64::new(1.0, 0.0);
        assert!(apply_dtn(&o, &t).is_err());
        t.support = vec![true; t.len()];
        assert!(apply_dtn(&o, &t).is_err());
        let map = DtnMap::assemble(&o, 1).unwrap();
        assert!(map.header.inputs.len() < o.partition.gamma.len());
        assert!(DtnMap::assemble(&o, 100).is_err());
    }

    #[test]
    fn mms_normal_derivative_second_order() {
        // u = |x|² e^{x₀} cos x₁ is biharmonic.
        let h = |x: &[f64]| x[0].exp() * x[1].cos();
        let u_of = |x: &[f64]| (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) * h(x);
        let grad_u = |x: &[f64]| {
            let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
            let e = x[0].exp();
            [2.0 * x[0] * h(x) + r2 * e * x[1].cos(), 2.0 * x[1] * h(x) - r2 * e * x[1].sin(), 2.0 * x[2] * h(x)]
        };
        let w_of = |x: &[f64]| 6.0 * h(x) + 4.0 * x[0].exp() * (x[0] * x[1].cos() - x[1] * x[1].sin());
        let mut errs = Vec::new();
        for c in [5, 9, 17] {
            let g = grid(c);
            let o = assemble(g.clone(), &VectorField::zeros(g.clone()), &ScalarField::zeros(g.clone())).unwrap();
            let f = ScalarField::from_fn(g.clone(), |x| C64::new(u_of(x), 0.0));
            let w = ScalarField::from_fn(g.clone(), |x| C64::new(w_of(x), 0.0));
            let out = apply_dtn(&o, &TraceData::from_fields(&f, &w)).unwrap();
            let mut e = 0.0f64;
            for (k, &b) in g.boundary().iter().enumerate() {
                let x = g.coords(b);
                let nu = &o.partition.normals[k];
                let exact: f64 = grad_u(&x).iter().zip(nu).map(|(a, n)| a * n).sum();
                e = e.max((out.f[k].re - exact).abs());
            }
            errs.push(e);
        }
        let p1 = (errs[0] / errs[1]).log2();
        let p2 = (errs[1] / errs[2]).log2();
        assert!(p2 > 1.8 && p1 > 1.5, "{errs:?}");
    }

    #[test]
    fn gap_properties_and_svd_oracle() {
        let g = grid(5);
        let maps: Vec<DtnMap> = [0.0, 0.5, 1.0].iter().map(|&s| DtnMap::assemble(&op(&g, s), 0).unwrap()).collect();
        let w = GapWeights::new(&g, &maps[0]).unwrap();
        let gap = |a: &DtnMap, b: &DtnMap| dtn_gap_with(a, b, &w).unwrap().value;
        assert_eq!(gap(&maps[1], &maps[1]), 0.0);
        let g01 = gap(&maps[0], &maps[1]);
        let g12 = gap(&maps[1], &maps[2]);
        let g02 = gap(&maps[0], &maps[2]);
        assert!(g01 > 0.0);
        assert!(g02 <= (g01 + g12) * (1.0 + 1e-5));
        let c = C64::new(0.0, -2.5);
        let gc = gap(&maps[0].scaled(c), &maps[1].scaled(c));
        assert!((gc - 2.5 * g01).abs() <= 1e-5 * gc);
        // Dense oracle: σ_max of W_out^{1/2} D L^{-H} via the Gram form.
        let ni = w.inputs.len();
        let no = w.outputs.len();
        let d = maps[0].difference(&maps[1]).unwrap();
        let dm = DtnMap { header: maps[0].header.clone(), matrix: d };
        let mut cols = Vec::new();
        for j in 0..2 * ni {
            let mut e = vec![ZERO; 2 * ni];
            e[j] = C64::new(1.0, 0.0);
            backward_sub(&w.chol_f, &mut e[..ni]);
            backward_sub(&w.chol_g, &mut e[ni..]);
            cols.push(dm.apply(&e));
        }
        let mut gram = Mat::<C64>::zeros(2 * ni, 2 * ni);
        for a in 0..2 * ni {
            let mut t = sym_apply(&w.out_f, &cols[a][..no]);
            t.extend(sym_apply(&w.out_g, &cols[a][no..]));
            for b in 0..2 * ni {
                gram[(b, a)] = cols[b].iter().zip(&t).map(|(x, y)| x.conj() * y).sum();
            }
        }
        let ev = gram.self_adjoint_eigenvalues(Side::Lower).unwrap();
        let exact = ev.last().unwrap().sqrt();
        assert!((g01 - exact).abs() <= 1e-4 * exact, "{g01} vs {exact}");
    }

    #[test]
    fn serialization_roundtrip() {
        let g = grid(5);
        let map = DtnMap::assemble(&op(&g, 0.5), 0).unwrap();
        let mut buf = Vec::new();
        map.write(&mut buf).unwrap();
        let back = DtnMap::read(buf.as_slice()).unwrap();
        assert_eq!(back, map);
        assert_eq!(back.header.grid_hash, grid_hash(&g));
        assert!(DtnMap::read(&buf[..buf.len() - 1]).is_err());
    }
}
