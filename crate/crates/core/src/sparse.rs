//! Square sparse complex systems: CSR storage for products, a cached faer
//! LU for solves.

use std::sync::OnceLock;

use faer::linalg::solvers::SolveCore;
use faer::sparse::linalg::solvers::Lu;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Conj, Mat};

use crate::error::{Error, Result};
use crate::C64;

pub struct SparseSystem {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
    lu: OnceLock<std::result::Result<Lu<usize, C64>, String>>,
}

impl std::fmt::Debug for SparseSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SparseSystem").field("n", &self.n).field("nnz", &self.vals.len()).finish()
    }
}

impl SparseSystem {
    /// Rows given as (column, value) lists; duplicate columns are summed in
    /// order of appearance and exact zeros are dropped.
    pub fn from_rows(n: usize, rows: Vec<Vec<(usize, C64)>>) -> SparseSystem {
        assert_eq!(rows.len(), n);
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let mut k = 0;
            while k < row.len() {
                let c = row[k].0;
                let mut v = C64::new(0.0, 0.0);
                while k < row.len() && row[k].0 == c {
                    v += row[k].1;
                    k += 1;
                }
                if v != C64::new(0.0, 0.0) {
                    cols.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        SparseSystem { n, row_ptr, cols, vals, lu: OnceLock::new() }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Raw CSR arrays, for hashing and byte comparison.
    pub fn csr(&self) -> (&[usize], &[usize], &[C64]) {
        (&self.row_ptr, &self.cols, &self.vals)
    }

    #[cfg(test)]
    pub fn scaled(&self, c: f64) -> SparseSystem {
        SparseSystem {
            n: self.n,
            row_ptr: self.row_ptr.clone(),
            cols: self.cols.clone(),
            vals: self.vals.iter().map(|v| v * c).collect(),
            lu: OnceLock::new(),
        }
    }

    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        (0..self.n)
            .map(|r| {
                let mut acc = C64::new(0.0, 0.0);
                for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                    acc += self.vals[k] * x[self.cols[k]];
                }
                acc
            })
            .collect()
    }

    /// y = Mᴴx.
    pub fn matvec_adjoint(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![C64::new(0.0, 0.0); self.n];
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                y[self.cols[k]] += self.vals[k].conj() * x[r];
            }
        }
        y
    }

    /// Max absolute row sum (‖M‖_∞).
    /// Largest singular value estimate by power iteration on MᴴM.
    pub fn norm_2(&self, iterations: usize) -> f64 {
        let mut x: Vec<C64> = (0..self.n).map(|i| C64::new(1.0 + (i % 7) as f64 * 0.1, 0.0)).collect();
        let mut sigma = 0.0;
        for _ in 0..iterations {
            let nx = l2(&x);
            x.iter_mut().for_each(|v| *v /= nx);
            let y = self.matvec_adjoint(&self.matvec(&x));
            sigma = l2(&y).sqrt();
            x = y;
        }
        sigma
    }

    fn lu(&self) -> Result<&Lu<usize, C64>> {
        let lu = self.lu.get_or_init(|| {
            let mut trip = Vec::with_capacity(self.vals.len());
            for r in 0..self.n {
                for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                    trip.push(Triplet::new(r, self.cols[k], self.vals[k]));
                }
            }
            let m = SparseColMat::<usize, C64>::try_new_from_triplets(self.n, self.n, &trip)
                .map_err(|e| format!("{e:?}"))?;
            m.sp_lu().map_err(|e| format!("{e:?}"))
        });
        lu.as_ref().map_err(|e| Error::Numerical(format!("sparse LU failed: {e}")))
    }

    /// Solve M X = B for the columns of `b` (each of length n).
    pub fn solve_many(&self, b: &[Vec<C64>], adjoint: bool) -> Result<Vec<Vec<C64>>> {
        let lu = self.lu()?;
        let mut rhs = Mat::<C64>::from_fn(self.n, b.len(), |i, j| b[j][i]);
        if adjoint {
            lu.solve_transpose_in_place_with_conj(Conj::Yes, rhs.as_mut());
        } else {
            lu.solve_in_place_with_conj(Conj::No, rhs.as_mut());
        }
        Ok((0..b.len()).map(|j| (0..self.n).map(|i| rhs[(i, j)]).collect()).collect())
    }

    /// Solve with one step of iterative refinement; returns the solution
    /// and its relative residual ‖Mx − b‖/‖b‖.
    pub fn solve_refined(&self, b: &[C64], adjoint: bool) -> Result<(Vec<C64>, f64)> {
        let bn = l2(b);
        if bn == 0.0 {
            return Ok((vec![C64::new(0.0, 0.0); self.n], 0.0));
        }
        let apply = |x: &[C64]| if adjoint { self.matvec_adjoint(x) } else { self.matvec(x) };
        let mut x = self.solve_many(&[b.to_vec()], adjoint)?.pop().unwrap();
        let r: Vec<C64> = b.iter().zip(apply(&x)).map(|(bi, ai)| bi - ai).collect();
        let mut rel = l2(&r) / bn;
        if rel > 1e-14 {
            let dx = self.solve_many(&[r], adjoint)?.pop().unwrap();
            let x2: Vec<C64> = x.iter().zip(&dx).map(|(a, d)| a + d).collect();
            let r2: Vec<C64> = b.iter().zip(apply(&x2)).map(|(bi, ai)| bi - ai).collect();
            let rel2 = l2(&r2) / bn;
            if rel2 < rel {
                x = x2;
                rel = rel2;
            }
        }
        Ok((x, rel))
    }

    /// Smallest singular value by inverse power iteration on (MᴴM)⁻¹.
    /// Returns `None` when the iteration does not settle within the cap.
    pub fn smallest_singular_value(&self, max_iter: usize, tol: f64) -> Result<Option<f64>> {
        let mut x: Vec<C64> = (0..self.n)
            .map(|i| C64::new(1.0 + ((i * 7919) % 13) as f64 * 0.05, ((i * 31) % 5) as f64 * 0.01))
            .collect();
        let mut prev = f64::INFINITY;
        for _ in 0..max_iter {
            let nx = l2(&x);
            x.iter_mut().for_each(|v| *v /= nx);
            let y = self.solve_many(&[x.clone()], true)?.pop().unwrap();
            let z = self.solve_many(&[y], false)?.pop().unwrap();
            let nz = l2(&z);
            if !nz.is_finite() {
                return Ok(Some(0.0));
            }
            let sigma = 1.0 / nz.sqrt();
            x = z;
            if (sigma - prev).abs() <= tol * sigma {
                return Ok(Some(sigma));
            }
            prev = sigma;
        }
        Ok(None)
    }
}

pub fn l2(x: &[C64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}
