//! Restarted GMRES for complex systems given as a closure.

use crate::error::{Error, Result};
use crate::C64;

const ZERO: C64 = C64::new(0.0, 0.0);

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[C64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

#[derive(Clone, Debug)]
pub struct GmresOutcome {
    pub x: Vec<C64>,
    /// Relative residual after each inner iteration.
    pub history: Vec<f64>,
}

/// Solve A x = b to relative residual `tol`, starting from zero.
pub fn gmres<F>(apply: F, b: &[C64], tol: f64, restart: usize, max_iter: usize, what: &str) -> Result<GmresOutcome>
where
    F: Fn(&[C64]) -> Vec<C64>,
{
    let n = b.len();
    let bn = norm(b);
    let mut x = vec![ZERO; n];
    let mut history = Vec::new();
    if bn == 0.0 {
        return Ok(GmresOutcome { x, history });
    }
    let mut total = 0;
    loop {
        let ax = apply(&x);
        let r: Vec<C64> = b.iter().zip(&ax).map(|(a, c)| a - c).collect();
        let beta = norm(&r);
        if beta <= tol * bn {
            history.push(beta / bn);
            return Ok(GmresOutcome { x, history });
        }
        if !beta.is_finite() {
            return Err(Error::Numerical(format!("{what}: residual is not finite")));
        }
        let mut v: Vec<Vec<C64>> = vec![r.iter().map(|c| c / beta).collect()];
        let mut hcols: Vec<Vec<C64>> = Vec::new();
        let mut cs: Vec<C64> = Vec::new();
        let mut sn: Vec<C64> = Vec::new();
        let mut g = vec![C64::new(beta, 0.0)];
        let mut done = false;
        for j in 0..restart {
            total += 1;
            let mut w = apply(&v[j]);
            let mut hcol = vec![ZERO; j + 2];
            // modified Gram–Schmidt, applied twice for stability
            for _ in 0..2 {
                for (i, vi) in v.iter().enumerate() {
                    let c = dot(vi, &w);
                    hcol[i] += c;
                    w.iter_mut().zip(vi).for_each(|(a, b)| *a -= c * b);
                }
            }
            let wn = norm(&w);
            hcol[j + 1] = C64::new(wn, 0.0);
            for i in 0..j {
                let t = cs[i] * hcol[i] + sn[i] * hcol[i + 1];
                hcol[i + 1] = -sn[i].conj() * hcol[i] + cs[i].conj() * hcol[i + 1];
                hcol[i] = t;
            }
            let (a, bb) = (hcol[j], hcol[j + 1]);
            let d = (a.norm_sqr() + bb.norm_sqr()).sqrt();
            let (c, s) = if d == 0.0 { (C64::new(1.0, 0.0), ZERO) } else { (a / d, bb / d) };
            // rotation [c̄ s̄; −s c] maps (a, b) to (d, 0)
            hcol[j] = C64::new(d, 0.0);
            hcol[j + 1] = ZERO;
            cs.push(c.conj());
            sn.push(s.conj());
            let gj = g[j];
            g[j] = c.conj() * gj;
            g.push(-s * gj);
            hcols.push(hcol);
            let rel = g[j + 1].norm() / bn;
            history.push(rel);
            if wn > 0.0 {
                v.push(w.iter().map(|c| c / wn).collect());
            }
            if rel <= tol || wn == 0.0 || total >= max_iter {
                done = rel <= tol || wn == 0.0;
                break;
            }
        }
        // back substitution on the triangular Hessenberg factor
        let k = hcols.len();
        let mut y = vec![ZERO; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for (l, yl) in y.iter().enumerate().skip(i + 1) {
                s -= hcols[l][i] * yl;
            }
            y[i] = s / hcols[i][i];
        }
        for (i, yi) in y.iter().enumerate() {
            x.iter_mut().zip(&v[i]).for_each(|(a, b)| *a += yi * b);
        }
        if done {
            let ax = apply(&x);
            let rel = norm(&b.iter().zip(&ax).map(|(a, c)| a - c).collect::<Vec<_>>()) / bn;
            if rel <= 10.0 * tol {
                history.push(rel);
                return Ok(GmresOutcome { x, history });
            }
        }
        if total >= max_iter {
            return Err(Error::NotConverged { iterations: total, what: what.to_string(), history });
        }
    }
}
