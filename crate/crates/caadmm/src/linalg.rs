//! Dense LDLᵀ factorization with symmetric diagonal pivoting.
//!
//! Intended for symmetric quasi-definite and positive definite matrices, for
//! which every symmetric permutation admits an LDLᵀ factorization with 1×1
//! pivots. Pivots are chosen by largest diagonal magnitude.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("singular system: pivot {value:e} at step {step}")]
    Singular { step: usize, value: f64 },
    #[error("matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
}

pub const PIVOT_TOL: f64 = 1e-12;

/// `P A Pᵀ = L D Lᵀ` with `L` unit lower triangular and `D` diagonal.
#[derive(Debug, Clone)]
pub struct Ldl {
    n: usize,
    // row-major, strictly lower part holds L
    l: Vec<f64>,
    d: Vec<f64>,
    // perm[k] = original index placed at position k
    perm: Vec<usize>,
}

impl Ldl {
    /// Factors the dense row-major symmetric matrix `a` (n×n). Only the lower
    /// triangle is read.
    pub fn factor(n: usize, mut a: Vec<f64>) -> Result<Self, LinalgError> {
        if a.len() != n * n {
            return Err(LinalgError::NotSquare {
                rows: n,
                cols: a.len() / n.max(1),
            });
        }
        let mut perm: Vec<usize> = (0..n).collect();
        let mut d = vec![0.0; n];
        for k in 0..n {
            let mut piv = k;
            let mut best = a[k * n + k].abs();
            for i in k + 1..n {
                let v = a[i * n + i].abs();
                if v > best {
                    best = v;
                    piv = i;
                }
            }
            if piv != k {
                swap_sym(&mut a, n, k, piv);
                perm.swap(k, piv);
            }
            let dk = a[k * n + k];
            if dk.abs() <= PIVOT_TOL || !dk.is_finite() {
                return Err(LinalgError::Singular { step: k, value: dk });
            }
            d[k] = dk;
            for i in k + 1..n {
                a[i * n + k] /= dk;
            }
            for i in k + 1..n {
                let lik = a[i * n + k] * dk;
                if lik == 0.0 {
                    continue;
                }
                for j in k + 1..=i {
                    a[i * n + j] -= lik * a[j * n + k];
                }
            }
        }
        Ok(Self { n, l: a, d, perm })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.d
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let row = &self.l[i * n..i * n + i];
            let s: f64 = row.iter().zip(&y[..i]).map(|(a, b)| a * b).sum();
            y[i] -= s;
        }
        for i in 0..n {
            y[i] /= self.d[i];
        }
        for i in (0..n).rev() {
            let mut s = 0.0;
            for j in i + 1..n {
                s += self.l[j * n + i] * y[j];
            }
            y[i] -= s;
        }
        let mut x = vec![0.0; n];
        for (k, &p) in self.perm.iter().enumerate() {
            x[p] = y[k];
        }
        x
    }
}

// Symmetric swap of indices k < p acting on lower-triangle storage.
fn swap_sym(a: &mut [f64], n: usize, k: usize, p: usize) {
    for c in 0..k {
        a.swap(k * n + c, p * n + c);
    }
    a.swap(k * n + k, p * n + p);
    for i in k + 1..p {
        a.swap(i * n + k, p * n + i);
    }
    for i in p + 1..n {
        a.swap(i * n + k, i * n + p);
    }
}
