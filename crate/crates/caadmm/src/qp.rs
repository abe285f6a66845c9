//! Sparse QP instances and the scale-normalizing preprocessing.
//!
//! A problem has the form
//!
//! ```text
//! minimize    ½ xᵀ P x + qᵀ x
//! subject to  l ≤ A x ≤ u
//! ```
//!
//! with `P` symmetric positive semidefinite. [`preprocess`] divides the
//! objective by a single scalar and each constraint row by its largest
//! coefficient, so that problems differing only by such scalings map to the
//! same scaled data.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("P is not symmetric at ({row}, {col})")]
    AsymmetricP { row: usize, col: usize },
    #[error("bounds crossed at row {index}: l > u")]
    BoundsCrossed { index: usize },
    #[error("non-finite entry in {0}")]
    NonFiniteEntry(String),
    #[error("entry ({row}, {col}) out of range for {rows}x{cols} matrix")]
    IndexOutOfRange {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
    #[error("duplicate entry at ({row}, {col})")]
    DuplicateEntry { row: usize, col: usize },
    #[error("problem is already scaled")]
    AlreadyScaled,
}

/// Coordinate-format sparse matrix, canonicalized to row-major sorted order
/// with explicit zeros removed.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, f64)>,
    row_ptr: Vec<usize>,
}

impl SparseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            entries: Vec::new(),
            row_ptr: vec![0; rows + 1],
        }
    }

    pub fn from_triplets(
        rows: usize,
        cols: usize,
        mut entries: Vec<(usize, usize, f64)>,
    ) -> Result<Self, QpError> {
        for &(r, c, _) in &entries {
            if r >= rows || c >= cols {
                return Err(QpError::IndexOutOfRange {
                    row: r,
                    col: c,
                    rows,
                    cols,
                });
            }
        }
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
                return Err(QpError::DuplicateEntry {
                    row: w[0].0,
                    col: w[0].1,
                });
            }
        }
        entries.retain(|e| e.2 != 0.0);
        let mut row_ptr = vec![0; rows + 1];
        for &(r, _, _) in &entries {
            row_ptr[r + 1] += 1;
        }
        for i in 0..rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Self {
            rows,
            cols,
            entries,
            row_ptr,
        })
    }

    pub fn from_dense(dense: &[Vec<f64>]) -> Result<Self, QpError> {
        let rows = dense.len();
        let cols = dense.first().map_or(0, |r| r.len());
        let mut entries = Vec::new();
        for (i, row) in dense.iter().enumerate() {
            if row.len() != cols {
                return Err(QpError::DimensionMismatch(format!(
                    "ragged dense row {i}: {} vs {cols}",
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    entries.push((i, j, v));
                }
            }
        }
        Self::from_triplets(rows, cols, entries)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    /// Entries of row `r` as `(col, value)` pairs in column order.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.entries[self.row_ptr[r]..self.row_ptr[r + 1]]
            .iter()
            .map(|&(_, c, v)| (c, v))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let row = &self.entries[self.row_ptr[r]..self.row_ptr[r + 1]];
        match row.binary_search_by(|e| e.1.cmp(&c)) {
            Ok(k) => row[k].2,
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.cols]; self.rows];
        for &(r, c, v) in &self.entries {
            d[r][c] = v;
        }
        d
    }

    pub fn transpose(&self) -> SparseMatrix {
        let t = self.entries.iter().map(|&(r, c, v)| (c, r, v)).collect();
        SparseMatrix::from_triplets(self.cols, self.rows, t).expect("transpose of a valid matrix")
    }

    /// `y = self · x`
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.rows];
        for &(r, c, v) in &self.entries {
            y[r] += v * x[c];
        }
        y
    }

    /// `y = selfᵀ · x`
    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.cols];
        for &(r, c, v) in &self.entries {
            y[c] += v * x[r];
        }
        y
    }

    pub fn scale(&self, s: f64) -> SparseMatrix {
        let mut out = self.clone();
        for e in &mut out.entries {
            e.2 *= s;
        }
        out
    }

    fn map_rows(&self, row_factor: &[f64]) -> SparseMatrix {
        let mut out = self.clone();
        for e in &mut out.entries {
            e.2 /= row_factor[e.0];
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub n: usize,
    pub m: usize,
    pub p: SparseMatrix,
    pub q: Vec<f64>,
    pub a: SparseMatrix,
    pub l: Vec<f64>,
    pub u: Vec<f64>,
    pub scaled: bool,
    pub obj_scaler: f64,
    pub row_scalers: Vec<f64>,
}

impl QpProblem {
    /// Builds and validates an unscaled problem.
    pub fn new(
        p: SparseMatrix,
        q: Vec<f64>,
        a: SparseMatrix,
        l: Vec<f64>,
        u: Vec<f64>,
    ) -> Result<Self, QpError> {
        let m = l.len();
        let problem = Self {
            n: q.len(),
            m,
            p,
            q,
            a,
            l,
            u,
            scaled: false,
            obj_scaler: 1.0,
            row_scalers: vec![1.0; m],
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn validate(&self) -> Result<(), QpError> {
        validate(self)
    }

    pub fn is_equality(&self, row: usize) -> bool {
        self.l[row] == self.u[row]
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let px = self.p.mul_vec(x);
        0.5 * dot(x, &px) + dot(&self.q, x)
    }

    /// Converts a dual vector of the scaled problem back to original units.
    pub fn unscale_y(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(&self.row_scalers)
            .map(|(yi, d)| yi * self.obj_scaler / d)
            .collect()
    }

    /// Converts an original-units dual vector into scaled units.
    pub fn scale_y(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(&self.row_scalers)
            .map(|(yi, d)| yi * d / self.obj_scaler)
            .collect()
    }

    pub fn unscale_z(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.row_scalers).map(|(zi, d)| zi * d).collect()
    }

    pub fn scale_z(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.row_scalers).map(|(zi, d)| zi / d).collect()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn validate(problem: &QpProblem) -> Result<(), QpError> {
    let QpProblem {
        n,
        m,
        p,
        q,
        a,
        l,
        u,
        ..
    } = problem;
    let (n, m) = (*n, *m);
    if n == 0 || m == 0 {
        return Err(QpError::DimensionMismatch(format!(
            "n and m must be positive (n={n}, m={m})"
        )));
    }
    if p.rows() != n || p.cols() != n {
        return Err(QpError::DimensionMismatch(format!(
            "P is {}x{}, expected {n}x{n}",
            p.rows(),
            p.cols()
        )));
    }
    if q.len() != n {
        return Err(QpError::DimensionMismatch(format!(
            "q has length {}, expected {n}",
            q.len()
        )));
    }
    if a.rows() != m || a.cols() != n {
        return Err(QpError::DimensionMismatch(format!(
            "A is {}x{}, expected {m}x{n}",
            a.rows(),
            a.cols()
        )));
    }
    if l.len() != m || u.len() != m {
        return Err(QpError::DimensionMismatch(format!(
            "bounds have lengths {}/{}, expected {m}",
            l.len(),
            u.len()
        )));
    }
    if problem.row_scalers.len() != m {
        return Err(QpError::DimensionMismatch("row scaler length".into()));
    }
    if p.entries().iter().any(|e| !e.2.is_finite()) {
        return Err(QpError::NonFiniteEntry("P".into()));
    }
    if a.entries().iter().any(|e| !e.2.is_finite()) {
        return Err(QpError::NonFiniteEntry("A".into()));
    }
    if q.iter().any(|v| !v.is_finite()) {
        return Err(QpError::NonFiniteEntry("q".into()));
    }
    if l.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(QpError::NonFiniteEntry("l".into()));
    }
    if u.iter().any(|v| v.is_nan() || *v == f64::NEG_INFINITY) {
        return Err(QpError::NonFiniteEntry("u".into()));
    }
    for &(r, c, v) in p.entries() {
        if p.get(c, r) != v {
            return Err(QpError::AsymmetricP { row: r, col: c });
        }
    }
    for i in 0..m {
        if l[i] > u[i] {
            return Err(QpError::BoundsCrossed { index: i });
        }
    }
    Ok(())
}

/// Divides `P` and `q` by `p* = max(max|P_nn|, 2·max_{i≠j}|P_ij|)`.
/// A zero `P` passes through with `p* = 1`.
pub fn scale_objective(p: &SparseMatrix, q: &[f64]) -> (SparseMatrix, Vec<f64>, f64) {
    let mut p_star: f64 = 0.0;
    for &(r, c, v) in p.entries() {
        let w = if r == c { v.abs() } else { 2.0 * v.abs() };
        p_star = p_star.max(w);
    }
    if p_star == 0.0 {
        return (p.clone(), q.to_vec(), 1.0);
    }
    let mut p_scaled = p.clone();
    for e in &mut p_scaled.entries {
        e.2 /= p_star;
    }
    let q_scaled = q.iter().map(|v| v / p_star).collect();
    (p_scaled, q_scaled, p_star)
}

/// Divides each row of `A` and its bounds by the row's largest absolute
/// coefficient. Empty rows keep a scaler of 1.
pub fn scale_constraints(
    a: &SparseMatrix,
    l: &[f64],
    u: &[f64],
) -> (SparseMatrix, Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut scalers = vec![0.0f64; a.rows()];
    for &(r, _, v) in a.entries() {
        scalers[r] = scalers[r].max(v.abs());
    }
    for s in &mut scalers {
        if *s == 0.0 {
            *s = 1.0;
        }
    }
    let a_scaled = a.map_rows(&scalers);
    // ±∞ divided by a positive scaler stays ±∞
    let l_scaled = l.iter().zip(&scalers).map(|(v, s)| v / s).collect();
    let u_scaled = u.iter().zip(&scalers).map(|(v, s)| v / s).collect();
    (a_scaled, l_scaled, u_scaled, scalers)
}

pub fn preprocess(problem: &QpProblem) -> Result<QpProblem, QpError> {
    if problem.scaled {
        return Err(QpError::AlreadyScaled);
    }
    problem.validate()?;
    let (p, q, obj_scaler) = scale_objective(&problem.p, &problem.q);
    let (a, l, u, row_scalers) = scale_constraints(&problem.a, &problem.l, &problem.u);
    Ok(QpProblem {
        n: problem.n,
        m: problem.m,
        p,
        q,
        a,
        l,
        u,
        scaled: true,
        obj_scaler,
        row_scalers,
    })
}

/// Projection onto the box `[l, u]`.
pub fn project_box(v: &[f64], l: &[f64], u: &[f64]) -> Vec<f64> {
    v.iter()
        .zip(l.iter().zip(u))
        .map(|(x, (lo, hi))| x.max(*lo).min(*hi))
        .collect()
}
