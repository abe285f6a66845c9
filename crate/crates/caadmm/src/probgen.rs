//! Seeded generators for eight QP families.
//!
//! Every family takes a size `n` and a secondary size `m` whose meaning is
//! family specific (constraint count, factor count, data points or inputs).
//! `m` defaults to the family's usual relation with `n`. Besides the problem,
//! each generator returns a witness point that satisfies all constraints.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qp::{QpError, QpProblem, SparseMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenError {
    #[error("invalid size: {0}")]
    InvalidSize(String),
    #[error("unknown family '{0}'")]
    UnknownFamily(String),
    #[error(transparent)]
    Problem(#[from] QpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    RandomQp,
    EqQp,
    Portfolio,
    Svm,
    Huber,
    Control,
    Lasso,
    EntireRandomQp,
}

impl Family {
    pub const ALL: [Family; 8] = [
        Family::RandomQp,
        Family::EqQp,
        Family::Portfolio,
        Family::Svm,
        Family::Huber,
        Family::Control,
        Family::Lasso,
        Family::EntireRandomQp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::RandomQp => "random-qp",
            Family::EqQp => "eq-qp",
            Family::Portfolio => "portfolio",
            Family::Svm => "svm",
            Family::Huber => "huber",
            Family::Control => "control",
            Family::Lasso => "lasso",
            Family::EntireRandomQp => "entire-random-qp",
        }
    }

    fn index(self) -> u64 {
        Family::ALL.iter().position(|&f| f == self).unwrap() as u64
    }

    /// Training-size range of `n`.
    pub fn default_n_range(self) -> (usize, usize) {
        match self {
            Family::RandomQp => (10, 15),
            Family::EqQp => (30, 40),
            Family::Portfolio => (50, 60),
            Family::Svm | Family::Huber | Family::Lasso => (5, 6),
            Family::Control => (2, 6),
            Family::EntireRandomQp => (20, 30),
        }
    }

    /// Secondary size used when none is given.
    pub fn default_m(self, n: usize) -> usize {
        match self {
            Family::RandomQp => 3 * n,
            Family::EqQp => (n / 2).max(1),
            Family::Portfolio => (n / 10).max(1),
            Family::Svm | Family::Huber | Family::Lasso => 10 * n,
            Family::Control => (n / 2).max(1),
            Family::EntireRandomQp => (7 * n / 3).max(1),
        }
    }

    /// Number of variables and constraint rows of the generated QP.
    pub fn qp_dims(self, n: usize, m: usize) -> (usize, usize) {
        match self {
            Family::RandomQp | Family::EqQp => (n, m),
            Family::Portfolio => (n + m, m + 1 + n),
            Family::Svm => (n + m, 2 * m),
            Family::Huber => (n + 3 * m, 3 * m),
            Family::Control => (CONTROL_HORIZON * (n + m) + n, (CONTROL_HORIZON + 1) * n + CONTROL_HORIZON * m),
            Family::Lasso => (2 * n + m, m + 2 * n),
            Family::EntireRandomQp => (n, m),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = GenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.to_ascii_lowercase().replace('_', "-");
        Family::ALL
            .into_iter()
            .find(|f| f.name() == key || f.name().replace('-', "") == key)
            .ok_or_else(|| GenError::UnknownFamily(s.to_string()))
    }
}

pub const CONTROL_HORIZON: usize = 5;
pub const SVM_LAMBDA: f64 = 0.5;
pub const HUBER_M: f64 = 1.0;
pub const PORTFOLIO_GAMMA: f64 = 1.0;
const P_SHIFT: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub family: Family,
    pub n: usize,
    pub m: usize,
    pub seed: u64,
    pub problem: QpProblem,
    /// A point satisfying `l ≤ A w ≤ u`.
    pub witness: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub family: Family,
    pub n_range: (usize, usize),
    pub seed: u64,
    /// Overrides the family's default secondary size.
    pub m: Option<usize>,
}

impl GeneratorSpec {
    pub fn new(family: Family, n_range: (usize, usize), seed: u64) -> Self {
        Self {
            family,
            n_range,
            seed,
            m: None,
        }
    }

    pub fn with_default_range(family: Family, seed: u64) -> Self {
        Self::new(family, family.default_n_range(), seed)
    }

    /// Size of instance `i`, uniform over `n_range`.
    pub fn size(&self, i: u64) -> Result<usize, GenError> {
        let (lo, hi) = self.n_range;
        if lo == 0 || lo > hi {
            return Err(GenError::InvalidSize(format!("n range {lo}..={hi}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(i));
        rng.set_stream(1 << 32);
        Ok(rng.gen_range(lo..=hi))
    }

    /// Instance `i` of the stream, generated with seed `seed + i`.
    pub fn sample(&self, i: u64) -> Result<Instance, GenError> {
        let n = self.size(i)?;
        generate(self.family, n, self.m, self.seed.wrapping_add(i))
    }
}

pub fn generate(family: Family, n: usize, m: Option<usize>, seed: u64) -> Result<Instance, GenError> {
    if n == 0 {
        return Err(GenError::InvalidSize("n must be positive".into()));
    }
    let m = m.unwrap_or_else(|| family.default_m(n));
    if m == 0 {
        return Err(GenError::InvalidSize("m must be positive".into()));
    }
    if family == Family::Svm && m < 2 {
        return Err(GenError::InvalidSize("svm needs at least two data points".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(family.index());
    let (problem, witness) = match family {
        Family::RandomQp => random_qp(&mut rng, n, m)?,
        Family::EqQp => eq_qp(&mut rng, n, m)?,
        Family::Portfolio => portfolio(&mut rng, n, m)?,
        Family::Svm => svm(&mut rng, n, m)?,
        Family::Huber => huber(&mut rng, n, m)?,
        Family::Control => control(&mut rng, n, m)?,
        Family::Lasso => lasso(&mut rng, n, m)?,
        Family::EntireRandomQp => entire_random_qp(&mut rng, n, m)?,
    };
    Ok(Instance {
        family,
        n,
        m,
        seed,
        problem,
        witness,
    })
}

pub fn gen_random_qp(n: usize, seed: u64) -> Result<QpProblem, GenError> {
    generate(Family::RandomQp, n, None, seed).map(|i| i.problem)
}

pub fn gen_eq_qp(n: usize, seed: u64) -> Result<QpProblem, GenError> {
    generate(Family::EqQp, n, None, seed).map(|i| i.problem)
}

pub fn gen_portfolio(n: usize, seed: u64) -> Result<QpProblem, GenError> {
    generate(Family::Portfolio, n, None, seed).map(|i| i.problem)
}

pub fn gen_svm(n: usize, seed: u64) -> Result<QpProblem, GenError> {
    generate(Family::Svm, n, None, seed).map(|i| i.problem)
}

pub fn gen_huber(n: usize, seed: u64) -> Result<QpProblem, GenError> {
    generate(Family::Huber, n, None, seed).map(|i| i.problem)
}

pub fn gen_control(n: usize, seed: u64) -> Result<QpProblem, GenError> {
    generate(Family::Control, n, None, seed).map(|i| i.problem)
}

pub fn gen_lasso(n: usize, seed: u64) -> Result<QpProblem, GenError> {
    generate(Family::Lasso, n, None, seed).map(|i| i.problem)
}

pub fn gen_entire_random_qp(n: usize, seed: u64) -> Result<QpProblem, GenError> {
    generate(Family::EntireRandomQp, n, None, seed).map(|i| i.problem)
}

type Triplets = Vec<(usize, usize, f64)>;

fn normal<R: Rng>(rng: &mut R, mean: f64, var: f64) -> f64 {
    Normal::new(mean, var.sqrt()).unwrap().sample(rng)
}

fn std_normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn normals<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| std_normal(rng)).collect()
}

/// Bernoulli mask then values. With `cover`, empty rows and columns get one
/// entry each so no constraint or variable drops out of the data.
fn masked<R: Rng>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    density: f64,
    cover: bool,
    mut value: impl FnMut(&mut R, usize) -> f64,
) -> Vec<Vec<f64>> {
    let mut d = vec![vec![0.0; cols]; rows];
    for (i, row) in d.iter_mut().enumerate() {
        for v in row.iter_mut() {
            if rng.gen_bool(density) {
                *v = value(rng, i);
            }
        }
    }
    if cover {
        for i in 0..rows {
            if d[i].iter().all(|&v| v == 0.0) {
                let j = rng.gen_range(0..cols);
                d[i][j] = value(rng, i);
            }
        }
        for j in 0..cols {
            if d.iter().all(|r| r[j] == 0.0) {
                let i = rng.gen_range(0..rows);
                d[i][j] = value(rng, i);
            }
        }
    }
    d
}

fn mat_vec(d: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    d.iter().map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

fn push_dense(t: &mut Triplets, d: &[Vec<f64>], row0: usize, col0: usize) {
    for (i, r) in d.iter().enumerate() {
        for (j, &v) in r.iter().enumerate() {
            if v != 0.0 {
                t.push((row0 + i, col0 + j, v));
            }
        }
    }
}

/// `M Mᵀ + 1e-2·I` with `M` of the given density.
fn random_psd<R: Rng>(rng: &mut R, n: usize, density: f64) -> Triplets {
    let m = masked(rng, n, n, density, false, |r, _| std_normal(r));
    let mut t = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let mut v: f64 = (0..n).map(|k| m[i][k] * m[j][k]).sum();
            if i == j {
                v += P_SHIFT;
            }
            if v != 0.0 {
                t.push((i, j, v));
            }
        }
    }
    t
}

fn build(
    n: usize,
    m: usize,
    p: Triplets,
    q: Vec<f64>,
    a: Triplets,
    l: Vec<f64>,
    u: Vec<f64>,
) -> Result<QpProblem, GenError> {
    Ok(QpProblem::new(
        SparseMatrix::from_triplets(n, n, p)?,
        q,
        SparseMatrix::from_triplets(m, n, a)?,
        l,
        u,
    )?)
}

fn random_qp<R: Rng>(rng: &mut R, n: usize, m: usize) -> Result<(QpProblem, Vec<f64>), GenError> {
    let p = random_psd(rng, n, 0.15);
    let q = normals(rng, n);
    let a = masked(rng, m, n, 0.45, true, |r, _| std_normal(r));
    let x = normals(rng, n);
    let ax = mat_vec(&a, &x);
    let u = ax.iter().map(|v| v + std_normal(rng).abs()).collect();
    let mut at = Vec::new();
    push_dense(&mut at, &a, 0, 0);
    Ok((build(n, m, p, q, at, vec![f64::NEG_INFINITY; m], u)?, x))
}

fn eq_qp<R: Rng>(rng: &mut R, n: usize, m: usize) -> Result<(QpProblem, Vec<f64>), GenError> {
    let p = random_psd(rng, n, 0.30);
    let q = normals(rng, n);
    let a = masked(rng, m, n, 0.75, true, |r, _| std_normal(r));
    let x = normals(rng, n);
    let b = mat_vec(&a, &x);
    let mut at = Vec::new();
    push_dense(&mut at, &a, 0, 0);
    Ok((build(n, m, p, q, at, b.clone(), b)?, x))
}

/// Variables `(x, y)` with `y = Fᵀx`, `1ᵀx = 1`, `x ≥ 0`.
fn portfolio<R: Rng>(rng: &mut R, n: usize, k: usize) -> Result<(QpProblem, Vec<f64>), GenError> {
    let f = masked(rng, n, k, 0.90, true, |r, _| std_normal(r));
    let cauchy: Cauchy<f64> = Cauchy::new(0.0, 1.0).unwrap();
    let d: Vec<f64> = (0..n).map(|_| cauchy.sample(rng).abs() * (k as f64).sqrt()).collect();
    let mu = normals(rng, n);
    let nv = n + k;
    let mut p: Triplets = (0..n).map(|i| (i, i, d[i])).collect();
    p.extend((0..k).map(|j| (n + j, n + j, 1.0)));
    let mut q = vec![0.0; nv];
    for i in 0..n {
        q[i] = -mu[i] / (2.0 * PORTFOLIO_GAMMA);
    }
    let mut a = Vec::new();
    // Fᵀx − y = 0
    for (i, row) in f.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if v != 0.0 {
                a.push((j, i, v));
            }
        }
    }
    for j in 0..k {
        a.push((j, n + j, -1.0));
    }
    for i in 0..n {
        a.push((k, i, 1.0));
        a.push((k + 1 + i, i, 1.0));
    }
    let rows = k + 1 + n;
    let mut l = vec![0.0; rows];
    let mut u = vec![0.0; rows];
    l[k] = 1.0;
    u[k] = 1.0;
    for i in 0..n {
        u[k + 1 + i] = f64::INFINITY;
    }
    let x0 = vec![1.0 / n as f64; n];
    let mut w = x0.clone();
    w.extend((0..k).map(|j| (0..n).map(|i| f[i][j] * x0[i]).sum::<f64>()));
    Ok((build(nv, rows, p, q, a, l, u)?, w))
}

/// Variables `(x, t)`; hinge rows `diag(b) A x − t ≤ −1` and `t ≥ 0`.
fn svm<R: Rng>(rng: &mut R, n: usize, m: usize) -> Result<(QpProblem, Vec<f64>), GenError> {
    let half = m / 2;
    let nf = n as f64;
    let a = masked(rng, m, n, 1.0, false, |r, i| {
        let mean = if i < half { 1.0 / nf } else { -1.0 / nf };
        normal(r, mean, 1.0 / nf)
    });
    let b: Vec<f64> = (0..m).map(|i| if i < half { 1.0 } else { -1.0 }).collect();
    let nv = n + m;
    let p: Triplets = (0..n).map(|i| (i, i, 2.0)).collect();
    let mut q = vec![0.0; nv];
    for v in &mut q[n..] {
        *v = SVM_LAMBDA;
    }
    let mut at = Vec::new();
    for i in 0..m {
        for j in 0..n {
            if a[i][j] != 0.0 {
                at.push((i, j, b[i] * a[i][j]));
            }
        }
        at.push((i, n + i, -1.0));
        at.push((m + i, n + i, 1.0));
    }
    let mut l = vec![f64::NEG_INFINITY; m];
    l.extend(vec![0.0; m]);
    let mut u = vec![-1.0; m];
    u.extend(vec![f64::INFINITY; m]);
    let mut w = vec![0.0; n];
    w.extend(vec![1.0; m]);
    Ok((build(nv, 2 * m, p, q, at, l, u)?, w))
}

/// Variables `(x, u, r, s)`; `Ax − u − r + s = b`, `r, s ≥ 0`.
fn huber<R: Rng>(rng: &mut R, n: usize, m: usize) -> Result<(QpProblem, Vec<f64>), GenError> {
    let a = masked(rng, m, n, 0.50, true, |r, _| std_normal(r));
    let v: Vec<f64> = (0..n)
        .map(|_| {
            if rng.gen_bool(0.95) {
                normal(rng, 0.0, 0.25)
            } else {
                rng.gen_range(0.0..10.0)
            }
        })
        .collect();
    // noise added after A so the fit has nonzero residuals
    let b: Vec<f64> = mat_vec(&a, &v)
        .into_iter()
        .map(|x| x + normal(rng, 0.0, 1.0 / n as f64))
        .collect();
    let nv = n + 3 * m;
    let (ou, or, os) = (n, n + m, n + 2 * m);
    let p: Triplets = (0..m).map(|i| (ou + i, ou + i, 2.0)).collect();
    let mut q = vec![0.0; nv];
    for v in &mut q[or..] {
        *v = 2.0 * HUBER_M;
    }
    let mut at = Vec::new();
    push_dense(&mut at, &a, 0, 0);
    for i in 0..m {
        at.push((i, ou + i, -1.0));
        at.push((i, or + i, -1.0));
        at.push((i, os + i, 1.0));
        at.push((m + i, or + i, 1.0));
        at.push((2 * m + i, os + i, 1.0));
    }
    let mut l = b.clone();
    l.extend(vec![0.0; 2 * m]);
    let mut u = b.clone();
    u.extend(vec![f64::INFINITY; 2 * m]);
    let mut w = vec![0.0; n + m];
    w.extend(b.iter().map(|bi| (-bi).max(0.0)));
    w.extend(b.iter().map(|bi| bi.max(0.0)));
    Ok((build(nv, 3 * m, p, q, at, l, u)?, w))
}

/// Variables `(x_0..x_T, u_0..u_{T−1})`; dynamics and initial state as
/// equalities, inputs boxed in `[−1, 1]`. The terminal cost reuses `Q`.
fn control<R: Rng>(rng: &mut R, nx: usize, nu: usize) -> Result<(QpProblem, Vec<f64>), GenError> {
    let t_h = CONTROL_HORIZON;
    let dyn_a: Vec<Vec<f64>> = (0..nx)
        .map(|i| {
            (0..nx)
                .map(|j| normal(rng, 0.0, 0.01) + if i == j { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();
    let dyn_b = masked(rng, nx, nu, 1.0, false, |r, _| std_normal(r));
    let qd: Vec<f64> = (0..nx)
        .map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.0..10.0) })
        .collect();
    let x_init: Vec<f64> = (0..nx).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let nv = (t_h + 1) * nx + t_h * nu;
    let xo = |t: usize| t * nx;
    let uo = |t: usize| (t_h + 1) * nx + t * nu;
    let mut p = Vec::new();
    for t in 0..=t_h {
        for i in 0..nx {
            if qd[i] != 0.0 {
                p.push((xo(t) + i, xo(t) + i, 2.0 * qd[i]));
            }
        }
    }
    for t in 0..t_h {
        for j in 0..nu {
            p.push((uo(t) + j, uo(t) + j, 2.0 * 0.1));
        }
    }
    let mut a = Vec::new();
    let mut l = Vec::new();
    for i in 0..nx {
        a.push((i, i, 1.0));
        l.push(x_init[i]);
    }
    for t in 0..t_h {
        let r0 = (t + 1) * nx;
        for i in 0..nx {
            a.push((r0 + i, xo(t + 1) + i, -1.0));
            for j in 0..nx {
                if dyn_a[i][j] != 0.0 {
                    a.push((r0 + i, xo(t) + j, dyn_a[i][j]));
                }
            }
            for j in 0..nu {
                if dyn_b[i][j] != 0.0 {
                    a.push((r0 + i, uo(t) + j, dyn_b[i][j]));
                }
            }
            l.push(0.0);
        }
    }
    let mut u = l.clone();
    let r0 = (t_h + 1) * nx;
    for t in 0..t_h {
        for j in 0..nu {
            a.push((r0 + t * nu + j, uo(t) + j, 1.0));
            l.push(-1.0);
            u.push(1.0);
        }
    }
    let rows = l.len();
    let mut w = vec![0.0; nv];
    let mut state = x_init;
    for t in 0..=t_h {
        w[xo(t)..xo(t) + nx].copy_from_slice(&state);
        state = mat_vec(&dyn_a, &state);
    }
    Ok((build(nv, rows, p, vec![0.0; nv], a, l, u)?, w))
}

/// Variables `(x, y, t)`; `Ax − y = b`, `x − t ≤ 0`, `x + t ≥ 0`.
fn lasso<R: Rng>(rng: &mut R, n: usize, m: usize) -> Result<(QpProblem, Vec<f64>), GenError> {
    let a = masked(rng, m, n, 0.90, true, |r, _| std_normal(r));
    let nf = n as f64;
    let v: Vec<f64> = (0..n)
        .map(|_| if rng.gen_bool(0.5) { 0.0 } else { normal(rng, 0.0, 1.0 / nf) })
        .collect();
    let av = mat_vec(&a, &v);
    let b: Vec<f64> = av.iter().map(|x| x + std_normal(rng)).collect();
    let gamma = lasso_gamma(&a, &b);
    let nv = 2 * n + m;
    let (oy, ot) = (n, n + m);
    let p: Triplets = (0..m).map(|i| (oy + i, oy + i, 1.0)).collect();
    let mut q = vec![0.0; nv];
    for v in &mut q[ot..] {
        *v = gamma;
    }
    let mut at = Vec::new();
    push_dense(&mut at, &a, 0, 0);
    for i in 0..m {
        at.push((i, oy + i, -1.0));
    }
    for j in 0..n {
        at.push((m + j, j, 1.0));
        at.push((m + j, ot + j, -1.0));
        at.push((m + n + j, j, 1.0));
        at.push((m + n + j, ot + j, 1.0));
    }
    let mut l = b.clone();
    l.extend(vec![f64::NEG_INFINITY; n]);
    l.extend(vec![0.0; n]);
    let mut u = b.clone();
    u.extend(vec![0.0; n]);
    u.extend(vec![f64::INFINITY; n]);
    let mut w = vec![0.0; n];
    w.extend(b.iter().map(|x| -x));
    w.extend(vec![0.0; n]);
    Ok((build(nv, m + 2 * n, p, q, at, l, u)?, w))
}

/// `‖Aᵀb‖∞ / 5`.
pub fn lasso_gamma(a: &[Vec<f64>], b: &[f64]) -> f64 {
    let n = a.first().map_or(0, |r| r.len());
    (0..n)
        .map(|j| a.iter().zip(b).map(|(r, bi)| r[j] * bi).sum::<f64>().abs())
        .fold(0.0, f64::max)
        / 5.0
}

/// Inequality block of `⌊m/7⌋` rows plus the remainder, then `⌊6m/7⌋`
/// equality rows.
fn entire_random_qp<R: Rng>(rng: &mut R, n: usize, m: usize) -> Result<(QpProblem, Vec<f64>), GenError> {
    let (m1, m2) = entire_split(m);
    let p = random_psd(rng, n, 0.15);
    let q = normals(rng, n);
    let x = normals(rng, n);
    let a = masked(rng, m1, n, 0.60, true, |r, _| std_normal(r));
    let b_mat = masked(rng, m2, n, 0.60, m2 > 0, |r, _| std_normal(r));
    let ax = mat_vec(&a, &x);
    let bx = mat_vec(&b_mat, &x);
    let mut at = Vec::new();
    push_dense(&mut at, &a, 0, 0);
    push_dense(&mut at, &b_mat, m1, 0);
    let mut l = vec![f64::NEG_INFINITY; m1];
    l.extend(bx.iter().copied());
    let mut u: Vec<f64> = ax.iter().map(|v| v + std_normal(rng).abs()).collect();
    u.extend(bx.iter().copied());
    Ok((build(n, m1 + m2, p, q, at, l, u)?, x))
}

/// `(m₁, m₂)` with `m₁ + m₂ = m`.
pub fn entire_split(m: usize) -> (usize, usize) {
    let m2 = 6 * m / 7;
    (m - m2, m2)
}
