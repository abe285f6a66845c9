//! Shared test support: an active-set enumeration oracle, a central
//! finite-difference gradient checker and small random observations.
#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use caadmm::graph::permute;
use caadmm::nn::{ParamStore, Tape, Var};
use caadmm::policy::Observation;
use caadmm::probgen::{Family, GeneratorSpec};
use caadmm::rl::{EnvConfig, QpEnv};
use caadmm::QpProblem;

pub mod suites;

// ---------------------------------------------------------------- oracle

#[derive(Debug, Clone, Copy, PartialEq)]
enum Side {
    Free,
    Lower,
    Upper,
    Fixed,
}

#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub objective: f64,
    /// Active sets tried before a KKT point was found.
    pub tried: usize,
}

/// Brute-force solve: for every assignment of each constraint row to
/// inactive / at-lower / at-upper, solve the equality-constrained KKT system
/// and accept the first point that is primal feasible with correctly signed
/// multipliers. Returns `None` when no assignment qualifies.
pub fn oracle_solve(prob: &QpProblem) -> Option<OracleSolution> {
    let n = prob.n;
    let m = prob.m;
    let p = DMatrix::from_fn(n, n, |i, j| prob.p.get(i, j));
    let a = DMatrix::from_fn(m, n, |i, j| prob.a.get(i, j));
    let basis = independent_equalities(prob, &a);
    let choices: Vec<Vec<Side>> = (0..m)
        .map(|i| {
            let (l, u) = (prob.l[i], prob.u[i]);
            if l == u {
                // dependent equality rows only get the feasibility check
                vec![if basis.contains(&i) { Side::Fixed } else { Side::Free }]
            } else {
                let mut c = vec![Side::Free];
                if l.is_finite() {
                    c.push(Side::Lower);
                }
                if u.is_finite() {
                    c.push(Side::Upper);
                }
                c
            }
        })
        .collect();
    let mut pick = vec![0usize; m];
    let mut tried = 0;
    loop {
        tried += 1;
        let sides: Vec<Side> = (0..m).map(|i| choices[i][pick[i]]).collect();
        if let Some((x, y)) = kkt_point(prob, &p, &a, &sides) {
            let objective = prob.objective(&x);
            return Some(OracleSolution { x, y, objective, tried });
        }
        // mixed-radix increment
        let mut k = 0;
        loop {
            if k == m {
                return None;
            }
            pick[k] += 1;
            if pick[k] < choices[k].len() {
                break;
            }
            pick[k] = 0;
            k += 1;
        }
    }
}

/// Greedy maximal linearly independent subset of the equality rows. Keeping
/// only these leaves the KKT matrix nonsingular for every inequality subset
/// whose normals are independent of them, and some such subset always
/// carries a valid multiplier.
fn independent_equalities(prob: &QpProblem, a: &DMatrix<f64>) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for i in (0..prob.m).filter(|&i| prob.l[i] == prob.u[i]) {
        let mut rows = kept.clone();
        rows.push(i);
        let sub = DMatrix::from_fn(rows.len(), prob.n, |r, j| a[(rows[r], j)]);
        let sv = sub.singular_values();
        let top = sv.max();
        if rows.len() <= prob.n && top > 0.0 && sv.min() > 1e-10 * top {
            kept.push(i);
        }
    }
    kept
}

fn kkt_point(prob: &QpProblem, p: &DMatrix<f64>, a: &DMatrix<f64>, sides: &[Side]) -> Option<(Vec<f64>, Vec<f64>)> {
    let n = prob.n;
    let active: Vec<usize> = (0..prob.m).filter(|&i| sides[i] != Side::Free).collect();
    let k = active.len();
    let mut kkt = DMatrix::zeros(n + k, n + k);
    let mut rhs = DVector::zeros(n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(p);
    for i in 0..n {
        rhs[i] = -prob.q[i];
    }
    for (r, &row) in active.iter().enumerate() {
        for j in 0..n {
            kkt[(n + r, j)] = a[(row, j)];
            kkt[(j, n + r)] = a[(row, j)];
        }
        rhs[n + r] = match sides[row] {
            Side::Lower => prob.l[row],
            _ => prob.u[row],
        };
    }
    let sol = kkt.clone().full_piv_lu().solve(&rhs)?;
    let scale = 1.0 + rhs.amax();
    if (&kkt * &sol - &rhs).amax() > 1e-9 * scale || sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let x: Vec<f64> = sol.rows(0, n).iter().copied().collect();
    let mut y = vec![0.0; prob.m];
    for (r, &row) in active.iter().enumerate() {
        y[row] = sol[n + r];
    }
    let ax = prob.a.mul_vec(&x);
    let tol = 1e-9;
    for i in 0..prob.m {
        let (l, u) = (prob.l[i], prob.u[i]);
        if ax[i] < l - tol * (1.0 + l.abs()) || ax[i] > u + tol * (1.0 + u.abs()) {
            return None;
        }
        match sides[i] {
            Side::Upper if y[i] < -tol => return None,
            Side::Lower if y[i] > tol => return None,
            _ => {}
        }
    }
    Some((x, y))
}

/// Whether the optimum is the only minimizer: any other minimizer differs by
/// a direction `d` with `Pd = 0` and `(Ad)_i = 0` on every equality row and
/// every row with a nonzero multiplier, so a full-rank stack of those rows
/// rules it out.
pub fn unique_argmin(prob: &QpProblem, y: &[f64]) -> bool {
    let n = prob.n;
    let rows: Vec<usize> = (0..prob.m)
        .filter(|&i| prob.l[i] == prob.u[i] || y[i].abs() > 1e-9)
        .collect();
    let stack = DMatrix::from_fn(n + rows.len(), n, |r, j| {
        if r < n {
            prob.p.get(r, j)
        } else {
            prob.a.get(rows[r - n], j)
        }
    });
    let sv = stack.singular_values();
    let top = sv.max();
    top > 0.0 && sv.len() == n && sv.min() > 1e-9 * top
}

/// Largest violation of `l ≤ Ax ≤ u`.
pub fn violation(prob: &QpProblem, x: &[f64]) -> f64 {
    let ax = prob.a.mul_vec(x);
    (0..prob.m)
        .map(|i| (prob.l[i] - ax[i]).max(ax[i] - prob.u[i]).max(0.0))
        .fold(0.0, f64::max)
}

/// Number of active-set assignments the oracle may have to visit.
pub fn oracle_work(prob: &QpProblem) -> f64 {
    (0..prob.m)
        .map(|i| {
            let (l, u) = (prob.l[i], prob.u[i]);
            if l == u {
                1.0
            } else {
                1.0 + l.is_finite() as u8 as f64 + u.is_finite() as u8 as f64
            }
        })
        .product()
}

/// Generator parameters `(n, m)` with `n ≤ 6`, `m ≤ 12` that keep the
/// enumeration small for each family.
pub fn small_size(family: Family, rng: &mut ChaCha8Rng) -> (usize, Option<usize>) {
    match family {
        Family::RandomQp => (rng.gen_range(1..=4), None),
        Family::EqQp => (rng.gen_range(2..=6), None),
        Family::Portfolio => (rng.gen_range(2..=6), None),
        Family::Svm => {
            let n = rng.gen_range(1..=3);
            (n, Some(rng.gen_range(2..=8)))
        }
        Family::Huber => {
            let n = rng.gen_range(1..=3);
            (n, Some(rng.gen_range(n..=4)))
        }
        Family::Control => (rng.gen_range(1..=2), None),
        Family::Lasso => {
            let n = rng.gen_range(1..=3);
            (n, Some(rng.gen_range(n..=5)))
        }
        Family::EntireRandomQp => (rng.gen_range(1..=5), None),
    }
}

// ---------------------------------------------------------------- gradients

/// Fixed random weights the network output is contracted with, so every
/// output entry contributes to the scalar loss.
fn contraction(shape: (usize, usize), seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn scalar_loss(tape: &mut Tape, outputs: &[Var], seed: u64) -> Var {
    let mut total: Option<Var> = None;
    for (k, &o) in outputs.iter().enumerate() {
        let shape = tape.shape(o);
        let c = tape.constant(contraction(shape, seed.wrapping_add(k as u64)));
        let prod = tape.mul(o, c).expect("same shape");
        let mean = tape.mean(prod);
        let sum = tape.scale(mean, (shape.0 * shape.1) as f64);
        total = Some(match total {
            None => sum,
            Some(t) => tape.add(t, sum).expect("scalars"),
        });
    }
    total.expect("at least one output")
}

#[derive(Debug, Default, Clone, Copy)]
pub struct GradReport {
    pub checked: usize,
    /// Samples skipped because the loss has a kink within the step
    /// (one-sided slopes disagree), e.g. a LeakyReLU or min/max switch.
    pub kinks: usize,
    pub max_rel_err: f64,
    /// (analytic, numeric) at the worst sample.
    pub worst: (f64, f64),
}

impl GradReport {
    pub fn merge(&mut self, other: GradReport) {
        self.checked += other.checked;
        self.kinks += other.kinks;
        if other.max_rel_err > self.max_rel_err {
            self.max_rel_err = other.max_rel_err;
            self.worst = other.worst;
        }
    }
}

pub const FD_STEP: f64 = 1e-4;

/// Relative error with the magnitudes floored at 1e-5: below that the
/// difference quotient's round-off (about 1e-10 absolute) dominates.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-5)
}

/// Richardson-extrapolated central difference. The estimates at `h` and
/// `h/2` must agree to within round-off, otherwise the pair `h/2`, `h/4` is
/// tried; `None` when neither agrees, i.e. there is a kink right at `x0`.
fn fd_slope(f: &mut dyn FnMut(f64) -> f64, x0: f64) -> Option<f64> {
    let noise = 1e-10 * (1.0 + f(x0).abs());
    let mut central = |h: f64| (f(x0 + h) - f(x0 - h)) / (2.0 * h);
    let mut h = FD_STEP;
    let mut d1 = central(h);
    for _ in 0..2 {
        let d2 = central(h / 2.0);
        if (d1 - d2).abs() <= noise + 1e-6 * d2.abs() {
            return Some((4.0 * d2 - d1) / 3.0);
        }
        h /= 2.0;
        d1 = d2;
    }
    None
}

/// Checks the analytic gradient of `sum(C ⊙ forward(...))` with respect to
/// `samples` random parameter entries and every entry of the listed
/// constant inputs.
pub fn check_gradients(
    store: &ParamStore,
    inputs: &[Array2<f64>],
    forward: &dyn Fn(&mut Tape, &ParamStore, &[Var]) -> Vec<Var>,
    samples: usize,
    seed: u64,
) -> GradReport {
    let eval = |store: &ParamStore, inputs: &[Array2<f64>]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
        let outs = forward(&mut tape, store, &vars);
        let loss = scalar_loss(&mut tape, &outs, seed);
        tape.value(loss)[[0, 0]]
    };

    let mut work = store.clone();
    work.zero_grad();
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
    let outs = forward(&mut tape, &work, &vars);
    let loss = scalar_loss(&mut tape, &outs, seed);
    let grads = tape.backward(loss).expect("backward");
    tape.accumulate(&grads, &mut work);

    let mut report = GradReport::default();
    let record = |analytic: f64, numeric: Option<f64>, report: &mut GradReport| match numeric {
        None => report.kinks += 1,
        Some(num) => {
            report.checked += 1;
            let e = rel_err(analytic, num);
            if e > report.max_rel_err {
                report.max_rel_err = e;
                report.worst = (analytic, num);
            }
        }
    };

    let mut entries = Vec::new();
    for id in work.ids() {
        let (r, c) = work.value(id).dim();
        for i in 0..r {
            for j in 0..c {
                entries.push((id, i, j));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    entries.shuffle(&mut rng);
    for &(id, i, j) in entries.iter().take(samples) {
        let analytic = work.grad(id)[[i, j]];
        let x0 = store.value(id)[[i, j]];
        let mut probe = store.clone();
        let mut f = |x: f64| {
            probe.value_mut(id)[[i, j]] = x;
            eval(&probe, inputs)
        };
        let numeric = fd_slope(&mut f, x0);
        record(analytic, numeric, &mut report);
    }

    for (k, input) in inputs.iter().enumerate() {
        let g = grads.get(vars[k]).cloned().unwrap_or_else(|| Array2::zeros(input.dim()));
        for ((i, j), &x0) in input.indexed_iter() {
            let mut probe = inputs.to_vec();
            let mut f = |x: f64| {
                probe[k][[i, j]] = x;
                eval(store, &probe)
            };
            let numeric = fd_slope(&mut f, x0);
            record(g[[i, j]], numeric, &mut report);
        }
    }
    report
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.5..1.5))
}

// ---------------------------------------------------------------- observations

/// An observation a few MDP steps into a small random problem, with random
/// `ρ` applied along the way.
pub fn random_observation(rng: &mut ChaCha8Rng, family: Family, n: (usize, usize), history_len: usize) -> Observation {
    let spec = GeneratorSpec::new(family, n, rng.gen());
    let mut env = QpEnv::new(EnvConfig {
        history_len,
        ..EnvConfig::default()
    })
    .expect("env config");
    let mut obs = env.reset_sampled(&spec, 0).expect("reset");
    let steps = rng.gen_range(0..4);
    for _ in 0..steps {
        let m = obs.current.dual.nrows();
        let rho: Vec<f64> = (0..m).map(|_| 10f64.powf(rng.gen_range(-2.0..2.0))).collect();
        let out = env.step(&rho).expect("step");
        if out.done {
            break;
        }
        obs = out.observation;
    }
    obs
}

pub fn random_perm(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// Relabels every graph of `obs` with the same node permutations.
pub fn permute_observation(obs: &Observation, primal: &[usize], dual: &[usize]) -> Observation {
    let current = permute(&obs.current, primal, dual).expect("valid permutation");
    let history = obs
        .history
        .iter()
        .map(|g| Arc::new(permute(g, primal, dual).expect("valid permutation")))
        .collect();
    Observation {
        structure: current.structure.clone(),
        history,
        current: Arc::new(current),
    }
}

/// Prints one acceptance line and returns whether it passed.
pub fn report_line(id: usize, name: &str, pass: bool, detail: &str) -> bool {
    println!("criterion {id} [{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}
