//! The ADMM iteration for `min ½xᵀPx + qᵀx  s.t. l ≤ Ax ≤ u`.
//!
//! Each iteration solves the quasi-definite system
//!
//! ```text
//! [ P + σI    Aᵀ      ] [ x⁺ ]   [ σx − q      ]
//! [ A       −diag(ρ)⁻¹ ] [ ν  ] = [ z − ρ⁻¹ ∘ y ]
//! ```
//!
//! then updates
//!
//! ```text
//! z̃ = z + ρ⁻¹ ∘ (ν − y)
//! z⁺ = Π[l,u](z̃ + ρ⁻¹ ∘ y)
//! y⁺ = y + ρ ∘ (z̃ − z⁺)
//! ```
//!
//! The step size `ρ` is a per-constraint vector chosen by a
//! [`RhoPolicy`](crate::policy::RhoPolicy) every `check_interval` iterations.

use std::sync::Arc;

use thiserror::Error;

use crate::linalg::{LinalgError, Ldl};
use crate::policy::{PolicyError, RhoPolicy};
use crate::qp::{preprocess, project_box, QpError, QpProblem};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdmmError {
    #[error("invalid settings: {0}")]
    InvalidSettings(String),
    #[error("rho must be strictly positive (index {index}, value {value})")]
    NonPositiveRho { index: usize, value: f64 },
    #[error("rho has length {got}, expected {expected}")]
    RhoLength { got: usize, expected: usize },
    #[error("KKT factorization is stale: rho changed since factorization")]
    StaleFactorization,
    #[error("singular KKT system: {0}")]
    SingularSystem(#[from] LinalgError),
    #[error("warm start has wrong dimensions")]
    WarmStartDimension,
    #[error(transparent)]
    Problem(#[from] QpError),
    #[error("policy: {0}")]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdmmSettings {
    pub sigma: f64,
    pub eps_primal: f64,
    pub eps_dual: f64,
    pub max_iterations: usize,
    pub rho_min: f64,
    pub rho_max: f64,
    pub rho_init: f64,
    pub check_interval: usize,
    /// Relative change in any ρ component above which the KKT matrix is
    /// refactored.
    pub refactor_threshold: f64,
}

impl Default for AdmmSettings {
    fn default() -> Self {
        Self {
            sigma: 1e-6,
            eps_primal: 1e-3,
            eps_dual: 1e-3,
            max_iterations: 5000,
            rho_min: 1e-6,
            rho_max: 1e6,
            rho_init: 0.1,
            check_interval: 10,
            refactor_threshold: 1e-12,
        }
    }
}

impl AdmmSettings {
    pub fn validate(&self) -> Result<(), AdmmError> {
        let bad = |s: &str| Err(AdmmError::InvalidSettings(s.to_string()));
        if !(self.sigma > 0.0) {
            return bad("sigma must be > 0");
        }
        if !(self.eps_primal > 0.0 && self.eps_dual > 0.0) {
            return bad("tolerances must be > 0");
        }
        if !(self.rho_min > 0.0 && self.rho_min < self.rho_max) {
            return bad("need 0 < rho_min < rho_max");
        }
        if !(self.rho_init >= self.rho_min && self.rho_init <= self.rho_max) {
            return bad("rho_init outside [rho_min, rho_max]");
        }
        if self.check_interval == 0 {
            return bad("check_interval must be >= 1");
        }
        Ok(())
    }

    pub fn clamp_rho(&self, rho: f64) -> f64 {
        if rho.is_nan() {
            return self.rho_init;
        }
        rho.clamp(self.rho_min, self.rho_max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub y: Vec<f64>,
    pub nu: Vec<f64>,
    pub rho: Vec<f64>,
    pub iteration: usize,
    pub r_primal: Vec<f64>,
    pub r_dual: Vec<f64>,
    /// Iteration at which `r_primal` / `r_dual` were last computed.
    pub residuals_at: Option<usize>,
}

impl AdmmState {
    /// `x = 0`, `z = Π(0)`, `y = 0`, uniform `ρ`.
    pub fn initial(problem: &QpProblem, rho: f64) -> Self {
        let z = project_box(&vec![0.0; problem.m], &problem.l, &problem.u);
        Self::from_parts(problem, vec![0.0; problem.n], z, vec![0.0; problem.m], rho)
    }

    pub fn from_parts(problem: &QpProblem, x: Vec<f64>, z: Vec<f64>, y: Vec<f64>, rho: f64) -> Self {
        let mut s = Self {
            x,
            z,
            y,
            nu: vec![0.0; problem.m],
            rho: vec![rho; problem.m],
            iteration: 0,
            r_primal: vec![0.0; problem.m],
            r_dual: vec![0.0; problem.n],
            residuals_at: None,
        };
        s.update_residuals(problem);
        s
    }

    pub fn update_residuals(&mut self, problem: &QpProblem) {
        let (rp, rd) = compute_residuals(self, problem);
        self.r_primal = rp;
        self.r_dual = rd;
        self.residuals_at = Some(self.iteration);
    }

    pub fn norm_r_primal(&self) -> f64 {
        inf_norm(&self.r_primal)
    }

    pub fn norm_r_dual(&self) -> f64 {
        inf_norm(&self.r_dual)
    }

    fn is_finite(&self) -> bool {
        self.x.iter().chain(&self.z).chain(&self.y).all(|v| v.is_finite())
    }
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Factorization of the KKT matrix for a fixed `ρ`.
///
/// The dual block is eliminated first (a symmetric permutation that is valid
/// for quasi-definite matrices), leaving the positive definite Schur
/// complement `P + σI + Aᵀ diag(ρ) A`, which is factored by [`Ldl`].
#[derive(Debug, Clone)]
pub struct KktFactorization {
    rho_snapshot: Vec<f64>,
    sigma: f64,
    schur: Ldl,
}

impl KktFactorization {
    pub fn rho_snapshot(&self) -> &[f64] {
        &self.rho_snapshot
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

pub fn factorize_kkt(problem: &QpProblem, rho: &[f64], sigma: f64) -> Result<KktFactorization, AdmmError> {
    if rho.len() != problem.m {
        return Err(AdmmError::RhoLength {
            got: rho.len(),
            expected: problem.m,
        });
    }
    if let Some((index, &value)) = rho.iter().enumerate().find(|(_, r)| !(**r > 0.0)) {
        return Err(AdmmError::NonPositiveRho { index, value });
    }
    let n = problem.n;
    let mut s = vec![0.0; n * n];
    for &(r, c, v) in problem.p.entries() {
        if c <= r {
            s[r * n + c] += v;
        }
    }
    for i in 0..n {
        s[i * n + i] += sigma;
    }
    for row in 0..problem.m {
        let entries: Vec<(usize, f64)> = problem.a.row(row).collect();
        let w = rho[row];
        for (ia, &(j, aj)) in entries.iter().enumerate() {
            let wj = w * aj;
            for &(k, ak) in &entries[..=ia] {
                // j >= k since rows are column-sorted
                s[j * n + k] += wj * ak;
            }
        }
    }
    let schur = Ldl::factor(n, s)?;
    Ok(KktFactorization {
        rho_snapshot: rho.to_vec(),
        sigma,
        schur,
    })
}

/// Solves the KKT system for an arbitrary right-hand side `[b1; b2]`.
pub fn solve_kkt_rhs(fact: &KktFactorization, problem: &QpProblem, b1: &[f64], b2: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let rho = &fact.rho_snapshot;
    let rb2: Vec<f64> = rho.iter().zip(b2).map(|(r, b)| r * b).collect();
    let at_rb2 = problem.a.tr_mul_vec(&rb2);
    let rhs: Vec<f64> = b1.iter().zip(&at_rb2).map(|(a, b)| a + b).collect();
    let x = fact.schur.solve(&rhs);
    let ax = problem.a.mul_vec(&x);
    let nu = ax
        .iter()
        .zip(b2)
        .zip(rho)
        .map(|((a, b), r)| r * (a - b))
        .collect();
    (x, nu)
}

/// Solves for `(x⁺, ν)` with right-hand side `[σx − q; z − ρ⁻¹∘y]`.
pub fn solve_kkt(
    fact: &KktFactorization,
    state: &AdmmState,
    problem: &QpProblem,
) -> Result<(Vec<f64>, Vec<f64>), AdmmError> {
    if fact.rho_snapshot != state.rho {
        return Err(AdmmError::StaleFactorization);
    }
    let b1: Vec<f64> = state
        .x
        .iter()
        .zip(&problem.q)
        .map(|(x, q)| fact.sigma * x - q)
        .collect();
    let b2: Vec<f64> = state
        .z
        .iter()
        .zip(state.y.iter().zip(&state.rho))
        .map(|(z, (y, r))| z - y / r)
        .collect();
    Ok(solve_kkt_rhs(fact, problem, &b1, &b2))
}

/// One ADMM iteration applied in place. Residuals are not recomputed.
pub fn admm_step(state: &mut AdmmState, problem: &QpProblem, fact: &KktFactorization) -> Result<(), AdmmError> {
    let (x_next, nu) = solve_kkt(fact, state, problem)?;
    for i in 0..problem.m {
        let rho = state.rho[i];
        let z_tilde = state.z[i] + (nu[i] - state.y[i]) / rho;
        let z_next = (z_tilde + state.y[i] / rho).max(problem.l[i]).min(problem.u[i]);
        state.y[i] += rho * (z_tilde - z_next);
        state.z[i] = z_next;
    }
    state.x = x_next;
    state.nu = nu;
    state.iteration += 1;
    Ok(())
}

pub fn admm_iteration(state: &AdmmState, problem: &QpProblem, fact: &KktFactorization) -> Result<AdmmState, AdmmError> {
    let mut next = state.clone();
    admm_step(&mut next, problem, fact)?;
    Ok(next)
}

/// `r_primal = Ax − z`, `r_dual = Px + q + Aᵀy`.
pub fn compute_residuals(state: &AdmmState, problem: &QpProblem) -> (Vec<f64>, Vec<f64>) {
    let ax = problem.a.mul_vec(&state.x);
    let r_primal = ax.iter().zip(&state.z).map(|(a, z)| a - z).collect();
    let px = problem.p.mul_vec(&state.x);
    let aty = problem.a.tr_mul_vec(&state.y);
    let r_dual = px
        .iter()
        .zip(&problem.q)
        .zip(&aty)
        .map(|((p, q), a)| p + q + a)
        .collect();
    (r_primal, r_dual)
}

pub fn check_termination(state: &AdmmState, settings: &AdmmSettings) -> bool {
    state.norm_r_primal() <= settings.eps_primal && state.norm_r_dual() <= settings.eps_dual
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Solved,
    MaxIterations,
    NumericalFailure,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Solved => "solved",
            SolveStatus::MaxIterations => "max_iterations",
            SolveStatus::NumericalFailure => "numerical_failure",
        }
    }
}

/// Solution in the units of the original (unscaled) problem.
#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub iterations: usize,
    pub status: SolveStatus,
    /// Residual norms of the scaled problem at the returned iterate.
    pub norm_r_primal: f64,
    pub norm_r_dual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    pub norm_r_primal: f64,
    pub norm_r_dual: f64,
    pub rho_mean_log10: f64,
    pub rho_min_log10: f64,
    pub rho_max_log10: f64,
}

impl TraceRecord {
    fn from_state(state: &AdmmState) -> Self {
        let logs: Vec<f64> = state.rho.iter().map(|r| r.log10()).collect();
        let mean = logs.iter().sum::<f64>() / logs.len().max(1) as f64;
        Self {
            iteration: state.iteration,
            norm_r_primal: state.norm_r_primal(),
            norm_r_dual: state.norm_r_dual(),
            rho_mean_log10: mean,
            rho_min_log10: logs.iter().cloned().fold(f64::INFINITY, f64::min),
            rho_max_log10: logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Primal/dual starting point in original units.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// A running ADMM solve on a scaled problem: current state, current
/// factorization and trace. Shared by [`solve`] and the RL environment.
#[derive(Debug, Clone)]
pub struct AdmmSession {
    problem: Arc<QpProblem>,
    settings: AdmmSettings,
    state: AdmmState,
    fact: KktFactorization,
    trace: Vec<TraceRecord>,
    refactorizations: usize,
}

impl AdmmSession {
    /// `problem` must already be preprocessed.
    pub fn new(problem: Arc<QpProblem>, settings: AdmmSettings, warm: Option<&WarmStart>) -> Result<Self, AdmmError> {
        settings.validate()?;
        problem.validate()?;
        let state = match warm {
            None => AdmmState::initial(&problem, settings.rho_init),
            Some(w) => {
                if w.x.len() != problem.n || w.y.len() != problem.m {
                    return Err(AdmmError::WarmStartDimension);
                }
                let z = project_box(&problem.a.mul_vec(&w.x), &problem.l, &problem.u);
                AdmmState::from_parts(&problem, w.x.clone(), z, problem.scale_y(&w.y), settings.rho_init)
            }
        };
        let fact = factorize_kkt(&problem, &state.rho, settings.sigma)?;
        Ok(Self {
            problem,
            settings,
            state,
            fact,
            trace: Vec::new(),
            refactorizations: 1,
        })
    }

    pub fn problem(&self) -> &Arc<QpProblem> {
        &self.problem
    }

    pub fn settings(&self) -> &AdmmSettings {
        &self.settings
    }

    pub fn state(&self) -> &AdmmState {
        &self.state
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn refactorizations(&self) -> usize {
        self.refactorizations
    }

    /// Installs a new ρ (clamped to the settings' bounds) and refactors if any
    /// component moved by more than the relative threshold. Returns the
    /// applied vector.
    pub fn set_rho(&mut self, rho: &[f64]) -> Result<&[f64], AdmmError> {
        if rho.len() != self.problem.m {
            return Err(AdmmError::RhoLength {
                got: rho.len(),
                expected: self.problem.m,
            });
        }
        let clamped: Vec<f64> = rho.iter().map(|&r| self.settings.clamp_rho(r)).collect();
        let changed = clamped
            .iter()
            .zip(&self.state.rho)
            .any(|(new, old)| ((new - old) / old).abs() > self.settings.refactor_threshold);
        if changed {
            self.fact = factorize_kkt(&self.problem, &clamped, self.settings.sigma)?;
            self.refactorizations += 1;
            self.state.rho = clamped;
        }
        Ok(&self.state.rho)
    }

    /// Runs up to `k` iterations (stopping at `max_iterations`), then
    /// recomputes residuals and appends a trace record. Returns whether the
    /// termination criteria hold.
    pub fn run_iterations(&mut self, k: usize) -> Result<bool, AdmmError> {
        let k = k.min(self.settings.max_iterations.saturating_sub(self.state.iteration));
        for _ in 0..k {
            admm_step(&mut self.state, &self.problem, &self.fact)?;
        }
        self.state.update_residuals(&self.problem);
        self.trace.push(TraceRecord::from_state(&self.state));
        Ok(self.converged())
    }

    pub fn converged(&self) -> bool {
        check_termination(&self.state, &self.settings)
    }

    pub fn exhausted(&self) -> bool {
        self.state.iteration >= self.settings.max_iterations
    }

    pub fn diverged(&self) -> bool {
        !self.state.is_finite()
    }

    fn solution(&self, state: &AdmmState, status: SolveStatus) -> QpSolution {
        QpSolution {
            x: state.x.clone(),
            y: self.problem.unscale_y(&state.y),
            z: self.problem.unscale_z(&state.z),
            iterations: self.state.iteration,
            status,
            norm_r_primal: state.norm_r_primal(),
            norm_r_dual: state.norm_r_dual(),
        }
    }
}

fn badness(state: &AdmmState, settings: &AdmmSettings) -> f64 {
    (state.norm_r_primal() / settings.eps_primal).max(state.norm_r_dual() / settings.eps_dual)
}

/// Preprocesses (unless already scaled) and solves `problem`, asking `policy`
/// for a new ρ before every block of `check_interval` iterations.
pub fn solve(
    problem: &QpProblem,
    policy: &mut dyn RhoPolicy,
    settings: &AdmmSettings,
) -> Result<(QpSolution, Vec<TraceRecord>), AdmmError> {
    solve_warm(problem, policy, settings, None)
}

pub fn solve_warm(
    problem: &QpProblem,
    policy: &mut dyn RhoPolicy,
    settings: &AdmmSettings,
    warm: Option<&WarmStart>,
) -> Result<(QpSolution, Vec<TraceRecord>), AdmmError> {
    let scaled = if problem.scaled {
        problem.clone()
    } else {
        preprocess(problem)?
    };
    let mut session = match AdmmSession::new(Arc::new(scaled), settings.clone(), warm) {
        Ok(s) => s,
        Err(AdmmError::SingularSystem(_)) => {
            return Ok((failed_solution(problem), Vec::new()));
        }
        Err(e) => return Err(e),
    };
    policy.reset();
    let mut best: Option<(f64, AdmmState)> = None;
    loop {
        let rho = policy.act(&session.problem, &session.state, &session.settings)?;
        match session.set_rho(&rho) {
            Ok(_) => {}
            Err(AdmmError::SingularSystem(_)) => {
                let sol = session.solution(&session.state, SolveStatus::NumericalFailure);
                return Ok((sol, session.trace));
            }
            Err(e) => return Err(e),
        }
        let converged = session.run_iterations(settings.check_interval)?;
        if session.diverged() {
            let sol = session.solution(&session.state, SolveStatus::NumericalFailure);
            return Ok((sol, session.trace));
        }
        if converged {
            let sol = session.solution(&session.state, SolveStatus::Solved);
            return Ok((sol, session.trace));
        }
        let score = badness(&session.state, settings);
        if best.as_ref().map_or(true, |(b, _)| score < *b) {
            best = Some((score, session.state.clone()));
        }
        if session.exhausted() {
            let state = best.map(|(_, s)| s).unwrap_or_else(|| session.state.clone());
            let sol = session.solution(&state, SolveStatus::MaxIterations);
            return Ok((sol, session.trace));
        }
    }
}

fn failed_solution(problem: &QpProblem) -> QpSolution {
    QpSolution {
        x: vec![f64::NAN; problem.n],
        y: vec![f64::NAN; problem.m],
        z: vec![f64::NAN; problem.m],
        iterations: 0,
        status: SolveStatus::NumericalFailure,
        norm_r_primal: f64::NAN,
        norm_r_dual: f64::NAN,
    }
}
