//! Step-size policies: given the current ADMM state, produce the next
//! per-constraint `ρ` vector.

mod ca_admm;

use ndarray::Array2;
use rand::Rng;
use thiserror::Error;

use crate::admm::{AdmmSettings, AdmmState};
use crate::graph::GraphError;
use crate::nn::mlp::mlp_forward;
use crate::nn::{Activation, Mlp, MlpSpec, NnError, ParamStore};
use crate::qp::QpProblem;

pub use ca_admm::{
    ActorNet, CaAdmmActor, CaAdmmConfig, CaAdmmCritic, CaAdmmPolicy, ContextEncoder, CriticNet, History, Observation,
    ObservationBatch,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("rho {0} outside [rho_min, rho_max]")]
    RhoOutOfRange(f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("history has {got} observations, need {need}")]
    HistoryTooShort { got: usize, need: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

pub trait RhoPolicy {
    /// Next `ρ` for the (preprocessed) `problem` at `state`. Values are
    /// clamped to the settings' bounds.
    fn act(&mut self, problem: &QpProblem, state: &AdmmState, settings: &AdmmSettings) -> Result<Vec<f64>, PolicyError>;

    /// Forgets any per-solve memory.
    fn reset(&mut self) {}

    fn name(&self) -> String;
}

/// Constant `ρ` on every constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPolicy {
    pub rho: f64,
}

impl FixedPolicy {
    pub fn new(rho: f64) -> Self {
        Self { rho }
    }

    /// As [`FixedPolicy::new`], rejecting values outside the settings' bounds.
    pub fn checked(rho: f64, settings: &AdmmSettings) -> Result<Self, PolicyError> {
        if !(rho >= settings.rho_min && rho <= settings.rho_max) {
            return Err(PolicyError::RhoOutOfRange(rho));
        }
        Ok(Self { rho })
    }
}

impl RhoPolicy for FixedPolicy {
    fn act(&mut self, problem: &QpProblem, _: &AdmmState, settings: &AdmmSettings) -> Result<Vec<f64>, PolicyError> {
        Ok(vec![settings.clamp_rho(self.rho); problem.m])
    }

    fn name(&self) -> String {
        format!("fixed({})", self.rho)
    }
}

/// Residual balancing: a scalar `ρ` multiplied by
/// `sqrt(‖r_primal‖∞ / ‖r_dual‖∞)` whenever that factor leaves `[1/5, 5]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeuristicPolicy {
    pub band: f64,
}

impl Default for HeuristicPolicy {
    fn default() -> Self {
        Self { band: 5.0 }
    }
}

impl HeuristicPolicy {
    pub fn new() -> Self {
        Self::default()
    }
}

fn geometric_mean(v: &[f64]) -> f64 {
    (v.iter().map(|r| r.ln()).sum::<f64>() / v.len().max(1) as f64).exp()
}

impl RhoPolicy for HeuristicPolicy {
    fn act(&mut self, _: &QpProblem, state: &AdmmState, settings: &AdmmSettings) -> Result<Vec<f64>, PolicyError> {
        let rho = geometric_mean(&state.rho);
        let factor = (state.norm_r_primal() / state.norm_r_dual().max(1e-12)).sqrt();
        let next = if factor.is_finite() && (factor > self.band || factor < 1.0 / self.band) {
            settings.clamp_rho(rho * factor)
        } else {
            settings.clamp_rho(rho)
        };
        Ok(vec![next; state.rho.len()])
    }

    fn name(&self) -> String {
        "heuristic".into()
    }
}

pub const RLQP_FEATURES: usize = 6;

/// Per-constraint MLP on
/// `[log10‖r_primal‖∞, log10‖r_dual‖∞, y_m, log10 ρ_m, slack_m, z_m − (Ax)_m]`
/// with an ExpTanh output read as `log10 ρ_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct RlqpPolicy {
    pub store: ParamStore,
    pub mlp: Mlp,
}

impl RlqpPolicy {
    pub fn new<R: Rng>(rng: &mut R) -> Result<Self, PolicyError> {
        let mut store = ParamStore::new();
        let mlp = Mlp::new(
            &mut store,
            "rlqp",
            MlpSpec::new(RLQP_FEATURES, &[64, 32], 1, Activation::ExpTanh),
            rng,
        )?;
        Ok(Self { store, mlp })
    }

    pub fn features(problem: &QpProblem, state: &AdmmState) -> Array2<f64> {
        let floor = |v: f64| v.max(crate::graph::LOG_FLOOR).log10();
        let np = floor(state.norm_r_primal());
        let nd = floor(state.norm_r_dual());
        let ax = problem.a.mul_vec(&state.x);
        let mut f = Array2::zeros((problem.m, RLQP_FEATURES));
        for m in 0..problem.m {
            let (z, l, u) = (state.z[m], problem.l[m], problem.u[m]);
            let slack = match (l.is_finite(), u.is_finite()) {
                (true, true) => (z - l).min(u - z),
                (true, false) => z - l,
                (false, true) => u - z,
                (false, false) => crate::graph::SLACK_CAP,
            }
            .clamp(-crate::graph::SLACK_CAP, crate::graph::SLACK_CAP);
            let row = [np, nd, state.y[m], state.rho[m].log10(), slack, z - ax[m]];
            for (c, v) in row.into_iter().enumerate() {
                f[[m, c]] = v;
            }
        }
        f
    }
}

impl RhoPolicy for RlqpPolicy {
    fn act(&mut self, problem: &QpProblem, state: &AdmmState, settings: &AdmmSettings) -> Result<Vec<f64>, PolicyError> {
        let out = mlp_forward(&self.mlp, &self.store, &Self::features(problem, state))?;
        Ok(out.iter().map(|&o| settings.clamp_rho(10f64.powf(o))).collect())
    }

    fn name(&self) -> String {
        "rlqp".into()
    }
}
