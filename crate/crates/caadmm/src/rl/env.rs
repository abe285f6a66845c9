//! The solver as an episodic environment: one action sets `ρ` for the next
//! block of iterations.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::RlError;
use crate::admm::{AdmmSession, AdmmSettings, WarmStart};
use crate::policy::{History, Observation};
use crate::probgen::GeneratorSpec;
use crate::qp::{preprocess, QpProblem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    /// ADMM iterations per action.
    pub step_interval: usize,
    pub max_mdp_steps: usize,
    pub gamma: f64,
    pub history_len: usize,
    pub settings: AdmmSettings,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            step_interval: 10,
            max_mdp_steps: 500,
            gamma: 0.99,
            history_len: 3,
            settings: AdmmSettings::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        if self.step_interval == 0 {
            return Err(RlError::InvalidConfig("step_interval must be at least 1".into()));
        }
        if self.max_mdp_steps == 0 {
            return Err(RlError::InvalidConfig("max_mdp_steps must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(RlError::InvalidConfig(format!("gamma {} not in [0, 1)", self.gamma)));
        }
        if self.history_len == 0 {
            return Err(RlError::InvalidConfig("history_len must be at least 1".into()));
        }
        self.settings.validate()?;
        Ok(())
    }

    /// Solver settings with the check interval tied to the step interval.
    pub fn solver_settings(&self) -> AdmmSettings {
        AdmmSettings {
            check_interval: self.step_interval,
            ..self.settings.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    /// Episode over, by convergence, divergence or the step cap.
    pub done: bool,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct QpEnv {
    config: EnvConfig,
    session: Option<AdmmSession>,
    history: History,
    obs: Option<Observation>,
    steps: usize,
    done: bool,
}

impl QpEnv {
    pub fn new(config: EnvConfig) -> Result<Self, RlError> {
        config.validate()?;
        let history = History::new(config.history_len);
        Ok(Self {
            config,
            session: None,
            history,
            obs: None,
            steps: 0,
            done: false,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    /// Starts an episode on `problem` (preprocessed here unless already
    /// scaled) and returns the initial observation.
    pub fn reset(&mut self, problem: &QpProblem) -> Result<Observation, RlError> {
        self.reset_warm(problem, None)
    }

    pub fn reset_warm(&mut self, problem: &QpProblem, warm: Option<&WarmStart>) -> Result<Observation, RlError> {
        let scaled = if problem.scaled { problem.clone() } else { preprocess(problem)? };
        let session = AdmmSession::new(Arc::new(scaled), self.config.solver_settings(), warm)?;
        self.history.clear();
        let obs = self.history.observe(session.problem(), session.state(), session.settings())?;
        self.session = Some(session);
        self.obs = Some(obs.clone());
        self.steps = 0;
        self.done = false;
        Ok(obs)
    }

    /// Starts an episode on instance `index` of `spec`.
    pub fn reset_sampled(&mut self, spec: &GeneratorSpec, index: u64) -> Result<Observation, RlError> {
        let inst = spec.sample(index)?;
        self.reset(&inst.problem)
    }

    /// Applies `rho`, runs one block of iterations and reports the reward:
    /// 0 if the solver has converged, −1 otherwise.
    pub fn step(&mut self, rho: &[f64]) -> Result<StepOutcome, RlError> {
        if self.done {
            return Err(RlError::EpisodeFinished);
        }
        let (Some(session), Some(obs)) = (self.session.as_mut(), self.obs.as_ref()) else {
            return Err(RlError::NotReset);
        };
        let applied = session.set_rho(rho)?.to_vec();
        self.history.record(obs, &applied)?;
        let converged = session.run_iterations(self.config.step_interval)?;
        self.steps += 1;
        let diverged = session.diverged();
        self.done = converged || diverged || session.exhausted() || self.steps >= self.config.max_mdp_steps;
        let next = if diverged {
            obs.clone()
        } else {
            self.history.observe(session.problem(), session.state(), session.settings())?
        };
        self.obs = Some(next.clone());
        Ok(StepOutcome {
            observation: next,
            reward: if converged { 0.0 } else { -1.0 },
            done: self.done,
            converged,
        })
    }

    pub fn observation(&self) -> Option<&Observation> {
        self.obs.as_ref()
    }

    pub fn session(&self) -> Option<&AdmmSession> {
        self.session.as_ref()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn num_dual(&self) -> Option<usize> {
        self.session.as_ref().map(|s| s.problem().m)
    }
}
