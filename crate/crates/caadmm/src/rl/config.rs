//! Flat `key = value` training configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::RlError;
use crate::probgen::Family;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    /// Gradient updates to perform; training stops at the first episode
    /// boundary at or past this count.
    pub updates: usize,
    pub batch_size: usize,
    /// Transitions collected before the first update.
    pub warmup: usize,
    pub buffer_capacity: usize,
    /// Std of the Gaussian exploration noise on `log10 ρ`.
    pub noise_std: f64,
    pub gamma: f64,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub family: Family,
    pub n_min: usize,
    pub n_max: usize,
    pub history_len: usize,
    pub encoder_layers: usize,
    pub use_context: bool,
    pub step_interval: usize,
    pub max_mdp_steps: usize,
    pub log_every: usize,
    pub eval_instances: usize,
    pub eval_seed: u64,
    /// 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            updates: 2000,
            batch_size: 32,
            warmup: 500,
            buffer_capacity: 50_000,
            noise_std: 0.1,
            gamma: 0.99,
            tau: 0.005,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            family: Family::RandomQp,
            n_min: 10,
            n_max: 15,
            history_len: 3,
            encoder_layers: 2,
            use_context: true,
            step_interval: 10,
            max_mdp_steps: 500,
            log_every: 100,
            eval_instances: 10,
            eval_seed: 1 << 40,
            checkpoint_every: 0,
        }
    }
}

pub const KEYS: [&str; 23] = [
    "seed",
    "updates",
    "batch_size",
    "warmup",
    "buffer_capacity",
    "noise_std",
    "gamma",
    "tau",
    "actor_lr",
    "critic_lr",
    "family",
    "n_min",
    "n_max",
    "history_len",
    "encoder_layers",
    "use_context",
    "step_interval",
    "max_mdp_steps",
    "log_every",
    "eval_instances",
    "eval_seed",
    "checkpoint_every",
    "epochs",
];

fn bad(key: &str, value: &str, why: impl std::fmt::Display) -> RlError {
    RlError::InvalidConfig(format!("key '{key}': invalid value '{value}': {why}"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, RlError>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| bad(key, value, e))
}

impl TrainConfig {
    /// Parses `key = value` lines; `#` starts a comment. Unknown or repeated
    /// keys and unparsable values are errors naming the key. `epochs` is an
    /// alias of `updates`.
    pub fn parse(text: &str) -> Result<Self, RlError> {
        let mut c = Self::default();
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(RlError::InvalidConfig(format!(
                    "line {}: expected 'key = value', got '{line}'",
                    lineno + 1
                )));
            };
            let (k, v) = (k.trim(), v.trim());
            let canon = if k == "epochs" { "updates" } else { k };
            if let Some(prev) = seen.insert(canon.to_string(), lineno + 1) {
                return Err(RlError::InvalidConfig(format!(
                    "key '{k}': repeated (first on line {prev})"
                )));
            }
            c.set(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), RlError> {
        match key {
            "seed" => self.seed = num(key, v)?,
            "updates" | "epochs" => self.updates = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "warmup" => self.warmup = num(key, v)?,
            "buffer_capacity" => self.buffer_capacity = num(key, v)?,
            "noise_std" => self.noise_std = num(key, v)?,
            "gamma" => self.gamma = num(key, v)?,
            "tau" => self.tau = num(key, v)?,
            "actor_lr" => self.actor_lr = num(key, v)?,
            "critic_lr" => self.critic_lr = num(key, v)?,
            "family" => self.family = v.parse().map_err(|e| bad(key, v, e))?,
            "n_min" => self.n_min = num(key, v)?,
            "n_max" => self.n_max = num(key, v)?,
            "history_len" => self.history_len = num(key, v)?,
            "encoder_layers" => self.encoder_layers = num(key, v)?,
            "use_context" => self.use_context = num(key, v)?,
            "step_interval" => self.step_interval = num(key, v)?,
            "max_mdp_steps" => self.max_mdp_steps = num(key, v)?,
            "log_every" => self.log_every = num(key, v)?,
            "eval_instances" => self.eval_instances = num(key, v)?,
            "eval_seed" => self.eval_seed = num(key, v)?,
            "checkpoint_every" => self.checkpoint_every = num(key, v)?,
            _ => {
                return Err(RlError::InvalidConfig(format!(
                    "unknown key '{key}' (expected one of: {})",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), RlError> {
        let check = |ok: bool, key: &str, why: &str| {
            if ok {
                Ok(())
            } else {
                Err(RlError::InvalidConfig(format!("key '{key}': {why}")))
            }
        };
        check(self.batch_size > 0, "batch_size", "must be positive")?;
        check(self.buffer_capacity > 0, "buffer_capacity", "must be positive")?;
        check(self.noise_std >= 0.0 && self.noise_std.is_finite(), "noise_std", "must be finite and non-negative")?;
        check((0.0..1.0).contains(&self.gamma), "gamma", "must lie in [0, 1)")?;
        check((0.0..=1.0).contains(&self.tau), "tau", "must lie in [0, 1]")?;
        check(self.actor_lr > 0.0, "actor_lr", "must be positive")?;
        check(self.critic_lr > 0.0, "critic_lr", "must be positive")?;
        check(self.n_min >= 1, "n_min", "must be at least 1")?;
        check(self.n_max >= self.n_min, "n_max", "must be at least n_min")?;
        check(self.history_len >= 1, "history_len", "must be at least 1")?;
        check(self.encoder_layers >= 1, "encoder_layers", "must be at least 1")?;
        check(self.step_interval >= 1, "step_interval", "must be at least 1")?;
        check(self.max_mdp_steps >= 1, "max_mdp_steps", "must be at least 1")?;
        check(self.log_every >= 1, "log_every", "must be at least 1")?;
        Ok(())
    }

    /// Canonical text form, parseable by [`TrainConfig::parse`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.pairs() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("seed", self.seed.to_string()),
            ("updates", self.updates.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("warmup", self.warmup.to_string()),
            ("buffer_capacity", self.buffer_capacity.to_string()),
            ("noise_std", self.noise_std.to_string()),
            ("gamma", self.gamma.to_string()),
            ("tau", self.tau.to_string()),
            ("actor_lr", self.actor_lr.to_string()),
            ("critic_lr", self.critic_lr.to_string()),
            ("family", self.family.name().to_string()),
            ("n_min", self.n_min.to_string()),
            ("n_max", self.n_max.to_string()),
            ("history_len", self.history_len.to_string()),
            ("encoder_layers", self.encoder_layers.to_string()),
            ("use_context", self.use_context.to_string()),
            ("step_interval", self.step_interval.to_string()),
            ("max_mdp_steps", self.max_mdp_steps.to_string()),
            ("log_every", self.log_every.to_string()),
            ("eval_instances", self.eval_instances.to_string()),
            ("eval_seed", self.eval_seed.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
        ]
    }
}
