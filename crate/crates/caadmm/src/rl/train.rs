//! The training loop: noisy rollouts into the replay memory, one DDPG update
//! per environment step once the warm-up is filled.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::ddpg::{Ddpg, DdpgConfig};
use super::env::{EnvConfig, QpEnv};
use super::replay::{ReplayBuffer, ReplayRecord, Transition};
use super::RlError;
use crate::admm::{solve, AdmmSettings, SolveStatus};
use crate::nn::{Checkpoint, ParamStore};
use crate::policy::{CaAdmmActor, CaAdmmConfig, CaAdmmPolicy};
use crate::probgen::GeneratorSpec;

pub const LOG_HEADER: &str = "epoch,critic_loss,actor_loss,mean_episode_len,eval_mean_iterations";
pub const CHECKPOINT_KIND: &str = "ca-admm-ddpg";
pub const BEST_ACTOR: &str = "best_actor";

/// Bounds of the actor's ExpTanh output; noisy actions are clipped to it.
pub const LOG_RHO_BOUND: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub mean_episode_len: Option<f64>,
    pub eval_mean_iterations: Option<f64>,
}

impl LogRow {
    pub fn csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{}",
            self.epoch,
            self.critic_loss,
            self.actor_loss,
            opt(self.mean_episode_len),
            opt(self.eval_mean_iterations)
        )
    }
}

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv());
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct Pending {
    critic_sum: f64,
    actor_sum: f64,
    updates: usize,
    episode_len_sum: usize,
    episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrainerState {
    updates_done: usize,
    episodes_done: u64,
    noise_seed: [u8; 32],
    noise_word_pos: String,
    next_checkpoint: usize,
    pending: Pending,
    log: Vec<LogRow>,
    buffer: ReplayRecord,
    best_eval: Option<f64>,
}

pub fn net_config(c: &TrainConfig) -> CaAdmmConfig {
    CaAdmmConfig {
        history_len: c.history_len,
        encoder_layers: c.encoder_layers,
        use_context: c.use_context,
        zero_init_head: true,
    }
}

pub fn env_config(c: &TrainConfig) -> EnvConfig {
    EnvConfig {
        step_interval: c.step_interval,
        max_mdp_steps: c.max_mdp_steps,
        gamma: c.gamma,
        history_len: c.history_len,
        settings: AdmmSettings {
            max_iterations: c.step_interval * c.max_mdp_steps,
            check_interval: c.step_interval,
            ..AdmmSettings::default()
        },
    }
}

pub fn train_spec(c: &TrainConfig) -> GeneratorSpec {
    GeneratorSpec::new(c.family, (c.n_min, c.n_max), c.seed.wrapping_mul(1_000_003))
}

pub fn eval_spec(c: &TrainConfig) -> GeneratorSpec {
    GeneratorSpec::new(c.family, (c.n_min, c.n_max), c.eval_seed)
}

/// Iteration count per instance of `spec` (failures count their full
/// iteration budget).
pub fn evaluate_actor(
    actor: &CaAdmmActor,
    spec: &GeneratorSpec,
    count: usize,
    settings: &AdmmSettings,
) -> Result<Vec<(usize, SolveStatus)>, RlError> {
    let shared = Arc::new(actor.clone());
    let mut out = Vec::with_capacity(count);
    for i in 0..count as u64 {
        let inst = spec.sample(i)?;
        let mut policy = CaAdmmPolicy::new(shared.clone());
        let (sol, _) = solve(&inst.problem, &mut policy, settings)?;
        out.push((sol.iterations, sol.status));
    }
    Ok(out)
}

/// Reads the actor out of a training checkpoint: the one with the best
/// evaluation mean when the run logged any, else the latest.
pub fn load_actor(ck: &Checkpoint) -> Result<CaAdmmActor, RlError> {
    let name = if ck.store(BEST_ACTOR).is_ok() { BEST_ACTOR } else { "actor" };
    load_actor_named(ck, name)
}

/// Reads a named actor store (`actor`, `target_actor` or `best_actor`).
pub fn load_actor_named(ck: &Checkpoint, name: &str) -> Result<CaAdmmActor, RlError> {
    let text: String = ck.meta.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    let config = TrainConfig::parse(&text)?;
    let mut actor = CaAdmmActor::new(net_config(&config), 0)?;
    ck.load_store(name, &mut actor.store, None)?;
    Ok(actor)
}

#[derive(Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub ddpg: Ddpg,
    buffer: ReplayBuffer,
    env: QpEnv,
    noise: ChaCha8Rng,
    updates_done: usize,
    episodes_done: u64,
    next_checkpoint: usize,
    pending: Pending,
    log: Vec<LogRow>,
    best: Option<(f64, ParamStore)>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self, RlError> {
        config.validate()?;
        let ddpg = Ddpg::new(
            net_config(&config),
            DdpgConfig {
                gamma: config.gamma,
                tau: config.tau,
                actor_lr: config.actor_lr,
                critic_lr: config.critic_lr,
            },
            config.seed,
        )?;
        let buffer = ReplayBuffer::new(config.buffer_capacity, config.seed.wrapping_add(17))?;
        let env = QpEnv::new(env_config(&config))?;
        let mut noise = ChaCha8Rng::seed_from_u64(config.seed);
        noise.set_stream(7);
        Ok(Self {
            next_checkpoint: config.checkpoint_every,
            config,
            ddpg,
            buffer,
            env,
            noise,
            updates_done: 0,
            episodes_done: 0,
            pending: Pending::default(),
            log: Vec::new(),
            best: None,
        })
    }

    /// Continues from `ck` under `config`, which may change the update
    /// budget and logging but not the networks or the seed.
    pub fn resume(config: TrainConfig, ck: &Checkpoint) -> Result<Self, RlError> {
        let mut t = Self::new(config)?;
        if ck.kind != CHECKPOINT_KIND {
            return Err(RlError::Checkpoint(format!("expected a '{CHECKPOINT_KIND}' checkpoint, got '{}'", ck.kind)));
        }
        for key in ["seed", "history_len", "encoder_layers", "use_context", "family", "n_min", "n_max"] {
            let ours = t.config.pairs().into_iter().find(|(k, _)| *k == key).map(|(_, v)| v);
            if ck.meta.get(key) != ours.as_ref() {
                return Err(RlError::Checkpoint(format!(
                    "key '{key}' differs from the checkpoint ({:?} vs {:?})",
                    ours,
                    ck.meta.get(key)
                )));
            }
        }
        t.ddpg.load_checkpoint(ck)?;
        let state: TrainerState = serde_json::from_value(
            ck.state
                .clone()
                .ok_or_else(|| RlError::Checkpoint("no trainer state".into()))?,
        )
        .map_err(|e| RlError::Checkpoint(e.to_string()))?;
        t.buffer = ReplayBuffer::from_record(&state.buffer)?;
        t.noise = ChaCha8Rng::from_seed(state.noise_seed);
        t.noise.set_stream(7);
        t.noise
            .set_word_pos(state.noise_word_pos.parse().map_err(|_| RlError::Checkpoint("noise position".into()))?);
        t.updates_done = state.updates_done;
        t.episodes_done = state.episodes_done;
        t.next_checkpoint = state.next_checkpoint;
        t.pending = state.pending;
        t.log = state.log;
        if let Some(score) = state.best_eval {
            let mut store = t.ddpg.actor.store.clone();
            ck.load_store(BEST_ACTOR, &mut store, None)?;
            t.best = Some((score, store));
        }
        Ok(t)
    }

    pub fn updates_done(&self) -> usize {
        self.updates_done
    }

    pub fn episodes_done(&self) -> u64 {
        self.episodes_done
    }

    pub fn log(&self) -> &[LogRow] {
        &self.log
    }

    /// Best evaluation mean seen so far and the actor that scored it.
    pub fn best(&self) -> Option<(f64, &ParamStore)> {
        self.best.as_ref().map(|(s, p)| (*s, p))
    }

    pub fn buffer_len(&self) -> usize {
        self.buffer.len()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(CHECKPOINT_KIND);
        for (k, v) in self.config.pairs() {
            ck.meta.insert(k.to_string(), v);
        }
        self.ddpg.write_checkpoint(&mut ck);
        if let Some((_, store)) = &self.best {
            ck.push_store(BEST_ACTOR, store, None);
        }
        let state = TrainerState {
            updates_done: self.updates_done,
            episodes_done: self.episodes_done,
            noise_seed: self.noise.get_seed(),
            noise_word_pos: self.noise.get_word_pos().to_string(),
            next_checkpoint: self.next_checkpoint,
            pending: self.pending.clone(),
            log: self.log.clone(),
            buffer: self.buffer.to_record(),
            best_eval: self.best.as_ref().map(|b| b.0),
        };
        ck.state = Some(serde_json::to_value(state).expect("trainer state serializes"));
        ck
    }

    /// Trains until the update budget is met at an episode boundary.
    /// `on_checkpoint` receives each periodic checkpoint.
    pub fn run(&mut self, mut on_checkpoint: impl FnMut(&Checkpoint) -> Result<(), RlError>) -> Result<(), RlError> {
        let spec = train_spec(&self.config);
        while self.updates_done < self.config.updates {
            if self.config.checkpoint_every > 0 && self.updates_done >= self.next_checkpoint {
                while self.next_checkpoint <= self.updates_done {
                    self.next_checkpoint += self.config.checkpoint_every;
                }
                on_checkpoint(&self.checkpoint())?;
            }
            self.episode(&spec)?;
        }
        Ok(())
    }

    fn episode(&mut self, spec: &GeneratorSpec) -> Result<(), RlError> {
        let index = self.episodes_done;
        let seed = spec.seed.wrapping_add(index);
        let numerical = |e: RlError| match e {
            RlError::Admm(a) => RlError::Numerical {
                seed,
                message: a.to_string(),
            },
            other => other,
        };
        let mut obs = self.env.reset_sampled(spec, index).map_err(numerical)?;
        let mut steps = 0usize;
        loop {
            let mut action = self.ddpg.actor.log10_rho(&[&obs])?;
            for a in &mut action {
                let eps: f64 = StandardNormal.sample(&mut self.noise);
                *a = (*a + self.config.noise_std * eps).clamp(-LOG_RHO_BOUND, LOG_RHO_BOUND);
            }
            let rho: Vec<f64> = action.iter().map(|a| 10f64.powf(*a)).collect();
            let out = self.env.step(&rho).map_err(numerical)?;
            steps += 1;
            self.buffer.push(Transition {
                obs,
                action,
                reward: out.reward,
                next_obs: out.observation.clone(),
                done: out.converged,
            });
            if self.buffer.len() >= self.config.warmup.max(self.config.batch_size) {
                let batch: Vec<Transition> = self
                    .buffer
                    .sample(self.config.batch_size)?
                    .into_iter()
                    .cloned()
                    .collect();
                let refs: Vec<&Transition> = batch.iter().collect();
                let stats = self.ddpg.update(&refs)?;
                self.updates_done += 1;
                self.pending.critic_sum += stats.critic_loss;
                self.pending.actor_sum += stats.actor_loss;
                self.pending.updates += 1;
                if self.updates_done % self.config.log_every == 0 {
                    self.emit_log_row()?;
                }
            }
            if out.done {
                break;
            }
            obs = out.observation;
        }
        self.episodes_done += 1;
        self.pending.episode_len_sum += steps;
        self.pending.episodes += 1;
        Ok(())
    }

    fn emit_log_row(&mut self) -> Result<(), RlError> {
        let p = std::mem::take(&mut self.pending);
        let eval = if self.config.eval_instances > 0 {
            let res = evaluate_actor(
                &self.ddpg.actor,
                &eval_spec(&self.config),
                self.config.eval_instances,
                &env_config(&self.config).solver_settings(),
            )?;
            let mean = res.iter().map(|r| r.0 as f64).sum::<f64>() / res.len() as f64;
            if self.best.as_ref().map_or(true, |b| mean < b.0) {
                self.best = Some((mean, self.ddpg.actor.store.clone()));
            }
            Some(mean)
        } else {
            None
        };
        self.log.push(LogRow {
            epoch: self.updates_done,
            critic_loss: p.critic_sum / p.updates.max(1) as f64,
            actor_loss: p.actor_sum / p.updates.max(1) as f64,
            mean_episode_len: (p.episodes > 0).then(|| p.episode_len_sum as f64 / p.episodes as f64),
            eval_mean_iterations: eval,
        });
        Ok(())
    }
}
