//! Deterministic policy gradient with target networks.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::replay::Transition;
use super::RlError;
use crate::nn::{Adam, Checkpoint, ParamStore, Tape};
use crate::policy::{CaAdmmActor, CaAdmmConfig, CaAdmmCritic, Observation, ObservationBatch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdpgConfig {
    pub gamma: f64,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
}

/// `θ' ← τθ + (1−τ)θ'`.
pub fn polyak_update(target: &mut ParamStore, online: &ParamStore, tau: f64) -> Result<(), RlError> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(RlError::InvalidConfig(format!("tau {tau} not in [0, 1]")));
    }
    target.polyak_update(online, tau)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Ddpg {
    pub config: DdpgConfig,
    pub actor: CaAdmmActor,
    pub critic: CaAdmmCritic,
    pub target_actor: CaAdmmActor,
    pub target_critic: CaAdmmCritic,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
}

fn column(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((v.len(), 1), v.to_vec()).expect("column shape")
}

impl Ddpg {
    /// Online networks from `seed`; targets start as exact copies.
    pub fn new(net: CaAdmmConfig, config: DdpgConfig, seed: u64) -> Result<Self, RlError> {
        let actor = CaAdmmActor::new(net.clone(), seed)?;
        let critic = CaAdmmCritic::new(net, seed.wrapping_add(1))?;
        let actor_opt = Adam::new(&actor.store, config.actor_lr);
        let critic_opt = Adam::new(&critic.store, config.critic_lr);
        Ok(Self {
            config,
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
            actor_opt,
            critic_opt,
        })
    }

    /// `y = r + γ(1 − d) Q'(s', π'(s'))`.
    pub fn targets(&self, batch: &[&Transition]) -> Result<Vec<f64>, RlError> {
        let next: Vec<&Observation> = batch.iter().map(|t| &t.next_obs).collect();
        let nb = ObservationBatch::new(&next)?;
        let mut tape = Tape::new();
        let a = self.target_actor.net.forward(&mut tape, &self.target_actor.store, &nb)?;
        let q = self.target_critic.net.forward(&mut tape, &self.target_critic.store, &nb, a)?;
        let q = tape.value(q);
        Ok(batch
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let boot = if t.done { 0.0 } else { self.config.gamma * q[[i, 0]] };
                t.reward + boot
            })
            .collect())
    }

    /// One critic and one actor step on `batch`, then target tracking.
    ///
    /// Both losses are taken on the same forward pass of the critic, so the
    /// actor ascends the critic as it was before this step.
    pub fn update(&mut self, batch: &[&Transition]) -> Result<UpdateStats, RlError> {
        if batch.is_empty() {
            return Err(RlError::InvalidConfig("empty batch".into()));
        }
        let y = self.targets(batch)?;
        let obs: Vec<&Observation> = batch.iter().map(|t| &t.obs).collect();
        let ob = ObservationBatch::new(&obs)?;
        let actions: Vec<f64> = batch.iter().flat_map(|t| t.action.iter().copied()).collect();
        if actions.len() != ob.num_dual() {
            return Err(RlError::ShapeMismatch(format!(
                "{} action entries for {} dual nodes",
                actions.len(),
                ob.num_dual()
            )));
        }
        let critic = &self.critic;
        let actor = &self.actor;
        let mut tape = Tape::new();
        let ctx = critic.net.context(&mut tape, &critic.store, &ob)?;
        let a = tape.constant(column(&actions));
        let q = critic.net.forward_with_context(&mut tape, &critic.store, &ob, a, ctx)?;
        let yv = tape.constant(column(&y));
        let diff = tape.sub(q, yv)?;
        let sq = tape.mul(diff, diff)?;
        let critic_loss = tape.mean(sq);

        let frozen = ctx.map(|(p, d)| {
            let p = tape.value(p).clone();
            let d = tape.value(d).clone();
            (tape.constant(p), tape.constant(d))
        });
        let pi = actor.net.forward(&mut tape, &actor.store, &ob)?;
        let q_pi = critic.net.forward_with_context(&mut tape, &critic.store, &ob, pi, frozen)?;
        let mean_q = tape.mean(q_pi);
        let actor_loss = tape.scale(mean_q, -1.0);

        let stats = UpdateStats {
            critic_loss: tape.value(critic_loss)[[0, 0]],
            actor_loss: tape.value(actor_loss)[[0, 0]],
        };
        if !stats.critic_loss.is_finite() || !stats.actor_loss.is_finite() {
            return Err(RlError::Diverged(format!(
                "non-finite loss (critic {}, actor {})",
                stats.critic_loss, stats.actor_loss
            )));
        }
        let gc = tape.backward(critic_loss)?;
        let ga = tape.backward(actor_loss)?;
        self.critic.store.zero_grad();
        tape.accumulate(&gc, &mut self.critic.store);
        self.actor.store.zero_grad();
        tape.accumulate(&ga, &mut self.actor.store);
        drop(tape);
        self.critic_opt.step(&mut self.critic.store)?;
        self.actor_opt.step(&mut self.actor.store)?;
        polyak_update(&mut self.target_critic.store, &self.critic.store, self.config.tau)?;
        polyak_update(&mut self.target_actor.store, &self.actor.store, self.config.tau)?;
        Ok(stats)
    }

    pub fn write_checkpoint(&self, ck: &mut Checkpoint) {
        ck.push_store("actor", &self.actor.store, Some(&self.actor_opt));
        ck.push_store("critic", &self.critic.store, Some(&self.critic_opt));
        ck.push_store("target_actor", &self.target_actor.store, None);
        ck.push_store("target_critic", &self.target_critic.store, None);
    }

    pub fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<(), RlError> {
        ck.load_store("actor", &mut self.actor.store, Some(&mut self.actor_opt))?;
        ck.load_store("critic", &mut self.critic.store, Some(&mut self.critic_opt))?;
        ck.load_store("target_actor", &mut self.target_actor.store, None)?;
        ck.load_store("target_critic", &mut self.target_critic.store, None)?;
        Ok(())
    }
}
