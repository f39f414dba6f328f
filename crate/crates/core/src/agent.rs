//! Deterministic actor-critic learning over EKF information states.
//!
//! The actor maps the vectorized information state to a saturated control;
//! the critic scores (information state, control) pairs. Every environment
//! step stores one [`Transition`] and, once the replay buffer holds a full
//! minibatch, runs one critic regression step towards the one-step
//! bootstrapped target followed by one policy-gradient ascent step on the
//! actor, where the policy gradient is the critic's control gradient chained
//! through the actor.

use log::warn;
use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::filter::{feature_len, vectorize, InformationState};
use crate::model::PlantModel;
use crate::neural::{Activation, Adam, GradientRecord, Mlp};
use crate::objective::{discounted_return, reward, CostWeights};
use crate::sim::{
    closed_loop_step, episode_rng, exploration_rng, init_rng, replay_rng, InitialConditionScheme,
};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub info_state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_info_state: Vec<f64>,
}

/// Fixed-capacity ring of transitions; the oldest entry is overwritten first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: Vec<Transition>,
    next_slot: usize,
    insert_count: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay buffer capacity must be positive");
        ReplayBuffer {
            capacity,
            storage: Vec::with_capacity(capacity.min(1 << 16)),
            next_slot: 0,
            insert_count: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn insert_count(&self) -> u64 {
        self.insert_count
    }

    pub fn push(&mut self, t: Transition) {
        if self.storage.len() < self.capacity {
            self.storage.push(t);
        } else {
            self.storage[self.next_slot] = t;
        }
        self.next_slot = (self.next_slot + 1) % self.capacity;
        self.insert_count += 1;
    }

    /// Stored transitions from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.storage.len() < self.capacity {
            0
        } else {
            self.next_slot
        };
        self.storage[split..].iter().chain(&self.storage[..split])
    }

    /// Uniform sample with replacement.
    pub fn sample<'a, R: Rng + ?Sized>(&'a self, m: usize, rng: &mut R) -> Vec<&'a Transition> {
        if self.storage.is_empty() {
            return Vec::new();
        }
        (0..m)
            .map(|_| &self.storage[rng.random_range(0..self.storage.len())])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DdpgConfig {
    pub minibatch_size: usize,
    pub gamma: f64,
    pub exploration_std_initial: f64,
    pub exploration_std_final: f64,
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub buffer_capacity: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub hidden_units: usize,
    /// Gradient steps per environment step once the buffer is warm.
    pub updates_per_step: usize,
    /// Global gradient-norm limit for both optimizers; `0` disables it.
    pub grad_clip: f64,
    /// Multiplier applied to rewards in the critic's regression target.
    pub reward_scale: f64,
    pub use_target_networks: bool,
    pub target_mix_rate: f64,
    pub initial_condition: InitialConditionScheme,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        DdpgConfig {
            minibatch_size: 64,
            gamma: 0.95,
            exploration_std_initial: 1.0,
            exploration_std_final: 0.1,
            episodes: 300,
            steps_per_episode: 100,
            buffer_capacity: 100_000,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            hidden_units: 64,
            updates_per_step: 1,
            grad_clip: 1.0,
            reward_scale: 1.0,
            use_target_networks: false,
            target_mix_rate: 0.005,
            initial_condition: InitialConditionScheme::default(),
        }
    }
}

impl DdpgConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.minibatch_size == 0 {
            return bad("ddpg.minibatch_size must be positive");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("ddpg.gamma must lie in (0, 1)");
        }
        if !(self.exploration_std_initial >= 0.0 && self.exploration_std_final >= 0.0) {
            return bad("exploration standard deviations must be non-negative");
        }
        if self.steps_per_episode == 0 {
            return bad("ddpg.steps_per_episode must be positive");
        }
        if self.buffer_capacity == 0 {
            return bad("ddpg.buffer_capacity must be positive");
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.hidden_units == 0 {
            return bad("ddpg.hidden_units must be positive");
        }
        if !(self.grad_clip >= 0.0 && self.grad_clip.is_finite()) {
            return bad("ddpg.grad_clip must be finite and non-negative");
        }
        if !(self.reward_scale > 0.0) {
            return bad("ddpg.reward_scale must be positive");
        }
        if !(self.target_mix_rate > 0.0 && self.target_mix_rate <= 1.0) {
            return bad("ddpg.target_mix_rate must lie in (0, 1]");
        }
        if !(self.initial_condition.mean_range >= 0.0 && self.initial_condition.cov_scale > 0.0) {
            return bad("initial_condition needs mean_range >= 0 and cov_scale > 0");
        }
        Ok(())
    }

    /// Linear decay from the initial to the final exploration level.
    pub fn exploration_std(&self, episode: usize) -> f64 {
        if self.episodes <= 1 {
            return self.exploration_std_initial;
        }
        let frac = episode as f64 / (self.episodes - 1) as f64;
        self.exploration_std_initial + frac * (self.exploration_std_final - self.exploration_std_initial)
    }
}

/// `μ_θ(π̂)`.
pub fn act(actor: &Mlp, state: &InformationState) -> Result<DVector<f64>> {
    Ok(DVector::from_vec(actor.forward(&vectorize(state))?))
}

/// `μ_θ(π̂) + η`, `η ~ N(0, std²)`, clamped into the control box.
pub fn act_explore<R: Rng + ?Sized>(
    actor: &Mlp,
    state: &InformationState,
    std: f64,
    rng: &mut R,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
) -> Result<DVector<f64>> {
    let mut u = act(actor, state)?;
    for (i, ui) in u.iter_mut().enumerate() {
        let eta: f64 = rng.sample(StandardNormal);
        *ui = (*ui + std * eta).clamp(lower[i], upper[i]);
    }
    Ok(u)
}

fn critic_input(features: &[f64], action: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(features.len() + action.len());
    v.extend_from_slice(features);
    v.extend_from_slice(action);
    v
}

/// Networks and optimizers of one learner.
#[derive(Debug, Clone)]
pub struct DdpgAgent {
    pub actor: Mlp,
    pub critic: Mlp,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
    pub target_actor: Option<Mlp>,
    pub target_critic: Option<Mlp>,
}

/// Actor with `n + n(n+1)/2` inputs, critic with the control appended.
pub fn build_networks<R: Rng + ?Sized>(
    model: &PlantModel,
    hidden_units: usize,
    rng: &mut R,
) -> Result<(Mlp, Mlp)> {
    let features = feature_len(model.state_dim());
    let m = model.input_dim();
    let scale = actor_output_scale(model)?;
    let actor = Mlp::init(
        &[features, hidden_units, m],
        Activation::Relu,
        Activation::Tanh,
        scale,
        rng,
    )?;
    let critic = Mlp::init(
        &[features + m, hidden_units, 1],
        Activation::Relu,
        Activation::Identity,
        1.0,
        rng,
    )?;
    Ok((actor, critic))
}

/// Half-width of the control box; the box must be symmetric and uniform.
pub fn actor_output_scale(model: &PlantModel) -> Result<f64> {
    let hi = model.input_upper()[0];
    let symmetric = model
        .input_lower()
        .iter()
        .zip(model.input_upper().iter())
        .all(|(lo, up)| *up == hi && *lo == -hi);
    if symmetric {
        Ok(hi)
    } else {
        Err(Error::Config(
            "the saturated actor needs a symmetric control box with equal bounds".into(),
        ))
    }
}

impl DdpgAgent {
    pub fn new(model: &PlantModel, cfg: &DdpgConfig, seed: u64) -> Result<Self> {
        let mut rng = init_rng(seed);
        let (actor, critic) = build_networks(model, cfg.hidden_units, &mut rng)?;
        Ok(Self::from_networks(actor, critic, cfg))
    }

    pub fn from_networks(actor: Mlp, critic: Mlp, cfg: &DdpgConfig) -> Self {
        let mut actor_opt = Adam::new(&actor, cfg.actor_lr);
        let mut critic_opt = Adam::new(&critic, cfg.critic_lr);
        let clip = (cfg.grad_clip > 0.0).then_some(cfg.grad_clip);
        actor_opt.clip_norm = clip;
        critic_opt.clip_norm = clip;
        let (target_actor, target_critic) = if cfg.use_target_networks {
            (Some(actor.clone()), Some(critic.clone()))
        } else {
            (None, None)
        };
        DdpgAgent {
            actor,
            critic,
            actor_opt,
            critic_opt,
            target_actor,
            target_critic,
        }
    }

    /// One critic regression step; returns the loss before the step.
    pub fn critic_update(&mut self, batch: &[&Transition], gamma: f64, reward_scale: f64) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Config("critic update needs a non-empty batch".into()));
        }
        let target_actor = self.target_actor.as_ref().unwrap_or(&self.actor);
        let target_critic = self.target_critic.as_ref().unwrap_or(&self.critic);
        let targets = batch
            .iter()
            .map(|t| td_target(target_actor, target_critic, t, gamma, reward_scale))
            .collect::<Result<Vec<_>>>()?;
        let (loss, grads) = critic_loss_and_grad(&self.critic, &targets, batch)?;
        self.critic_opt.step(&mut self.critic, &grads.params);
        Ok(loss)
    }

    pub fn actor_update(&mut self, batch: &[&Transition]) -> Result<f64> {
        actor_update(&mut self.actor, &mut self.actor_opt, &self.critic, batch)
    }

    fn soft_update_targets(&mut self, tau: f64) {
        if let Some(t) = self.target_actor.as_mut() {
            t.soft_update_from(&self.actor, tau);
        }
        if let Some(t) = self.target_critic.as_mut() {
            t.soft_update_from(&self.critic, tau);
        }
    }
}

/// TD target `z = s·r + γ Q'(π̂', μ'(π̂'))` for one transition.
pub fn td_target(
    target_actor: &Mlp,
    target_critic: &Mlp,
    t: &Transition,
    gamma: f64,
    reward_scale: f64,
) -> Result<f64> {
    let next_u = target_actor.forward(&t.next_info_state)?;
    let q_next = target_critic.forward(&critic_input(&t.next_info_state, &next_u))?[0];
    Ok(reward_scale * t.reward + gamma * q_next)
}

/// Mean squared TD error of `critic` on `batch` and its parameter gradient.
/// Targets are held fixed.
pub fn critic_loss_and_grad(
    critic: &Mlp,
    targets: &[f64],
    batch: &[&Transition],
) -> Result<(f64, GradientRecord)> {
    check_dim("critic targets", batch.len(), targets.len())?;
    let m = batch.len() as f64;
    let mut grads = GradientRecord::zeros_like(critic);
    let mut loss = 0.0;
    for (t, z) in batch.iter().zip(targets) {
        let input = critic_input(&t.info_state, &t.action);
        let q = critic.forward(&input)?[0];
        let err = q - z;
        loss += err * err / m;
        if err != 0.0 {
            critic.backward_accumulate(&input, &[1.0], &mut grads.params, 2.0 * err / m)?;
        }
    }
    Ok((loss, grads))
}

pub fn critic_update(
    critic: &mut Mlp,
    opt: &mut Adam,
    target_actor: &Mlp,
    target_critic: &Mlp,
    batch: &[&Transition],
    gamma: f64,
    reward_scale: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Config("critic update needs a non-empty batch".into()));
    }
    let targets = batch
        .iter()
        .map(|t| td_target(target_actor, target_critic, t, gamma, reward_scale))
        .collect::<Result<Vec<_>>>()?;
    let (loss, grads) = critic_loss_and_grad(critic, &targets, batch)?;
    opt.step(critic, &grads.params);
    Ok(loss)
}

/// Sample-average deterministic policy gradient
/// `(1/M) Σ ∇_u Q(π̂_i, u)|_{u=μ(π̂_i)} ∇_θ μ(π̂_i)`.
pub fn policy_gradient(actor: &Mlp, critic: &Mlp, batch: &[&Transition]) -> Result<GradientRecord> {
    let m = batch.len() as f64;
    let n_features = actor.input_dim();
    let mut grads = GradientRecord::zeros_like(actor);
    for t in batch {
        let u = actor.forward(&t.info_state)?;
        let dq = critic.input_gradient(&critic_input(&t.info_state, &u), &[1.0])?;
        actor.backward_accumulate(&t.info_state, &dq[n_features..], &mut grads.params, 1.0 / m)?;
    }
    Ok(grads)
}

/// One ascent step on the critic's value of the actor's controls; returns
/// the norm of the policy gradient.
pub fn actor_update(actor: &mut Mlp, opt: &mut Adam, critic: &Mlp, batch: &[&Transition]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Config("actor update needs a non-empty batch".into()));
    }
    let mut grads = policy_gradient(actor, critic, batch)?;
    let norm = grads.param_norm();
    grads.scale(-1.0);
    opt.step(actor, &grads.params);
    Ok(norm)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeFailure {
    pub episode: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    /// Discounted return `Σ γᵏ r_k` of each episode.
    pub returns: Vec<f64>,
    pub failures: Vec<EpisodeFailure>,
    pub critic_losses: Vec<f64>,
}

/// Trains a fresh agent; everything is derived from `seed`.
pub fn train(
    model: &PlantModel,
    weights: &CostWeights,
    cfg: &DdpgConfig,
    seed: u64,
) -> Result<(DdpgAgent, TrainLog)> {
    cfg.validate()?;
    let mut agent = DdpgAgent::new(model, cfg, seed)?;
    let log = train_agent(&mut agent, model, weights, cfg, seed)?;
    Ok((agent, log))
}

/// Runs the training loop on an existing agent.
pub fn train_agent(
    agent: &mut DdpgAgent,
    model: &PlantModel,
    weights: &CostWeights,
    cfg: &DdpgConfig,
    seed: u64,
) -> Result<TrainLog> {
    cfg.validate()?;
    check_dim("actor input", feature_len(model.state_dim()), agent.actor.input_dim())?;
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let mut sampler = replay_rng(seed);
    let mut log = TrainLog::default();
    let (lower, upper) = (model.input_lower().clone(), model.input_upper().clone());

    for episode in 0..cfg.episodes {
        let mut env = episode_rng(seed, episode);
        let mut explore = exploration_rng(seed, episode);
        let std = cfg.exploration_std(episode);
        let (mut info, mut x) = cfg.initial_condition.sample(model, &mut env);
        let mut rewards = Vec::with_capacity(cfg.steps_per_episode);
        let mut loss_acc = (0.0, 0usize);

        for k in 0..cfg.steps_per_episode {
            let u = act_explore(&agent.actor, &info, std, &mut explore, &lower, &upper)?;
            let step = match closed_loop_step(model, &x, &info, &u, &mut env) {
                Ok(s) => s,
                Err(e) => {
                    let e = e.at_step(k);
                    warn!("episode {episode} aborted: {e}");
                    log.failures.push(EpisodeFailure {
                        episode,
                        reason: e.to_string(),
                    });
                    break;
                }
            };
            let r = reward(weights, &info, &u);
            let features = vectorize(&info);
            let next_features = vectorize(&step.next_info);
            buffer.push(Transition {
                info_state: features,
                action: u.as_slice().to_vec(),
                reward: r,
                next_info_state: next_features,
            });
            rewards.push(r);

            if buffer.len() >= cfg.minibatch_size {
                for _ in 0..cfg.updates_per_step {
                    let batch = buffer.sample(cfg.minibatch_size, &mut sampler);
                    let loss = agent.critic_update(&batch, cfg.gamma, cfg.reward_scale)?;
                    agent.actor_update(&batch)?;
                    agent.soft_update_targets(cfg.target_mix_rate);
                    loss_acc.0 += loss;
                    loss_acc.1 += 1;
                }
                if !(agent.actor.params_finite() && agent.critic.params_finite()) {
                    return Err(Error::Numerical {
                        step: Some(k),
                        detail: format!("non-finite network parameter in episode {episode}"),
                    });
                }
            }
            info = step.next_info;
            x = step.next_state;
        }
        log.returns.push(discounted_return(weights, &rewards));
        log.critic_losses.push(if loss_acc.1 > 0 {
            loss_acc.0 / loss_acc.1 as f64
        } else {
            f64::NAN
        });
    }
    Ok(log)
}
