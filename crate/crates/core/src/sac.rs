//! Soft Actor-Critic, value-network variant.
//!
//! The actor is a tanh-squashed Gaussian scaled to `[-action_scale,
//! action_scale]`. Two Q critics see the observation concatenated with the
//! action divided by `action_scale`. A state-value network and its Polyak
//! averaged copy provide the bootstrap target for the critics. The
//! temperature `alpha` is fixed.

use std::borrow::Cow;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::PWM_LIMIT;
use crate::nn::{AdamConfig, ForwardCache, Gradients, MlpNet, MlpSpec, NnError};

pub const AGENT_CHECKPOINT_VERSION: u32 = 1;

/// Added inside the squash correction `log(1 - tanh(u)^2 + eps)`.
pub const SQUASH_EPS: f64 = 1e-6;

const HALF_LOG_TAU: f64 = 0.918_938_533_204_672_8; // 0.5 * ln(2π)

#[derive(Debug, Error)]
pub enum SacError {
    #[error("replay buffer holds {have} transitions, need {need}")]
    InsufficientData { have: usize, need: usize },
    #[error("cannot sample from an empty replay buffer")]
    EmptyBuffer,
    #[error("invalid transition: {0}")]
    InvalidTransition(String),
    #[error("non-finite {which} loss; batch summary: {summary}")]
    NonFiniteLoss { which: &'static str, summary: String },
    #[error("non-finite policy output")]
    NonFinitePolicy,
    #[error("invalid SAC config: {0}")]
    InvalidConfig(String),
    #[error("observation has {got} entries, expected {expected}")]
    ObsShape { expected: usize, got: usize },
    #[error("invalid agent checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub gamma: f64,
    pub batch_size: usize,
    /// Entropy temperature.
    pub alpha: f64,
    /// Target smoothing coefficient.
    pub tau: f64,
    /// Gradient updates performed after every `env_steps_per_epoch` environment steps.
    pub updates_per_epoch: usize,
    pub env_steps_per_epoch: usize,
    pub action_scale: f64,
    pub log_std_min: f64,
    pub log_std_max: f64,
    pub buffer_capacity: usize,
    /// Uniform-random environment steps before the policy takes over.
    pub warmup_steps: usize,
    /// Per-dimension factor applied to observations before every network;
    /// empty means identity.
    pub obs_scale: Vec<f64>,
    pub adam: AdamConfig,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            batch_size: 4000,
            alpha: 0.2,
            tau: 0.005,
            updates_per_epoch: 1,
            env_steps_per_epoch: 1,
            action_scale: 100.0,
            log_std_min: -20.0,
            log_std_max: 2.0,
            buffer_capacity: 1_000_000,
            warmup_steps: 10_000,
            obs_scale: Vec::new(),
            adam: AdamConfig::default(),
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<(), SacError> {
        let bad = |m: &str| Err(SacError::InvalidConfig(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be > 0");
        }
        if self.batch_size == 0 || self.batch_size > self.buffer_capacity {
            return bad("batch_size must be in 1..=buffer_capacity");
        }
        if self.env_steps_per_epoch == 0 {
            return bad("env_steps_per_epoch must be >= 1");
        }
        if !(self.action_scale > 0.0 && self.action_scale <= PWM_LIMIT) {
            return bad("action_scale must lie in (0, 100]");
        }
        if !(self.log_std_min < self.log_std_max) {
            return bad("log_std_min must be below log_std_max");
        }
        if self.obs_scale.iter().any(|v| !(v.is_finite() && *v != 0.0)) {
            return bad("obs_scale entries must be finite and nonzero");
        }
        self.adam.validate()?;
        Ok(())
    }
}

/// One `(s, a, r, s', done)` record. `done` marks failure only, never a time limit.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
}

/// Transitions copied out of the buffer, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub obs: Vec<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_obs: Vec<f64>,
    pub dones: Vec<f64>,
}

/// Fixed-capacity FIFO ring of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    obs_dim: usize,
    act_dim: usize,
    capacity: usize,
    len: usize,
    head: usize,
    obs: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next_obs: Vec<f64>,
    dones: Vec<f64>,
}

impl ReplayBuffer {
    pub fn new(obs_dim: usize, act_dim: usize, capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            obs_dim,
            act_dim,
            capacity,
            len: 0,
            head: 0,
            obs: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_obs: Vec::new(),
            dones: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) -> Result<(), SacError> {
        if t.obs.len() != self.obs_dim || t.next_obs.len() != self.obs_dim || t.action.len() != self.act_dim {
            return Err(SacError::InvalidTransition("wrong dimensions".into()));
        }
        let finite = t.obs.iter().chain(&t.next_obs).chain(&t.action).all(|v| v.is_finite()) && t.reward.is_finite();
        if !finite {
            return Err(SacError::InvalidTransition("non-finite entry".into()));
        }
        if t.action.iter().any(|a| a.abs() > PWM_LIMIT) {
            return Err(SacError::InvalidTransition("action outside [-100, 100]".into()));
        }
        let done = if t.done { 1.0 } else { 0.0 };
        if self.len < self.capacity {
            self.obs.extend_from_slice(&t.obs);
            self.actions.extend_from_slice(&t.action);
            self.rewards.push(t.reward);
            self.next_obs.extend_from_slice(&t.next_obs);
            self.dones.push(done);
            self.len += 1;
        } else {
            let i = self.head;
            let (o, a) = (self.obs_dim, self.act_dim);
            self.obs[i * o..(i + 1) * o].copy_from_slice(&t.obs);
            self.actions[i * a..(i + 1) * a].copy_from_slice(&t.action);
            self.rewards[i] = t.reward;
            self.next_obs[i * o..(i + 1) * o].copy_from_slice(&t.next_obs);
            self.dones[i] = done;
        }
        self.head = (self.head + 1) % self.capacity;
        Ok(())
    }

    /// The `k`-th oldest stored transition.
    pub fn get(&self, k: usize) -> Option<Transition> {
        if k >= self.len {
            return None;
        }
        let i = if self.len < self.capacity {
            k
        } else {
            (self.head + k) % self.capacity
        };
        let (o, a) = (self.obs_dim, self.act_dim);
        Some(Transition {
            obs: self.obs[i * o..(i + 1) * o].to_vec(),
            action: self.actions[i * a..(i + 1) * a].to_vec(),
            reward: self.rewards[i],
            next_obs: self.next_obs[i * o..(i + 1) * o].to_vec(),
            done: self.dones[i] != 0.0,
        })
    }

    /// Uniform storage-slot indices, with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<usize>, SacError> {
        if self.len == 0 {
            return Err(SacError::EmptyBuffer);
        }
        Ok((0..batch_size).map(|_| rng.gen_range(0..self.len)).collect())
    }

    pub fn gather(&self, idx: &[usize]) -> Batch {
        let (o, a) = (self.obs_dim, self.act_dim);
        let mut b = Batch {
            size: idx.len(),
            obs: Vec::with_capacity(idx.len() * o),
            actions: Vec::with_capacity(idx.len() * a),
            rewards: Vec::with_capacity(idx.len()),
            next_obs: Vec::with_capacity(idx.len() * o),
            dones: Vec::with_capacity(idx.len()),
        };
        for &i in idx {
            b.obs.extend_from_slice(&self.obs[i * o..(i + 1) * o]);
            b.actions.extend_from_slice(&self.actions[i * a..(i + 1) * a]);
            b.rewards.push(self.rewards[i]);
            b.next_obs.extend_from_slice(&self.next_obs[i * o..(i + 1) * o]);
            b.dones.push(self.dones[i]);
        }
        b
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Batch, SacError> {
        let idx = self.sample_indices(batch_size, rng)?;
        Ok(self.gather(&idx))
    }
}

/// Log density of `action = scale * tanh(u)` under the squashed Gaussian,
/// for `u = mean + exp(log_std) * noise`.
pub fn squashed_log_prob(mean: &[f64], log_std: &[f64], u: &[f64], scale: f64) -> f64 {
    let log_scale = scale.ln();
    mean.iter()
        .zip(log_std)
        .zip(u)
        .map(|((m, ls), u)| {
            let eps = (u - m) / ls.exp();
            let t = u.tanh();
            -0.5 * eps * eps - ls - HALF_LOG_TAU - (1.0 - t * t + SQUASH_EPS).ln() - log_scale
        })
        .sum()
}

/// Losses from one update and the policy entropy estimate `-mean(log π)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    pub q1_loss: f64,
    pub q2_loss: f64,
    pub value_loss: f64,
    pub policy_loss: f64,
    pub entropy: f64,
}

/// Gradients for every trained network from a single batch.
#[derive(Debug, Clone)]
pub struct UpdateGradients {
    pub q1: Gradients,
    pub q2: Gradients,
    pub value: Gradients,
    pub policy: Gradients,
}

/// Reparameterized policy sample for a batch.
struct PolicySample {
    cache: ForwardCache,
    /// tanh(u), the action in [-1, 1].
    squashed: Vec<f64>,
    log_prob: Vec<f64>,
    std: Vec<f64>,
    /// log_std fell inside the clamp bounds (gradient passes through).
    log_std_free: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SacAgent {
    obs_dim: usize,
    act_dim: usize,
    pub config: SacConfig,
    pub policy: MlpNet,
    pub q1: MlpNet,
    pub q2: MlpNet,
    pub value: MlpNet,
    pub target_value: MlpNet,
    pub rng: ChaCha8Rng,
}

impl SacAgent {
    /// Agent with the standard architectures: policy 64-64 tanh, critics 256-256 relu.
    pub fn new(obs_dim: usize, act_dim: usize, config: SacConfig, seed: u64) -> Result<Self, SacError> {
        Self::from_specs(
            MlpSpec::policy(obs_dim, act_dim),
            MlpSpec::q_function(obs_dim, act_dim),
            MlpSpec::value(obs_dim),
            config,
            seed,
        )
    }

    /// Agent with custom networks. The policy must output `2 * act_dim`
    /// values, the critic take `obs_dim + act_dim` inputs, and the value net
    /// take `obs_dim` inputs; all with a single output for critics.
    pub fn from_specs(
        policy: MlpSpec,
        q: MlpSpec,
        value: MlpSpec,
        config: SacConfig,
        seed: u64,
    ) -> Result<Self, SacError> {
        config.validate()?;
        let obs_dim = policy.input_dim();
        let act2 = policy.output_dim();
        if act2 % 2 != 0 {
            return Err(SacError::InvalidConfig("policy output width must be even".into()));
        }
        let act_dim = act2 / 2;
        if q.input_dim() != obs_dim + act_dim || q.output_dim() != 1 {
            return Err(SacError::InvalidConfig("critic shape does not match policy".into()));
        }
        if value.input_dim() != obs_dim || value.output_dim() != 1 {
            return Err(SacError::InvalidConfig("value shape does not match policy".into()));
        }
        if !config.obs_scale.is_empty() && config.obs_scale.len() != obs_dim {
            return Err(SacError::InvalidConfig(format!(
                "obs_scale has {} entries, observation has {obs_dim}",
                config.obs_scale.len()
            )));
        }
        let mut seeds = ChaCha8Rng::seed_from_u64(seed);
        let policy = MlpNet::init(policy, seeds.gen())?;
        let q1 = MlpNet::init(q.clone(), seeds.gen())?;
        let q2 = MlpNet::init(q, seeds.gen())?;
        let value = MlpNet::init(value, seeds.gen())?;
        let target_value = value.clone();
        let rng = ChaCha8Rng::seed_from_u64(seeds.gen());
        Ok(Self {
            obs_dim,
            act_dim,
            config,
            policy,
            q1,
            q2,
            value,
            target_value,
            rng,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    fn check_obs(&self, obs: &[f64]) -> Result<(), SacError> {
        if obs.len() != self.obs_dim {
            return Err(SacError::ObsShape {
                expected: self.obs_dim,
                got: obs.len(),
            });
        }
        Ok(())
    }

    /// Observations as the networks see them.
    fn scaled<'a>(&self, obs: &'a [f64]) -> Cow<'a, [f64]> {
        let sc = &self.config.obs_scale;
        if sc.is_empty() {
            Cow::Borrowed(obs)
        } else {
            Cow::Owned(obs.iter().enumerate().map(|(i, v)| v * sc[i % self.obs_dim]).collect())
        }
    }

    fn policy_sample(&self, obs: &[f64], batch: usize, noise: &[f64]) -> Result<PolicySample, SacError> {
        let a = self.act_dim;
        let cache = self.policy.forward_batch(obs, batch)?;
        let out = cache.output();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(SacError::NonFinitePolicy);
        }
        let log_scale = self.config.action_scale.ln();
        let mut squashed = vec![0.0; batch * a];
        let mut log_prob = vec![0.0; batch];
        let mut stds = vec![0.0; batch * a];
        let mut log_std_free = vec![false; batch * a];
        for b in 0..batch {
            let row = &out[b * 2 * a..(b + 1) * 2 * a];
            let mut lp = 0.0;
            for i in 0..a {
                let k = b * a + i;
                let raw = row[a + i];
                let ls = raw.clamp(self.config.log_std_min, self.config.log_std_max);
                log_std_free[k] = raw == ls;
                let std = ls.exp();
                let e = noise[k];
                let u = row[i] + std * e;
                let t = u.tanh();
                stds[k] = std;
                squashed[k] = t;
                lp += -0.5 * e * e - ls - HALF_LOG_TAU - (1.0 - t * t + SQUASH_EPS).ln() - log_scale;
            }
            log_prob[b] = lp;
        }
        Ok(PolicySample {
            cache,
            squashed,
            log_prob,
            std: stds,
            log_std_free,
        })
    }

    /// Stochastic action in `(-scale, scale)` and its log density.
    pub fn sample_action<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<(Vec<f64>, f64), SacError> {
        self.check_obs(obs)?;
        let noise: Vec<f64> = (0..self.act_dim).map(|_| rng.sample(StandardNormal)).collect();
        let s = self.policy_sample(&self.scaled(obs), 1, &noise)?;
        let scale = self.config.action_scale;
        Ok((s.squashed.iter().map(|t| scale * t).collect(), s.log_prob[0]))
    }

    /// Stochastic action drawn with the agent's own RNG.
    pub fn explore(&mut self, obs: &[f64]) -> Result<(Vec<f64>, f64), SacError> {
        let mut rng = self.rng.clone();
        let out = self.sample_action(obs, &mut rng);
        self.rng = rng;
        out
    }

    /// `scale * tanh(mean)`.
    pub fn act_deterministic(&self, obs: &[f64]) -> Result<Vec<f64>, SacError> {
        self.check_obs(obs)?;
        let out = self.policy.forward(&self.scaled(obs))?;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(SacError::NonFinitePolicy);
        }
        let scale = self.config.action_scale;
        Ok(out[..self.act_dim].iter().map(|m| scale * m.tanh()).collect())
    }

    /// Policy mean and clamped log standard deviation for one observation.
    pub fn policy_distribution(&self, obs: &[f64]) -> Result<(Vec<f64>, Vec<f64>), SacError> {
        self.check_obs(obs)?;
        let out = self.policy.forward(&self.scaled(obs))?;
        let a = self.act_dim;
        let ls = out[a..]
            .iter()
            .map(|v| v.clamp(self.config.log_std_min, self.config.log_std_max))
            .collect();
        Ok((out[..a].to_vec(), ls))
    }

    fn critic_input(&self, obs: &[f64], scaled_actions: &[f64], batch: usize) -> Vec<f64> {
        let (o, a) = (self.obs_dim, self.act_dim);
        let mut x = Vec::with_capacity(batch * (o + a));
        for b in 0..batch {
            x.extend_from_slice(&obs[b * o..(b + 1) * o]);
            x.extend_from_slice(&scaled_actions[b * a..(b + 1) * a]);
        }
        x
    }

    /// Policy loss `mean(alpha * log π − min Q)` and its gradient, with critics frozen.
    fn policy_objective(
        &self,
        obs: &[f64],
        batch: usize,
        noise: &[f64],
    ) -> Result<(f64, Gradients, PolicySample, Vec<f64>), SacError> {
        let a = self.act_dim;
        let alpha = self.config.alpha;
        let inv_b = 1.0 / batch as f64;
        let sample = self.policy_sample(obs, batch, noise)?;
        let x = self.critic_input(obs, &sample.squashed, batch);
        let c1 = self.q1.forward_batch(&x, batch)?;
        let c2 = self.q2.forward_batch(&x, batch)?;
        let mut min_q = vec![0.0; batch];
        let mut sel1 = vec![0.0; batch];
        let mut sel2 = vec![0.0; batch];
        for b in 0..batch {
            let (v1, v2) = (c1.output()[b], c2.output()[b]);
            if v1 <= v2 {
                min_q[b] = v1;
                sel1[b] = 1.0;
            } else {
                min_q[b] = v2;
                sel2[b] = 1.0;
            }
        }
        let g1 = self.q1.input_gradient(&c1, &sel1)?;
        let g2 = self.q2.input_gradient(&c2, &sel2)?;
        let width = self.obs_dim + a;

        let mut loss = 0.0;
        let mut out_grad = vec![0.0; batch * 2 * a];
        for b in 0..batch {
            loss += alpha * sample.log_prob[b] - min_q[b];
            for i in 0..a {
                let k = b * a + i;
                let t = sample.squashed[k];
                let sech2 = 1.0 - t * t;
                let dq_da = g1[b * width + self.obs_dim + i] + g2[b * width + self.obs_dim + i];
                let d_squash = 2.0 * t * sech2 / (sech2 + SQUASH_EPS);
                let du = (alpha * d_squash - dq_da * sech2) * inv_b;
                out_grad[b * 2 * a + i] = du;
                if sample.log_std_free[k] {
                    out_grad[b * 2 * a + a + i] = du * sample.std[k] * noise[k] - alpha * inv_b;
                }
            }
        }
        loss *= inv_b;
        let (grads, _) = self.policy.backward(&sample.cache, &out_grad)?;
        Ok((loss, grads, sample, min_q))
    }

    /// Policy loss and gradient for a batch of observations with fixed noise.
    pub fn policy_loss_and_grad(&self, obs: &[f64], batch: usize, noise: &[f64]) -> Result<(f64, Gradients), SacError> {
        let (loss, g, _, _) = self.policy_objective(&self.scaled(obs), batch, noise)?;
        Ok((loss, g))
    }

    /// All losses and gradients for one batch, given the reparameterization noise.
    pub fn compute_update(&self, batch: &Batch, noise: &[f64]) -> Result<(UpdateStats, UpdateGradients), SacError> {
        let n = batch.size;
        let cfg = &self.config;
        let inv_b = 1.0 / n as f64;
        let batch = &if cfg.obs_scale.is_empty() {
            Cow::Borrowed(batch)
        } else {
            Cow::Owned(Batch {
                obs: self.scaled(&batch.obs).into_owned(),
                next_obs: self.scaled(&batch.next_obs).into_owned(),
                ..batch.clone()
            })
        };

        let v_next = self.target_value.forward_batch(&batch.next_obs, n)?;
        let y: Vec<f64> = (0..n)
            .map(|b| batch.rewards[b] + cfg.gamma * (1.0 - batch.dones[b]) * v_next.output()[b])
            .collect();
        let scaled: Vec<f64> = batch.actions.iter().map(|v| v / cfg.action_scale).collect();
        let x = self.critic_input(&batch.obs, &scaled, n);

        let critic = |net: &MlpNet| -> Result<(f64, Gradients), SacError> {
            let c = net.forward_batch(&x, n)?;
            let mut loss = 0.0;
            let grad: Vec<f64> = c
                .output()
                .iter()
                .zip(&y)
                .map(|(q, t)| {
                    loss += 0.5 * (q - t) * (q - t);
                    (q - t) * inv_b
                })
                .collect();
            let (g, _) = net.backward(&c, &grad)?;
            Ok((loss * inv_b, g))
        };
        let (q1_loss, q1_grad) = critic(&self.q1)?;
        let (q2_loss, q2_grad) = critic(&self.q2)?;

        let (policy_loss, policy_grad, sample, min_q) = self.policy_objective(&batch.obs, n, noise)?;

        let vc = self.value.forward_batch(&batch.obs, n)?;
        let mut value_loss = 0.0;
        let v_grad: Vec<f64> = (0..n)
            .map(|b| {
                let target = min_q[b] - cfg.alpha * sample.log_prob[b];
                let d = vc.output()[b] - target;
                value_loss += 0.5 * d * d;
                d * inv_b
            })
            .collect();
        value_loss *= inv_b;
        let (value_grad, _) = self.value.backward(&vc, &v_grad)?;

        let entropy = -sample.log_prob.iter().sum::<f64>() * inv_b;
        let stats = UpdateStats {
            q1_loss,
            q2_loss,
            value_loss,
            policy_loss,
            entropy,
        };
        for (which, v) in [
            ("q1", q1_loss),
            ("q2", q2_loss),
            ("value", value_loss),
            ("policy", policy_loss),
        ] {
            if !v.is_finite() {
                return Err(SacError::NonFiniteLoss {
                    which,
                    summary: batch_summary(batch),
                });
            }
        }
        Ok((
            stats,
            UpdateGradients {
                q1: q1_grad,
                q2: q2_grad,
                value: value_grad,
                policy: policy_grad,
            },
        ))
    }

    fn draw_noise(&mut self, n: usize) -> Vec<f64> {
        (0..n * self.act_dim).map(|_| self.rng.sample(StandardNormal)).collect()
    }

    /// One gradient step on every network from a uniform batch, then a target update.
    pub fn update(&mut self, buffer: &ReplayBuffer) -> Result<UpdateStats, SacError> {
        let n = self.config.batch_size;
        if buffer.len() < n {
            return Err(SacError::InsufficientData {
                have: buffer.len(),
                need: n,
            });
        }
        let idx = buffer.sample_indices(n, &mut self.rng)?;
        let batch = buffer.gather(&idx);
        let noise = self.draw_noise(n);
        let (stats, grads) = self.compute_update(&batch, &noise)?;
        let adam = self.config.adam;
        self.q1.adam_step(&grads.q1, &adam)?;
        self.q2.adam_step(&grads.q2, &adam)?;
        self.value.adam_step(&grads.value, &adam)?;
        self.policy.adam_step(&grads.policy, &adam)?;
        self.soft_update_targets();
        Ok(stats)
    }

    /// Policy-only gradient step on a fixed set of observations; critics untouched.
    /// Returns the policy loss and the entropy estimate.
    pub fn update_policy_only(&mut self, obs: &[f64], batch: usize) -> Result<(f64, f64), SacError> {
        let noise = self.draw_noise(batch);
        let (loss, grads, sample, _) = self.policy_objective(&self.scaled(obs), batch, &noise)?;
        self.policy.adam_step(&grads, &self.config.adam)?;
        let entropy = -sample.log_prob.iter().sum::<f64>() / batch as f64;
        Ok((loss, entropy))
    }

    /// `target ← (1 − tau)·target + tau·value`.
    pub fn soft_update_targets(&mut self) {
        self.target_value
            .blend_from(&self.value, self.config.tau)
            .expect("value and target share a spec");
    }

    pub fn all_finite(&self) -> bool {
        [&self.policy, &self.q1, &self.q2, &self.value, &self.target_value]
            .iter()
            .all(|n| n.is_finite())
    }

    pub fn to_json(&self) -> String {
        let ck = AgentCheckpoint {
            format_version: AGENT_CHECKPOINT_VERSION,
            config: self.config.clone(),
            policy: self.policy.clone(),
            q1: self.q1.clone(),
            q2: self.q2.clone(),
            value: self.value.clone(),
            target_value: self.target_value.clone(),
            rng: self.rng.clone(),
        };
        serde_json::to_string(&ck).expect("agent serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self, SacError> {
        let ck: AgentCheckpoint = serde_json::from_str(s).map_err(|e| SacError::Checkpoint(e.to_string()))?;
        if ck.format_version != AGENT_CHECKPOINT_VERSION {
            return Err(SacError::Checkpoint(format!(
                "unsupported format version {}",
                ck.format_version
            )));
        }
        ck.config.validate()?;
        if !ck.config.obs_scale.is_empty() && ck.config.obs_scale.len() != ck.policy.spec().input_dim() {
            return Err(SacError::Checkpoint(
                "obs_scale length does not match the policy input".into(),
            ));
        }
        let obs_dim = ck.policy.spec().input_dim();
        let act_dim = ck.policy.spec().output_dim() / 2;
        let shapes_ok = ck.policy.spec().output_dim() == 2 * act_dim
            && ck.q1.spec() == ck.q2.spec()
            && ck.q1.spec().input_dim() == obs_dim + act_dim
            && ck.q1.spec().output_dim() == 1
            && ck.value.spec() == ck.target_value.spec()
            && ck.value.spec().input_dim() == obs_dim
            && ck.value.spec().output_dim() == 1;
        if !shapes_ok {
            return Err(SacError::Checkpoint("network shapes are inconsistent".into()));
        }
        Ok(Self {
            obs_dim,
            act_dim,
            config: ck.config,
            policy: ck.policy,
            q1: ck.q1,
            q2: ck.q2,
            value: ck.value,
            target_value: ck.target_value,
            rng: ck.rng,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct AgentCheckpoint {
    format_version: u32,
    config: SacConfig,
    policy: MlpNet,
    q1: MlpNet,
    q2: MlpNet,
    value: MlpNet,
    target_value: MlpNet,
    rng: ChaCha8Rng,
}

fn batch_summary(b: &Batch) -> String {
    let stats = |v: &[f64]| {
        let finite = v.iter().filter(|x| x.is_finite()).count();
        let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        format!("finite {finite}/{}, max |x| {max:.3e}", v.len())
    };
    format!(
        "size {}; obs [{}]; actions [{}]; rewards [{}]; done count {}",
        b.size,
        stats(&b.obs),
        stats(&b.actions),
        stats(&b.rewards),
        b.dones.iter().filter(|d| **d != 0.0).count()
    )
}
