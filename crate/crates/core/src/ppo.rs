//! PPO on the 6-dim state, rewarded either by the sparse embedding
//! similarity or by the environment's true task reward.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nncore::{
    adam_step, backward_params, checkpoint, forward_mlp, infer, init_stack, AdamConfig, AdamState, LayerSpec, ParamSet,
    Scalar, Tensor,
};
use crate::reward::{EpisodeBuffer, RoboclipReward};
use crate::rng;
use crate::simworld::{self, Action, Color, Observation, RenderStyle, Task, WorldConfig, ACTION_DIM, OBS_DIM};

pub const LOG_STD_MIN: f32 = -5.0;
pub const LOG_STD_MAX: f32 = 2.0;
const LOG_STD: &str = "pi.log_std";
/// Shrinks the initial output weights so a fresh policy's mean action is
/// near zero instead of committing to one direction.
const MEAN_OUT_INIT_SCALE: f32 = 0.01;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;
const ARCH: &str = "gaussian-mlp-v1";

/// Which environment instances a run samples from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnvSpec {
    pub task: Task,
    pub color: Color,
    pub style: RenderStyle,
}

impl EnvSpec {
    pub fn new(task: Task, color: Color, style: RenderStyle) -> Self {
        Self { task, color, style }
    }

    /// Object placement depends on the seed.
    pub fn config(&self, seed: u64) -> WorldConfig {
        WorldConfig::sampled(self.task, self.color, self.style, seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub hidden: usize,
    pub params: ParamSet<f32>,
}

fn mean_layers(hidden: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::affine("pi.fc1", OBS_DIM, hidden),
        LayerSpec::Tanh,
        LayerSpec::affine("pi.fc2", hidden, hidden),
        LayerSpec::Tanh,
        LayerSpec::affine("pi.out", hidden, ACTION_DIM),
        LayerSpec::Tanh,
    ]
}

fn value_layers(hidden: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::affine("vf.fc1", OBS_DIM, hidden),
        LayerSpec::Tanh,
        LayerSpec::affine("vf.fc2", hidden, hidden),
        LayerSpec::Tanh,
        LayerSpec::affine("vf.out", hidden, 1),
    ]
}

impl PolicyParams {
    pub fn init(hidden: usize, seed: u64) -> Result<Self> {
        let mut params = ParamSet::new();
        let mut r = rng::stream(seed, "ppo/init");
        init_stack(&mean_layers(hidden), &mut params, &mut r)?;
        params.value_mut("pi.out.w")?.scale(MEAN_OUT_INIT_SCALE);
        init_stack(&value_layers(hidden), &mut params, &mut r)?;
        params.insert(LOG_STD, Tensor::zeros(&[ACTION_DIM]))?;
        Ok(Self { hidden, params })
    }

    pub fn log_std(&self) -> [f32; ACTION_DIM] {
        let v = self.params.value(LOG_STD).expect("log-std present").data();
        [v[0], v[1]]
    }

    pub fn set_log_std(&mut self, v: f32) {
        self.params.value_mut(LOG_STD).expect("log-std present").fill(v.clamp(LOG_STD_MIN, LOG_STD_MAX));
    }

    fn clamp_log_std(&mut self) {
        let t = self.params.value_mut(LOG_STD).expect("log-std present");
        for v in t.data_mut() {
            *v = v.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }

    /// Mean actions and values for a batch of observations.
    pub fn evaluate(&self, obs: &[Observation]) -> Result<(Vec<[f32; 2]>, Vec<f32>)> {
        let x = obs_tensor::<f32>(obs.iter().map(|o| &o.0))?;
        let m = infer(&self.params, &x, &mean_layers(self.hidden))?;
        let v = infer(&self.params, &x, &value_layers(self.hidden))?;
        m.check_finite("policy mean")?;
        v.check_finite("value estimate")?;
        Ok((m.data().chunks(2).map(|c| [c[0], c[1]]).collect(), v.into_data()))
    }

    pub fn mean_action(&self, obs: &Observation) -> Result<Action> {
        let (m, _) = self.evaluate(std::slice::from_ref(obs))?;
        Ok(Action::new(m[0][0], m[0][1]))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = vec![("arch".to_string(), ARCH.to_string()), ("hidden".to_string(), self.hidden.to_string())];
        checkpoint::save(path, &self.params, &meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (params, meta) = checkpoint::load(path)?;
        if checkpoint::meta_get(&meta, "arch") != Some(ARCH) {
            return Err(Error::format("policy checkpoint", "unknown architecture"));
        }
        let hidden = checkpoint::meta_get(&meta, "hidden")
            .and_then(|h| h.parse().ok())
            .ok_or_else(|| Error::format("policy checkpoint", "bad hidden size"))?;
        if PolicyParams::init(hidden, 0)?.params.names().ne(params.names()) {
            return Err(Error::format("policy checkpoint", "parameter table does not match architecture"));
        }
        Ok(Self { hidden, params })
    }
}

/// Fixed input scaling; the handle displacement matters at centimetre scale.
const OBS_SCALE: [f32; OBS_DIM] = [1.0, 1.0, 1.0, 10.0, 10.0, 1.0];

fn obs_tensor<'a, S: Scalar>(rows: impl Iterator<Item = &'a [f32; OBS_DIM]>) -> Result<Tensor<S>> {
    let data: Vec<S> =
        rows.flat_map(|r| r.iter().zip(OBS_SCALE).map(|(&v, k)| S::of(f64::from(v * k)))).collect();
    let n = data.len() / OBS_DIM;
    Tensor::new(vec![n, OBS_DIM], data)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PPOConfig {
    pub gamma: f32,
    pub lambda: f32,
    pub clip_eps: f32,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub episodes_per_update: usize,
    pub lr: f32,
    pub entropy_coef: f32,
    pub value_coef: f32,
    pub max_grad_norm: f32,
    /// Remaining epochs of an update are skipped once the KL estimate exceeds this.
    pub max_kl: f32,
    pub total_env_steps: usize,
    pub hidden: usize,
    /// Initial value of every log-std entry for fresh policies.
    pub init_log_std: f32,
    pub seed: u64,
    /// Return the post-update policy whose mean-action true return on a
    /// fixed probe set is highest. This peeks at the task reward, so it is
    /// evaluation-side model selection, never a training signal.
    pub select_best_by_true_return: bool,
    /// Probe episodes per update for that selection.
    pub selection_episodes: usize,
}

impl Default for PPOConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            clip_eps: 0.2,
            epochs: 10,
            minibatch_size: 256,
            episodes_per_update: 16,
            lr: 3e-4,
            entropy_coef: 0.01,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            max_kl: 0.5,
            total_env_steps: 16 * 128 * 296,
            hidden: 64,
            init_log_std: -0.5,
            seed: 0,
            select_best_by_true_return: true,
            selection_episodes: 16,
        }
    }
}

impl PPOConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma {} outside (0, 1]", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda {} outside [0, 1]", self.lambda));
        }
        if !(self.clip_eps > 0.0) {
            return bad(format!("clip epsilon {} must be positive", self.clip_eps));
        }
        if self.episodes_per_update == 0 || self.minibatch_size == 0 || self.hidden == 0 {
            return bad("episodes per update, minibatch size and hidden width must be positive".into());
        }
        Ok(())
    }

    pub fn steps_per_update(&self) -> usize {
        self.episodes_per_update * simworld::DEFAULT_HORIZON
    }

    pub fn num_updates(&self) -> usize {
        self.total_env_steps.div_ceil(self.steps_per_update())
    }
}

pub enum RewardSource<'a> {
    Roboclip(&'a RoboclipReward),
    TrueTask,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBatch {
    pub obs: Vec<[f32; OBS_DIM]>,
    pub actions: Vec<[f32; ACTION_DIM]>,
    pub log_probs: Vec<f32>,
    pub rewards: Vec<f32>,
    pub values: Vec<f32>,
    pub dones: Vec<bool>,
    /// Per episode; empty in true-task mode.
    pub terminal_rewards: Vec<f32>,
    pub true_returns: Vec<f32>,
    pub successes: Vec<bool>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn episodes(&self) -> usize {
        self.true_returns.len()
    }
}

pub fn gaussian_log_prob(a: &[f32; 2], mean: &[f32; 2], log_std: &[f32; 2]) -> f32 {
    let mut lp = 0.0f64;
    for k in 0..2 {
        let s = f64::from(log_std[k]);
        let z = (f64::from(a[k]) - f64::from(mean[k])) / s.exp();
        lp += -0.5 * z * z - s - HALF_LN_2PI;
    }
    lp as f32
}

/// Run `n_episodes` full episodes. With `deterministic` the mean action is taken.
pub fn collect_rollouts(
    env: &EnvSpec,
    policy: &PolicyParams,
    source: &RewardSource<'_>,
    n_episodes: usize,
    seed: u64,
    deterministic: bool,
) -> Result<RolloutBatch> {
    let log_std = policy.log_std();
    let horizon = simworld::DEFAULT_HORIZON;
    let mut batch = RolloutBatch::default();
    let mut buffers = Vec::new();
    for ep in 0..n_episodes {
        let ep_seed = rng::derive_seed(seed, "ppo/episode", ep as u64);
        let config = env.config(ep_seed);
        let mut state = simworld::reset(&config, ep_seed)?;
        let mut noise = rng::stream(ep_seed, "ppo/action-noise");
        let mut buffer = EpisodeBuffer::new();
        let mut ret = 0.0f32;
        let start = batch.len();
        for _ in 0..horizon {
            let obs = state.observation();
            let (m, v) = policy.evaluate(std::slice::from_ref(&obs))?;
            let mean = m[0];
            let a = if deterministic {
                mean
            } else {
                let mut a = [0f32; 2];
                for k in 0..2 {
                    let e: f32 = noise.sample(StandardNormal);
                    a[k] = mean[k] + log_std[k].exp() * e;
                }
                a
            };
            if !(a.iter().all(|x| x.is_finite()) && v[0].is_finite()) {
                return Err(Error::NonFinite(format!("action or value in episode {ep}")));
            }
            let out = simworld::step(&state, Action::new(a[0], a[1]))?;
            if matches!(source, RewardSource::Roboclip(_)) {
                buffer.push(simworld::render(&out.next, config.render_style))?;
            }
            batch.obs.push(obs.0);
            batch.actions.push(a);
            batch.log_probs.push(gaussian_log_prob(&a, &mean, &log_std));
            batch.values.push(v[0]);
            batch.rewards.push(match source {
                RewardSource::TrueTask => out.true_reward,
                RewardSource::Roboclip(_) => 0.0,
            });
            batch.dones.push(out.done);
            ret += out.true_reward;
            state = out.next;
            if out.done {
                break;
            }
        }
        debug_assert_eq!(batch.len() - start, horizon);
        batch.true_returns.push(ret);
        batch.successes.push(simworld::success(&state));
        if matches!(source, RewardSource::Roboclip(_)) {
            buffers.push(buffer);
        }
    }
    if let RewardSource::Roboclip(r) = source {
        let scores = r.score_many(&buffers)?;
        for (ep, s) in scores.iter().enumerate() {
            if !s.is_finite() {
                return Err(Error::NonFinite(format!("terminal reward in episode {ep}")));
            }
            batch.rewards[(ep + 1) * horizon - 1] = *s;
        }
        batch.terminal_rewards = scores;
    }
    Ok(batch)
}

/// Generalized advantage estimation; value after a done step is zero.
pub fn gae(rewards: &[f32], values: &[f32], dones: &[bool], gamma: f32, lambda: f32) -> (Vec<f32>, Vec<f32>) {
    let n = rewards.len();
    let mut adv = vec![0f32; n];
    let mut running = 0f32;
    for t in (0..n).rev() {
        let (next_v, carry) = if dones[t] || t + 1 == n { (0.0, 0.0) } else { (values[t + 1], running) };
        let delta = rewards[t] + gamma * next_v - values[t];
        running = delta + gamma * lambda * carry;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Zero mean, unit variance.
pub fn normalize_advantages(adv: &mut [f32]) {
    let n = adv.len() as f64;
    if n == 0.0 {
        return;
    }
    let mean = adv.iter().map(|&a| f64::from(a)).sum::<f64>() / n;
    let var = adv.iter().map(|&a| (f64::from(a) - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt().max(1e-8);
    for a in adv.iter_mut() {
        *a = ((f64::from(*a) - mean) / sd) as f32;
    }
}

/// `min(r·A, clip(r, 1−ε, 1+ε)·A)`.
pub fn clipped_surrogate(ratio: f64, adv: f64, eps: f64) -> f64 {
    (ratio * adv).min(ratio.clamp(1.0 - eps, 1.0 + eps) * adv)
}

/// Training samples for one loss evaluation.
#[derive(Debug, Clone, Default)]
pub struct Samples {
    pub obs: Vec<[f32; OBS_DIM]>,
    pub actions: Vec<[f32; ACTION_DIM]>,
    pub old_log_probs: Vec<f32>,
    pub advantages: Vec<f32>,
    pub returns: Vec<f32>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

/// PPO loss (to minimize) on `samples`; gradients are accumulated into `params`.
pub fn ppo_loss<S: Scalar>(params: &mut ParamSet<S>, hidden: usize, samples: &Samples, cfg: &PPOConfig) -> Result<LossParts> {
    let n = samples.obs.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty minibatch".into()));
    }
    let x = obs_tensor::<S>(samples.obs.iter())?;
    let (mean, mtape) = forward_mlp(params, &x, &mean_layers(hidden))?;
    let (value, vtape) = forward_mlp(params, &x, &value_layers(hidden))?;
    let log_std: Vec<S> = params.value(LOG_STD)?.data().to_vec();
    let inv_n = S::of(1.0 / n as f64);
    let eps = f64::from(cfg.clip_eps);

    let mut d_mean = vec![S::zero(); n * ACTION_DIM];
    let mut d_log_std = vec![S::zero(); ACTION_DIM];
    let mut d_value = vec![S::zero(); n];
    let (mut pol, mut val, mut clipped, mut kl) = (S::zero(), S::zero(), 0usize, 0f64);
    for i in 0..n {
        let mut lp = S::zero();
        let mut zs = [S::zero(); ACTION_DIM];
        for k in 0..ACTION_DIM {
            let s = log_std[k];
            let z = (S::of(f64::from(samples.actions[i][k])) - mean.data()[i * ACTION_DIM + k]) / s.exp();
            zs[k] = z;
            lp = lp - S::of(0.5) * z * z - s - S::of(HALF_LN_2PI);
        }
        let log_ratio = lp - S::of(f64::from(samples.old_log_probs[i]));
        let ratio = log_ratio.exp();
        let adv = S::of(f64::from(samples.advantages[i]));
        let lo = S::of(1.0 - eps);
        let hi = S::of(1.0 + eps);
        let unclipped = ratio * adv;
        let clipped_term = ratio.max(lo).min(hi) * adv;
        pol = pol - unclipped.min(clipped_term) * inv_n;
        if ratio < lo || ratio > hi {
            clipped += 1;
        }
        kl += (ratio - S::one() - log_ratio).to_f64();
        // The gradient flows only where the unclipped branch is the minimum.
        if unclipped <= clipped_term {
            let d_lp = -adv * ratio * inv_n;
            for k in 0..ACTION_DIM {
                let sd = log_std[k].exp();
                d_mean[i * ACTION_DIM + k] = d_lp * zs[k] / sd;
                d_log_std[k] += d_lp * (zs[k] * zs[k] - S::one());
            }
        }
        let err = value.data()[i] - S::of(f64::from(samples.returns[i]));
        val += err * err * inv_n;
        d_value[i] = S::of(2.0 * f64::from(cfg.value_coef)) * err * inv_n;
    }
    let entropy: S = log_std.iter().map(|&s| s + S::of(0.5 + HALF_LN_2PI)).sum();
    for d in d_log_std.iter_mut() {
        *d -= S::of(f64::from(cfg.entropy_coef));
    }
    backward_params(params, &mtape, &Tensor::new(vec![n, ACTION_DIM], d_mean)?)?;
    backward_params(params, &vtape, &Tensor::new(vec![n, 1], d_value)?)?;
    params.accumulate(LOG_STD, &Tensor::new(vec![ACTION_DIM], d_log_std)?)?;
    let total = pol + S::of(f64::from(cfg.value_coef)) * val - S::of(f64::from(cfg.entropy_coef)) * entropy;
    if !total.to_f64().is_finite() {
        return Err(Error::NonFinite("PPO loss".into()));
    }
    Ok(LossParts {
        total: total.to_f64(),
        policy: pol.to_f64(),
        value: val.to_f64(),
        entropy: entropy.to_f64(),
        clip_fraction: clipped as f64 / n as f64,
        approx_kl: kl / n as f64,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub kl: f64,
    pub epochs_run: usize,
}

/// Samples with normalized GAE advantages for a rollout batch.
pub fn prepare_samples(batch: &RolloutBatch, cfg: &PPOConfig) -> Samples {
    let (mut adv, returns) = gae(&batch.rewards, &batch.values, &batch.dones, cfg.gamma, cfg.lambda);
    normalize_advantages(&mut adv);
    Samples {
        obs: batch.obs.clone(),
        actions: batch.actions.clone(),
        old_log_probs: batch.log_probs.clone(),
        advantages: adv,
        returns,
    }
}

fn subset(s: &Samples, idx: &[usize]) -> Samples {
    Samples {
        obs: idx.iter().map(|&i| s.obs[i]).collect(),
        actions: idx.iter().map(|&i| s.actions[i]).collect(),
        old_log_probs: idx.iter().map(|&i| s.old_log_probs[i]).collect(),
        advantages: idx.iter().map(|&i| s.advantages[i]).collect(),
        returns: idx.iter().map(|&i| s.returns[i]).collect(),
    }
}

/// Clipped-surrogate epochs over `samples`.
pub fn ppo_update(
    policy: &mut PolicyParams,
    adam: &mut AdamState,
    samples: &Samples,
    cfg: &PPOConfig,
    seed: u64,
) -> Result<UpdateStats> {
    let adam_cfg = AdamConfig::with_lr(cfg.lr);
    let mut idx: Vec<usize> = (0..samples.obs.len()).collect();
    let mut stats = UpdateStats::default();
    let mut count = 0usize;
    'epochs: for epoch in 0..cfg.epochs {
        let mut r = rng::indexed_stream(seed, "ppo/minibatch", epoch as u64);
        idx.shuffle(&mut r);
        stats.epochs_run = epoch + 1;
        for chunk in idx.chunks(cfg.minibatch_size) {
            policy.params.zero_grads();
            let parts = ppo_loss(&mut policy.params, policy.hidden, &subset(samples, chunk), cfg)?;
            stats.policy_loss += parts.policy;
            stats.value_loss += parts.value;
            stats.entropy += parts.entropy;
            stats.clip_fraction += parts.clip_fraction;
            stats.kl += parts.approx_kl;
            count += 1;
            if parts.approx_kl > f64::from(cfg.max_kl) {
                policy.params.zero_grads();
                break 'epochs;
            }
            let norm = policy.params.grad_norm();
            if cfg.max_grad_norm > 0.0 && norm > cfg.max_grad_norm {
                policy.params.scale_grads(cfg.max_grad_norm / norm);
            }
            adam_step(&mut policy.params, adam, &adam_cfg)?;
            policy.clamp_log_std();
        }
    }
    let c = count.max(1) as f64;
    stats.policy_loss /= c;
    stats.value_loss /= c;
    stats.entropy /= c;
    stats.clip_fraction /= c;
    stats.kl /= c;
    Ok(stats)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub update_index: usize,
    pub env_steps: usize,
    pub mean_roboclip_reward: f32,
    pub mean_true_return: f32,
    pub success_rate: f32,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub clip_fraction: f64,
    pub kl: f64,
}

pub const CURVE_HEADER: &str =
    "update_index,env_steps,mean_roboclip_reward,mean_true_return,success_rate,policy_loss,value_loss,clip_fraction,kl";

pub fn write_curve_csv<W: Write>(rows: &[CurveRow], mut out: W) -> Result<()> {
    writeln!(out, "{CURVE_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.update_index,
            r.env_steps,
            r.mean_roboclip_reward,
            r.mean_true_return,
            r.success_rate,
            r.policy_loss,
            r.value_loss,
            r.clip_fraction,
            r.kl
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The selected policy (see [`PPOConfig::select_best_by_true_return`]).
    pub policy: PolicyParams,
    pub last: PolicyParams,
    pub curve: Vec<CurveRow>,
    pub best_update: Option<usize>,
}

fn mean(v: &[f32]) -> f32 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f32>() / v.len() as f32
    }
}

/// Alternate rollout collection and PPO updates. `init` continues from a
/// given policy with fresh optimizer state.
pub fn train(
    env: &EnvSpec,
    source: &RewardSource<'_>,
    cfg: &PPOConfig,
    init: Option<PolicyParams>,
    mut on_update: impl FnMut(&CurveRow),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut policy = match init {
        Some(p) => p,
        None => {
            let mut p = PolicyParams::init(cfg.hidden, cfg.seed)?;
            p.set_log_std(cfg.init_log_std);
            p
        }
    };
    let mut adam = AdamState::new();
    let mut curve = Vec::new();
    let mut best: Option<(f32, usize, PolicyParams)> = None;
    let select_seed = rng::derive_seed(cfg.seed, "ppo/select", 0);
    for u in 0..cfg.num_updates() {
        let seed = rng::derive_seed(cfg.seed, "ppo/rollout", u as u64);
        let batch = collect_rollouts(env, &policy, source, cfg.episodes_per_update, seed, false)?;
        let samples = prepare_samples(&batch, cfg);
        let stats = ppo_update(&mut policy, &mut adam, &samples, cfg, seed)?;
        if cfg.select_best_by_true_return {
            let probe = collect_rollouts(env, &policy, &RewardSource::TrueTask, cfg.selection_episodes, select_seed, true)?;
            let ret = mean(&probe.true_returns);
            if best.as_ref().is_none_or(|b| ret > b.0) {
                best = Some((ret, u, policy.clone()));
            }
        }
        let row = CurveRow {
            update_index: u,
            env_steps: (u + 1) * cfg.steps_per_update(),
            mean_roboclip_reward: mean(&batch.terminal_rewards),
            mean_true_return: mean(&batch.true_returns),
            success_rate: batch.successes.iter().filter(|&&s| s).count() as f32 / batch.episodes() as f32,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            clip_fraction: stats.clip_fraction,
            kl: stats.kl,
        };
        on_update(&row);
        curve.push(row);
    }
    let (selected, best_update) = match best {
        Some((_, u, p)) => (p, Some(u)),
        None => (policy.clone(), None),
    };
    Ok(TrainOutcome { policy: selected, last: policy, curve, best_update })
}

/// Continue PPO on the true task reward.
pub fn finetune_task_reward(policy: &PolicyParams, env: &EnvSpec, cfg: &PPOConfig) -> Result<TrainOutcome> {
    if cfg.total_env_steps == 0 {
        return Ok(TrainOutcome { policy: policy.clone(), last: policy.clone(), curve: Vec::new(), best_update: None });
    }
    train(env, &RewardSource::TrueTask, cfg, Some(policy.clone()), |_| {})
}

/// Pull toward the starting mean-net weights during behaviour cloning. One
/// demo covers a single path through observation space; unanchored regression
/// onto it overwrites the approach behaviour learned for other layouts.
const BC_ANCHOR: f32 = 10.0;

/// Full-batch squared-error regression of the policy mean onto demo actions,
/// plus an L2 pull toward the starting weights.
/// The value net and log-std are left untouched. Returns the final mean
/// squared error per action component.
pub fn bc_finetune(
    policy: &PolicyParams,
    demo: &[(Observation, Action)],
    epochs: usize,
    lr: f32,
) -> Result<(PolicyParams, f64)> {
    if demo.is_empty() {
        return Err(Error::InvalidArgument("behaviour cloning needs a non-empty demo".into()));
    }
    let mut out = policy.clone();
    let layers = mean_layers(policy.hidden);
    let x = obs_tensor::<f32>(demo.iter().map(|(o, _)| &o.0))?;
    let target: Vec<f32> = demo.iter().flat_map(|(_, a)| a.clipped().delta).collect();
    let n = target.len() as f32;
    let mse = |p: &ParamSet<f32>| -> Result<f64> {
        let m = infer(p, &x, &layers)?;
        Ok(m.data().iter().zip(&target).map(|(a, b)| f64::from(a - b).powi(2)).sum::<f64>() / f64::from(n))
    };
    let mut adam = AdamState::new();
    let adam_cfg = AdamConfig::with_lr(lr);
    for _ in 0..epochs {
        out.params.zero_grads();
        let (m, tape) = forward_mlp(&out.params, &x, &layers)?;
        let d: Vec<f32> = m.data().iter().zip(&target).map(|(a, b)| 2.0 * (a - b) / n).collect();
        backward_params(&mut out.params, &tape, &Tensor::new(m.shape().to_vec(), d)?)?;
        out.params.grad_mut(LOG_STD)?.fill(0.0);
        for (name, param) in out.params.iter_mut() {
            if name.starts_with("pi.") {
                let init = policy.params.value(name)?.data();
                let v = param.value.data().to_vec();
                for ((g, w), w0) in param.grad.data_mut().iter_mut().zip(&v).zip(init) {
                    *g += BC_ANCHOR * (w - w0);
                }
            }
        }
        adam_step(&mut out.params, &mut adam, &adam_cfg)?;
        // Adam leaves zero-gradient entries in place, but only the mean net may move.
        out.params.value_mut(LOG_STD)?.data_mut().copy_from_slice(policy.params.value(LOG_STD)?.data());
        for name in ["vf.fc1.w", "vf.fc1.b", "vf.fc2.w", "vf.fc2.b", "vf.out.w", "vf.out.b"] {
            let v = policy.params.value(name)?.clone();
            *out.params.value_mut(name)? = v;
        }
    }
    let err = mse(&out.params)?;
    Ok((out, err))
}
