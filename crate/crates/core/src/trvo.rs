//! Risk-averse trust-region policy search.
//!
//! A Gaussian policy whose mean is a small tanh network of the hedging state is
//! trained to maximize `J - λ ν²`, where `J` is the discounted mean per-step reward
//! and `ν²` the discounted mean squared deviation of per-step rewards from `J`.
//! The volatility term enters through the reward transform
//! `r̃ = r - λ (r - J)²`; each update is a natural-gradient step whose size is
//! bounded by the mean KL divergence between the old and new policies.
//!
//! Rewards reach the learner divided by the environment's reward scale (the
//! initial option premium for hedging), and `λ` is rescaled accordingly, so
//! the user-facing `λ` multiplies EUR variances by `1e-5`.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::calendar::TradingGrid;
use crate::env::{EnvConfig, EnvError, GridPricing, PricedPath};
use crate::market_data::CostModel;
use crate::market_sim::SpreadModel;

pub const LOG_STD_MIN: f64 = -6.0;
pub const LOG_STD_MAX: f64 = 1.0;
/// User-scale λ times this factor multiplies variances of EUR rewards.
pub const LAMBDA_UNIT: f64 = 1e-5;
pub const CHECKPOINT_HEADER: &str = "cdx-hedge-policy v1";
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
const ACTION_STREAM_KEY: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Error)]
pub enum TrvoError {
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("training diverged at iteration {iteration}: |J| = {j:.3e} EUR exceeds {limit:.3e} EUR")]
    Diverged { iteration: usize, j: f64, limit: f64 },
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Fully connected network with tanh hidden layers and one linear output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    sizes: Vec<usize>,
}

/// Per-call buffers for forward and derivative passes.
#[derive(Debug, Clone, Default)]
pub struct Scratch {
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
    tangent: Vec<f64>,
    tangent_next: Vec<f64>,
}

impl Mlp {
    /// `sizes` runs from the input width to the output width, which must be 1.
    pub fn new(sizes: Vec<usize>) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|s| *s > 0), "bad layer sizes {sizes:?}");
        assert_eq!(*sizes.last().unwrap(), 1, "network output must be scalar");
        Self { sizes }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn n_params(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// (fan-in, fan-out, offset of the weight block) per layer; biases follow the weights.
    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.sizes.windows(2).scan(0, |off, w| {
            let here = *off;
            *off += w[0] * w[1] + w[1];
            Some((w[0], w[1], here))
        })
    }

    pub fn forward(&self, theta: &[f64], x: &[f64], s: &mut Scratch) -> f64 {
        let n_layers = self.sizes.len() - 1;
        s.acts.resize_with(self.sizes.len(), Vec::new);
        s.acts[0].clear();
        s.acts[0].extend_from_slice(x);
        for (l, (fan_in, fan_out, off)) in self.layers().enumerate() {
            let (head, tail) = s.acts.split_at_mut(l + 1);
            let input = &head[l];
            let out = &mut tail[0];
            out.clear();
            let w = &theta[off..off + fan_in * fan_out];
            let b = &theta[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            for o in 0..fan_out {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                let z = b[o] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
                out.push(if l + 1 < n_layers { z.tanh() } else { z });
            }
        }
        s.acts[n_layers][0]
    }

    /// Adds `g · ∂out/∂θ` to `grad`; requires the activations of a preceding `forward`.
    pub fn backward(&self, theta: &[f64], g: f64, grad: &mut [f64], s: &mut Scratch) {
        let layers: Vec<_> = self.layers().collect();
        s.delta.clear();
        s.delta.push(g);
        for (l, &(fan_in, fan_out, off)) in layers.iter().enumerate().rev() {
            let input = &s.acts[l];
            let (gw, gb) = grad[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
            for o in 0..fan_out {
                let d = s.delta[o];
                gb[o] += d;
                for (gwi, a) in gw[o * fan_in..(o + 1) * fan_in].iter_mut().zip(input) {
                    *gwi += d * a;
                }
            }
            if l > 0 {
                let w = &theta[off..off + fan_in * fan_out];
                s.delta_prev.clear();
                s.delta_prev.resize(fan_in, 0.0);
                for o in 0..fan_out {
                    let d = s.delta[o];
                    for (dp, wi) in s.delta_prev.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                        *dp += d * wi;
                    }
                }
                for (dp, a) in s.delta_prev.iter_mut().zip(input) {
                    *dp *= 1.0 - a * a;
                }
                std::mem::swap(&mut s.delta, &mut s.delta_prev);
            }
        }
    }

    /// Directional derivative `∂out/∂θ · v`; requires the activations of a preceding `forward`.
    pub fn jvp(&self, theta: &[f64], v: &[f64], s: &mut Scratch) -> f64 {
        let n_layers = self.sizes.len() - 1;
        s.tangent.clear();
        s.tangent.resize(self.sizes[0], 0.0);
        for (l, (fan_in, fan_out, off)) in self.layers().enumerate() {
            let input = &s.acts[l];
            let w = &theta[off..off + fan_in * fan_out];
            let dw = &v[off..off + fan_in * fan_out];
            let db = &v[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            s.tangent_next.clear();
            for o in 0..fan_out {
                let r = o * fan_in..(o + 1) * fan_in;
                let mut dz = db[o];
                for i in 0..fan_in {
                    dz += w[r.start + i] * s.tangent[i] + dw[r.start + i] * input[i];
                }
                if l + 1 < n_layers {
                    let a = s.acts[l + 1][o];
                    dz *= 1.0 - a * a;
                }
                s.tangent_next.push(dz);
            }
            std::mem::swap(&mut s.tangent, &mut s.tangent_next);
        }
        s.tangent[0]
    }
}

/// Gaussian policy: network mean of the normalized observation, state-independent std.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub net: Mlp,
    pub weights: Vec<f64>,
    pub log_std: f64,
    /// Observations enter the network as `(obs - shift) / scale`.
    pub obs_shift: Vec<f64>,
    pub obs_scale: Vec<f64>,
}

impl PolicyParams {
    /// Random hidden weights (variance 1/fan-in), a near-zero output layer and
    /// output bias `init_mean`, so every state starts near the same action.
    pub fn new(obs_dim: usize, hidden: &[usize], init_mean: f64, init_log_std: f64, seed: u64) -> Self {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let net = Mlp::new(sizes);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = vec![0.0; net.n_params()];
        let n_layers = net.sizes.len() - 1;
        for (l, (fan_in, fan_out, off)) in net.layers().enumerate() {
            let scale = if l + 1 == n_layers { 0.01 } else { 1.0 } / (fan_in as f64).sqrt();
            for w in &mut weights[off..off + fan_in * fan_out] {
                *w = scale * rng.sample::<f64, _>(StandardNormal);
            }
            if l + 1 == n_layers {
                weights[off + fan_in * fan_out] = init_mean;
            }
        }
        Self {
            net,
            weights,
            log_std: init_log_std.clamp(LOG_STD_MIN, LOG_STD_MAX),
            obs_shift: vec![0.0; obs_dim],
            obs_scale: vec![1.0; obs_dim],
        }
    }

    /// Hedging-state normalization: spread (bp/100) and option value (premium units)
    /// centred on 1, hedge ratio and previous action centred on 0.5.
    pub fn for_hedging(hidden: &[usize], init_mean: f64, init_log_std: f64, seed: u64) -> Self {
        let mut p = Self::new(4, hidden, init_mean, init_log_std, seed);
        p.obs_shift = vec![1.0, 1.0, 0.5, 0.5];
        p.obs_scale = vec![0.5, 1.0, 0.5, 0.5];
        p
    }

    pub fn obs_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn n_params(&self) -> usize {
        self.weights.len() + 1
    }

    pub fn std(&self) -> f64 {
        self.log_std.exp()
    }

    /// Flat parameter vector: network weights then log-std.
    pub fn theta(&self) -> Vec<f64> {
        let mut t = self.weights.clone();
        t.push(self.log_std);
        t
    }

    pub fn with_theta(&self, theta: &[f64]) -> Self {
        let n = self.weights.len();
        Self {
            weights: theta[..n].to_vec(),
            log_std: theta[n].clamp(LOG_STD_MIN, LOG_STD_MAX),
            ..self.clone()
        }
    }

    fn normalize(&self, obs: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(obs.iter().zip(&self.obs_shift).zip(&self.obs_scale).map(|((o, m), s)| (o - m) / s));
    }

    fn mean_with(&self, weights: &[f64], obs: &[f64], input: &mut Vec<f64>, s: &mut Scratch) -> f64 {
        self.normalize(obs, input);
        self.net.forward(weights, input, s)
    }

    /// Deterministic action (the Gaussian mean), before clipping.
    pub fn mean(&self, obs: &[f64]) -> f64 {
        let mut s = Scratch::default();
        self.mean_with(&self.weights, obs, &mut Vec::new(), &mut s)
    }

    pub fn log_prob(&self, obs: &[f64], action: f64) -> f64 {
        gaussian_log_prob(action, self.mean(obs), self.log_std)
    }

    /// Draws `mean + std·Z`; returns the action and its log-density (before any clipping).
    pub fn sample_action<R: Rng>(&self, obs: &[f64], rng: &mut R) -> Result<(f64, f64), TrvoError> {
        let mu = self.mean(obs);
        if !mu.is_finite() {
            return Err(TrvoError::NonFinite(format!("policy mean {mu} for observation {obs:?}")));
        }
        let z: f64 = rng.sample(StandardNormal);
        let a = mu + self.std() * z;
        Ok((a, gaussian_log_prob(a, mu, self.log_std)))
    }

    /// Writes the text checkpoint atomically (temporary file, then rename).
    pub fn save(&self, path: &Path) -> Result<(), TrvoError> {
        let io = |source| TrvoError::Io { path: path.display().to_string(), source };
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp).map_err(io)?;
            f.write_all(self.to_text().as_bytes()).map_err(io)?;
            f.sync_all().map_err(io)?;
        }
        fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, TrvoError> {
        let text = fs::read_to_string(path).map_err(|source| TrvoError::Io { path: path.display().to_string(), source })?;
        Self::from_text(&text)
    }

    /// Checkpoint text: header, `layers`, `log_std`, `obs_shift`, `obs_scale`,
    /// `params <n>`, then one weight per line in layer order (row-major weights, then biases).
    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        let mut out = String::new();
        let sizes: Vec<String> = self.net.sizes.iter().map(|s| s.to_string()).collect();
        let _ = writeln!(out, "{CHECKPOINT_HEADER}");
        let _ = writeln!(out, "layers {}", sizes.join(" "));
        let _ = writeln!(out, "log_std {}", self.log_std);
        let _ = writeln!(out, "obs_shift {}", join(&self.obs_shift));
        let _ = writeln!(out, "obs_scale {}", join(&self.obs_scale));
        let _ = writeln!(out, "params {}", self.weights.len());
        for w in &self.weights {
            let _ = writeln!(out, "{w}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, TrvoError> {
        let bad = |m: &str| TrvoError::Checkpoint(m.to_string());
        let mut lines = text.lines();
        if lines.next() != Some(CHECKPOINT_HEADER) {
            return Err(bad("missing or unsupported header"));
        }
        let mut field = |name: &str| -> Result<Vec<String>, TrvoError> {
            let line = lines.next().ok_or_else(|| bad(&format!("missing `{name}` line")))?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(name) {
                return Err(bad(&format!("expected `{name}`, found `{line}`")));
            }
            Ok(parts.map(String::from).collect())
        };
        let parse_f = |v: &[String]| -> Result<Vec<f64>, TrvoError> {
            v.iter().map(|x| x.parse::<f64>().map_err(|e| bad(&format!("`{x}`: {e}")))).collect()
        };
        let sizes: Vec<usize> = field("layers")?
            .iter()
            .map(|x| x.parse::<usize>().map_err(|e| bad(&format!("`{x}`: {e}"))))
            .collect::<Result<_, _>>()?;
        if sizes.len() < 2 || sizes.contains(&0) || sizes.last() != Some(&1) {
            return Err(bad("layer sizes must be positive and end in 1"));
        }
        let log_std = parse_f(&field("log_std")?)?;
        let obs_shift = parse_f(&field("obs_shift")?)?;
        let obs_scale = parse_f(&field("obs_scale")?)?;
        let n: usize = field("params")?
            .first()
            .and_then(|x| x.parse().ok())
            .ok_or_else(|| bad("bad params count"))?;
        let net = Mlp::new(sizes);
        if n != net.n_params() || log_std.len() != 1 || obs_shift.len() != net.input_dim() || obs_scale.len() != net.input_dim() {
            return Err(bad("shape mismatch"));
        }
        let weights: Vec<f64> = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim().parse::<f64>().map_err(|e| bad(&format!("`{l}`: {e}"))))
            .collect::<Result<_, _>>()?;
        if weights.len() != n || !weights.iter().all(|w| w.is_finite()) {
            return Err(bad(&format!("expected {n} finite weights, found {}", weights.len())));
        }
        Ok(Self { net, weights, log_std: log_std[0], obs_shift, obs_scale })
    }
}

pub fn gaussian_log_prob(action: f64, mean: f64, log_std: f64) -> f64 {
    let z = (action - mean) / log_std.exp();
    -0.5 * z * z - log_std - HALF_LN_2PI
}

/// Rollouts of whole episodes in learner units.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryBatch {
    pub obs_dim: usize,
    /// Row-major observations, `obs_dim` per step.
    pub obs: Vec<f64>,
    /// Sampled actions before clipping.
    pub actions: Vec<f64>,
    /// Rewards divided by the environment reward scale.
    pub rewards: Vec<f64>,
    pub log_probs: Vec<f64>,
    /// Policy mean at collection time.
    pub means: Vec<f64>,
    /// Step index within the episode.
    pub timesteps: Vec<usize>,
    /// Offsets of episode starts, with a final sentinel equal to the step count.
    pub episode_starts: Vec<usize>,
    /// Log-std at collection time.
    pub log_std: f64,
}

impl TrajectoryBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn n_episodes(&self) -> usize {
        self.episode_starts.len().saturating_sub(1)
    }

    pub fn episode(&self, i: usize) -> Range<usize> {
        self.episode_starts[i]..self.episode_starts[i + 1]
    }

    pub fn observation(&self, k: usize) -> &[f64] {
        &self.obs[k * self.obs_dim..(k + 1) * self.obs_dim]
    }

    fn push_episode(&mut self, ep: EpisodeSamples) {
        if self.episode_starts.is_empty() {
            self.episode_starts.push(0);
        }
        for (t, r) in ep.rewards.iter().enumerate() {
            self.timesteps.push(t);
            self.rewards.push(*r);
        }
        self.obs.extend(ep.obs);
        self.actions.extend(ep.actions);
        self.log_probs.extend(ep.log_probs);
        self.means.extend(ep.means);
        self.episode_starts.push(self.actions.len());
    }
}

#[derive(Debug, Default)]
struct EpisodeSamples {
    obs: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    log_probs: Vec<f64>,
    means: Vec<f64>,
}

fn discount_weights(batch: &TrajectoryBatch, gamma: f64) -> Vec<f64> {
    let max_t = batch.timesteps.iter().copied().max().unwrap_or(0);
    let mut pow = Vec::with_capacity(max_t + 1);
    let mut w = 1.0;
    for _ in 0..=max_t {
        pow.push(w);
        w *= gamma;
    }
    batch.timesteps.iter().map(|t| pow[*t]).collect()
}

/// Discount-weighted mean reward: `Σ γ^t r_t / Σ γ^t` over all steps of the batch.
///
/// The normalization makes the `(1 - γ)` factor implicit; with γ = 1 this is the plain mean.
pub fn estimate_j(batch: &TrajectoryBatch, gamma: f64) -> f64 {
    weighted_mean(&discount_weights(batch, gamma), &batch.rewards, |r| r)
}

/// Discount-weighted mean of `(r - J)²`.
pub fn reward_volatility(batch: &TrajectoryBatch, j: f64, gamma: f64) -> f64 {
    weighted_mean(&discount_weights(batch, gamma), &batch.rewards, |r| (r - j) * (r - j))
}

fn weighted_mean(w: &[f64], x: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    let total: f64 = w.iter().sum();
    w.iter().zip(x).map(|(w, x)| w * f(*x)).sum::<f64>() / total
}

/// `r - λ (r - J)²`; the identity when `λ = 0`.
pub fn transform_rewards(rewards: &[f64], j: f64, lambda: f64) -> Vec<f64> {
    if lambda == 0.0 {
        return rewards.to_vec();
    }
    rewards.iter().map(|r| r - lambda * (r - j) * (r - j)).collect()
}

/// Discounted sum of future rewards within each episode.
pub fn reward_to_go(batch: &TrajectoryBatch, rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    for e in 0..batch.n_episodes() {
        let mut acc = 0.0;
        for k in batch.episode(e).rev() {
            acc = rewards[k] + gamma * acc;
            out[k] = acc;
        }
    }
    out
}

/// Reward-to-go minus its batch mean at the same timestep, scaled to unit variance.
///
/// All zeros when the centred values have no spread.
pub fn compute_advantages(batch: &TrajectoryBatch, rewards: &[f64], gamma: f64) -> Vec<f64> {
    let rtg = reward_to_go(batch, rewards, gamma);
    let max_t = batch.timesteps.iter().copied().max().map_or(0, |t| t + 1);
    let mut sum = vec![0.0; max_t];
    let mut count = vec![0usize; max_t];
    for (g, t) in rtg.iter().zip(&batch.timesteps) {
        sum[*t] += g;
        count[*t] += 1;
    }
    let mut adv: Vec<f64> = rtg.iter().zip(&batch.timesteps).map(|(g, t)| g - sum[*t] / count[*t] as f64).collect();
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let sd = (adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n).sqrt();
    if !(sd > 1e-12 * (1.0 + mean.abs())) {
        return vec![0.0; adv.len()];
    }
    for a in &mut adv {
        *a = (*a - mean) / sd;
    }
    adv
}

/// Sums per-episode vectors in episode order so results do not depend on thread count.
fn ordered_sum(parts: Vec<Vec<f64>>, len: usize) -> Vec<f64> {
    let mut total = vec![0.0; len];
    for p in parts {
        for (t, x) in total.iter_mut().zip(p) {
            *t += x;
        }
    }
    total
}

/// Importance-weighted surrogate `mean(π_θ(a|s)/π_old(a|s) · A)`.
pub fn surrogate(policy: &PolicyParams, theta: &[f64], batch: &TrajectoryBatch, adv: &[f64]) -> f64 {
    let p = policy.with_theta(theta);
    let parts: Vec<f64> = (0..batch.n_episodes())
        .into_par_iter()
        .map(|e| {
            let (mut input, mut s) = (Vec::new(), Scratch::default());
            batch
                .episode(e)
                .map(|k| {
                    let mu = p.mean_with(&p.weights, batch.observation(k), &mut input, &mut s);
                    let lp = gaussian_log_prob(batch.actions[k], mu, p.log_std);
                    (lp - batch.log_probs[k]).exp() * adv[k]
                })
                .sum()
        })
        .collect();
    parts.iter().sum::<f64>() / batch.len() as f64
}

/// Gradient of [`surrogate`] with respect to the flat parameters.
pub fn surrogate_gradient(policy: &PolicyParams, theta: &[f64], batch: &TrajectoryBatch, adv: &[f64]) -> Vec<f64> {
    let p = policy.with_theta(theta);
    let n_w = p.weights.len();
    let var = (2.0 * p.log_std).exp();
    let n = batch.len() as f64;
    let parts: Vec<Vec<f64>> = (0..batch.n_episodes())
        .into_par_iter()
        .map(|e| {
            let (mut input, mut s) = (Vec::new(), Scratch::default());
            let mut g = vec![0.0; n_w + 1];
            for k in batch.episode(e) {
                let mu = p.mean_with(&p.weights, batch.observation(k), &mut input, &mut s);
                let diff = batch.actions[k] - mu;
                let lp = gaussian_log_prob(batch.actions[k], mu, p.log_std);
                let w = (lp - batch.log_probs[k]).exp() * adv[k] / n;
                p.net.backward(&p.weights, w * diff / var, &mut g[..n_w], &mut s);
                g[n_w] += w * (diff * diff / var - 1.0);
            }
            g
        })
        .collect();
    ordered_sum(parts, n_w + 1)
}

/// Mean KL divergence from the collecting policy to the policy at `theta`.
pub fn mean_kl(policy: &PolicyParams, theta: &[f64], batch: &TrajectoryBatch) -> f64 {
    let p = policy.with_theta(theta);
    let (ls_old, ls_new) = (batch.log_std, p.log_std);
    let var_new = (2.0 * ls_new).exp();
    let var_old = (2.0 * ls_old).exp();
    let parts: Vec<f64> = (0..batch.n_episodes())
        .into_par_iter()
        .map(|e| {
            let (mut input, mut s) = (Vec::new(), Scratch::default());
            batch
                .episode(e)
                .map(|k| {
                    let mu = p.mean_with(&p.weights, batch.observation(k), &mut input, &mut s);
                    let dm = mu - batch.means[k];
                    ls_new - ls_old + (var_old + dm * dm) / (2.0 * var_new) - 0.5
                })
                .sum()
        })
        .collect();
    parts.iter().sum::<f64>() / batch.len() as f64
}

/// Fisher information of the collecting policy applied to `v`, using every `stride`-th step.
pub fn fisher_vector_product(policy: &PolicyParams, batch: &TrajectoryBatch, v: &[f64], stride: usize) -> Vec<f64> {
    let n_w = policy.weights.len();
    let inv_var = (-2.0 * policy.log_std).exp();
    let stride = stride.max(1);
    let used = (0..batch.len()).step_by(stride).count() as f64;
    let parts: Vec<Vec<f64>> = (0..batch.n_episodes())
        .into_par_iter()
        .map(|e| {
            let (mut input, mut s) = (Vec::new(), Scratch::default());
            let mut out = vec![0.0; n_w];
            for k in batch.episode(e).filter(|k| k % stride == 0) {
                policy.mean_with(&policy.weights, batch.observation(k), &mut input, &mut s);
                let jv = policy.net.jvp(&policy.weights, &v[..n_w], &mut s);
                policy.net.backward(&policy.weights, jv * inv_var / used, &mut out, &mut s);
            }
            out
        })
        .collect();
    let mut fv = ordered_sum(parts, n_w);
    fv.push(2.0 * v[n_w]);
    fv
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A x = b` for symmetric positive definite `A` given as a product.
pub fn conjugate_gradient(apply: impl Fn(&[f64]) -> Vec<f64>, b: &[f64], iters: usize) -> Vec<f64> {
    let mut x = vec![0.0; b.len()];
    let mut r = b.to_vec();
    let mut p = b.to_vec();
    let mut rr = dot(&r, &r);
    for _ in 0..iters {
        if rr < 1e-20 {
            break;
        }
        let ap = apply(&p);
        let alpha = rr / dot(&p, &ap);
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for i in 0..p.len() {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    x
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrustRegion {
    /// Bound on the mean KL divergence per update.
    pub delta: f64,
    pub cg_iters: usize,
    /// Added to the Fisher product as `damping · v`.
    pub cg_damping: f64,
    pub backtracks: usize,
    pub fisher_stride: usize,
}

impl Default for TrustRegion {
    fn default() -> Self {
        Self { delta: 0.01, cg_iters: 10, cg_damping: 0.1, backtracks: 10, fisher_stride: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateInfo {
    pub accepted: bool,
    pub kl: f64,
    pub improvement: f64,
    /// Fraction of the full natural step that was taken.
    pub step_fraction: f64,
}

/// One natural-gradient step with a backtracking line search that requires both
/// `KL ≤ δ` and a positive surrogate improvement; otherwise the policy is unchanged.
pub fn trust_region_update(
    policy: &PolicyParams,
    batch: &TrajectoryBatch,
    adv: &[f64],
    tr: &TrustRegion,
) -> Result<(PolicyParams, UpdateInfo), TrvoError> {
    let rejected = UpdateInfo { accepted: false, kl: 0.0, improvement: 0.0, step_fraction: 0.0 };
    let theta = policy.theta();
    let g = surrogate_gradient(policy, &theta, batch, adv);
    if let Some(i) = g.iter().position(|x| !x.is_finite()) {
        return Err(TrvoError::NonFinite(format!("policy gradient component {i} = {}", g[i])));
    }
    if g.iter().all(|x| *x == 0.0) {
        return Ok((policy.clone(), rejected));
    }
    let fvp = |v: &[f64]| {
        let mut out = fisher_vector_product(policy, batch, v, tr.fisher_stride);
        for (o, vi) in out.iter_mut().zip(v) {
            *o += tr.cg_damping * vi;
        }
        out
    };
    let x = conjugate_gradient(fvp, &g, tr.cg_iters);
    let shs = 0.5 * dot(&x, &fvp(&x));
    if !(shs > 0.0 && shs.is_finite()) {
        return Ok((policy.clone(), rejected));
    }
    let scale = (tr.delta / shs).sqrt();
    let base = surrogate(policy, &theta, batch, adv);
    let mut frac = 1.0;
    for _ in 0..tr.backtracks {
        let candidate: Vec<f64> = theta.iter().zip(&x).map(|(t, d)| t + frac * scale * d).collect();
        let kl = mean_kl(policy, &candidate, batch);
        let improvement = surrogate(policy, &candidate, batch, adv) - base;
        if kl.is_finite() && kl <= tr.delta && improvement > 0.0 {
            let next = policy.with_theta(&candidate);
            return Ok((next, UpdateInfo { accepted: true, kl, improvement, step_fraction: frac }));
        }
        frac *= 0.5;
    }
    Ok((policy.clone(), rejected))
}

/// Episodic task the trainer can sample.
pub trait Environment: Sync {
    fn obs_dim(&self) -> usize;
    /// Rewards are divided by this before learning.
    fn reward_scale(&self) -> f64;
    /// Plays episode `index`, asking `policy` for an action at each observation,
    /// and returns the rewards in environment units.
    fn rollout(&self, index: u64, policy: &mut dyn FnMut(&[f64]) -> Result<f64, TrvoError>) -> Result<Vec<f64>, TrvoError>;
}

/// Hedging episodes drawn on demand from a spread model on a fixed grid.
#[derive(Debug, Clone)]
pub struct SimulatedHedging {
    cfg: EnvConfig,
    model: SpreadModel,
    cost: CostModel,
    seed: u64,
    pricing: Arc<GridPricing>,
    premium: f64,
}

impl SimulatedHedging {
    pub fn new(cfg: EnvConfig, model: SpreadModel, grid: Arc<TradingGrid>, cost: CostModel, seed: u64) -> Result<Self, TrvoError> {
        model.validate().map_err(|e| TrvoError::InvalidHyperparams(e.to_string()))?;
        let strike = cfg.strike.unwrap_or(model.s0());
        let pricing = Arc::new(GridPricing::new(&cfg, grid, strike)?);
        let flat = crate::market_sim::MarketPath::new(pricing.grid().clone(), vec![model.s0(); pricing.grid().len()]);
        let premium = PricedPath::new(&cfg, pricing.clone(), &flat, &CostModel::Constant(0.0))?.premium();
        Ok(Self { cfg, model, cost, seed, pricing, premium })
    }

    pub fn premium(&self) -> f64 {
        self.premium
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn priced_episode(&self, index: u64) -> Result<PricedPath, TrvoError> {
        let path = self.model.path(self.pricing.grid(), self.seed, index);
        Ok(PricedPath::new(&self.cfg, self.pricing.clone(), &path, &self.cost)?)
    }
}

impl Environment for SimulatedHedging {
    fn obs_dim(&self) -> usize {
        4
    }

    fn reward_scale(&self) -> f64 {
        self.premium
    }

    fn rollout(&self, index: u64, policy: &mut dyn FnMut(&[f64]) -> Result<f64, TrvoError>) -> Result<Vec<f64>, TrvoError> {
        let path = self.priced_episode(index)?;
        let mut state = path.reset();
        let mut rewards = Vec::with_capacity(path.len() - 1);
        loop {
            let res = path.step(&state, policy(&state.features(path.premium()))?)?;
            rewards.push(res.reward);
            if res.done {
                return Ok(rewards);
            }
            state = res.state;
        }
    }
}

fn action_rng(seed: u64, episode: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ACTION_STREAM_KEY);
    rng.set_stream(episode);
    rng
}

/// Samples `count` episodes starting at `first`, in parallel, in index order.
pub fn collect_batch<E: Environment>(
    env: &E,
    policy: &PolicyParams,
    first: u64,
    count: usize,
    seed: u64,
) -> Result<TrajectoryBatch, TrvoError> {
    let scale = env.reward_scale();
    let episodes: Vec<EpisodeSamples> = (first..first + count as u64)
        .into_par_iter()
        .map(|index| {
            let mut rng = action_rng(seed, index);
            let mut ep = EpisodeSamples::default();
            let (mut input, mut s) = (Vec::new(), Scratch::default());
            let rewards = env.rollout(index, &mut |obs| {
                let mu = policy.mean_with(&policy.weights, obs, &mut input, &mut s);
                if !mu.is_finite() {
                    return Err(TrvoError::NonFinite(format!("policy mean {mu} for observation {obs:?}")));
                }
                let z: f64 = rng.sample(StandardNormal);
                let a = mu + policy.std() * z;
                ep.obs.extend_from_slice(obs);
                ep.actions.push(a);
                ep.means.push(mu);
                ep.log_probs.push(gaussian_log_prob(a, mu, policy.log_std));
                Ok(a)
            })?;
            ep.rewards = rewards.iter().map(|r| r / scale).collect();
            Ok(ep)
        })
        .collect::<Result<_, TrvoError>>()?;
    let mut batch = TrajectoryBatch { obs_dim: env.obs_dim(), log_std: policy.log_std, ..Default::default() };
    for ep in episodes {
        batch.push_episode(ep);
    }
    Ok(batch)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    /// Risk aversion on the user scale.
    pub lambda: f64,
    /// Discount of the objective `J` and `ν²`.
    pub gamma: f64,
    /// Discount of the reward-to-go behind advantages; `None` uses `gamma`.
    pub advantage_gamma: Option<f64>,
    pub trust_region: TrustRegion,
    /// Episodes per update.
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub init_mean: f64,
    pub init_log_std: f64,
}

impl Default for Hyperparams {
    /// Full scale: 625 updates of 64 episodes, 40,000 training episodes.
    fn default() -> Self {
        Self {
            lambda: 4.0,
            gamma: 0.999,
            advantage_gamma: None,
            trust_region: TrustRegion::default(),
            batch_size: 64,
            iterations: 625,
            seed: 0,
            hidden: vec![64, 64],
            init_mean: 0.5,
            init_log_std: (0.1f64).ln(),
        }
    }
}

impl Hyperparams {
    /// Reduced run of 63 updates of 64 episodes (4,032 training episodes) with a
    /// short advantage horizon, a wider trust region and a subsampled Fisher product.
    pub fn desk_scale() -> Self {
        let base = Self::default();
        Self {
            iterations: 63,
            advantage_gamma: Some(0.5),
            trust_region: TrustRegion { delta: 0.05, fisher_stride: 4, ..base.trust_region },
            ..base
        }
    }

    pub fn validate(&self) -> Result<(), TrvoError> {
        let bad = |m: String| Err(TrvoError::InvalidHyperparams(m));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda {} must be >= 0", self.lambda));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma {} must lie in (0, 1]", self.gamma));
        }
        if let Some(g) = self.advantage_gamma {
            if !(0.0..=1.0).contains(&g) {
                return bad(format!("advantage gamma {g} must lie in [0, 1]"));
            }
        }
        if !(self.trust_region.delta > 0.0) {
            return bad(format!("delta {} must be positive", self.trust_region.delta));
        }
        if self.batch_size == 0 || self.iterations == 0 || self.hidden.contains(&0) {
            return bad("batch size, iterations and hidden widths must be positive".into());
        }
        if self.trust_region.cg_iters == 0 || self.trust_region.backtracks == 0 {
            return bad("cg_iters and backtracks must be positive".into());
        }
        Ok(())
    }

    pub fn lambda_internal(&self) -> f64 {
        self.lambda * LAMBDA_UNIT
    }

    pub fn initial_policy(&self, obs_dim: usize) -> PolicyParams {
        if obs_dim == 4 {
            PolicyParams::for_hedging(&self.hidden, self.init_mean, self.init_log_std, self.seed)
        } else {
            PolicyParams::new(obs_dim, &self.hidden, self.init_mean, self.init_log_std, self.seed)
        }
    }
}

/// One row of the training log; money quantities in environment units (EUR).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainLogRow {
    pub iteration: usize,
    pub j: f64,
    pub nu2: f64,
    pub eta: f64,
    pub mean_kl: f64,
    pub episodes_seen: usize,
    pub accepted: bool,
    pub log_std: f64,
}

pub fn write_train_log<W: Write>(rows: &[TrainLogRow], out: W) -> Result<(), TrvoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "J", "nu2", "eta", "mean_kl", "episodes_seen"])?;
    for r in rows {
        w.write_record([
            r.iteration.to_string(),
            r.j.to_string(),
            r.nu2.to_string(),
            r.eta.to_string(),
            r.mean_kl.to_string(),
            r.episodes_seen.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Collect, estimate `J` and `ν²`, transform, compute advantages, update; repeated.
///
/// `on_iteration` sees the policy after each update (for checkpointing).
pub fn train<E: Environment>(
    env: &E,
    hp: &Hyperparams,
    init: Option<PolicyParams>,
    mut on_iteration: impl FnMut(&PolicyParams, &TrainLogRow) -> Result<(), TrvoError>,
) -> Result<(PolicyParams, Vec<TrainLogRow>), TrvoError> {
    hp.validate()?;
    let scale = env.reward_scale();
    let lambda = hp.lambda_internal() * scale;
    let mut policy = init.unwrap_or_else(|| hp.initial_policy(env.obs_dim()));
    if policy.obs_dim() != env.obs_dim() {
        return Err(TrvoError::InvalidHyperparams(format!(
            "policy takes {} inputs, environment emits {}",
            policy.obs_dim(),
            env.obs_dim()
        )));
    }
    let mut log = Vec::with_capacity(hp.iterations);
    for it in 0..hp.iterations {
        let first = (it * hp.batch_size) as u64;
        let batch = collect_batch(env, &policy, first, hp.batch_size, hp.seed)?;
        let j = estimate_j(&batch, hp.gamma);
        let nu2 = reward_volatility(&batch, j, hp.gamma);
        let limit = 100.0 * scale;
        if !j.is_finite() || (j * scale).abs() > limit {
            return Err(TrvoError::Diverged { iteration: it, j: j * scale, limit });
        }
        let transformed = transform_rewards(&batch.rewards, j, lambda);
        let adv = compute_advantages(&batch, &transformed, hp.advantage_gamma.unwrap_or(hp.gamma));
        let (next, info) = trust_region_update(&policy, &batch, &adv, &hp.trust_region)?;
        policy = next;
        let row = TrainLogRow {
            iteration: it,
            j: j * scale,
            nu2: nu2 * scale * scale,
            eta: (j - lambda * nu2) * scale,
            mean_kl: info.kl,
            episodes_seen: (it + 1) * hp.batch_size,
            accepted: info.accepted,
            log_std: policy.log_std,
        };
        on_iteration(&policy, &row)?;
        log.push(row);
    }
    Ok((policy, log))
}
