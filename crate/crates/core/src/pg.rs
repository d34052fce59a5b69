//! Policy-gradient trainers: REINFORCE with a batch baseline, self-critic,
//! the mixed CE/REINFORCE loss and MIXER's per-step split.
//!
//! Every trainer returns the batch-averaged gradient of a loss to be
//! *descended*; the sequence reward enters as a constant weight on every step
//! of the sampled trajectory.

use crate::error::{Error, Result};
use crate::metrics::{reward, Metric};
use crate::policy::{
    backward, ce_backward_on, forward_ce, mixer_rollout, rollout, weighted_logit_grads, weighted_logprob_backward,
    DecodeConfig, DecodeMode, Gradients, PolicyParams, Trajectory,
};
use crate::tasks::SequencePair;
use crate::tensor::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Baseline {
    None,
    /// Mean sampled reward of the batch.
    BatchMean,
    /// Reward of the model's own greedy decode of each item.
    SelfCritic,
    Constant(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PGConfig {
    pub batch_size: usize,
    pub baseline: Baseline,
    pub metric: Metric,
    /// Discount applied to the terminal reward when credited to earlier steps.
    pub gamma: f64,
    /// Sampling cap; `None` means `T_e + 2` per item.
    pub max_len: Option<usize>,
    pub stop_at_eos: bool,
}

impl PGConfig {
    pub fn new(batch_size: usize, baseline: Baseline, metric: Metric) -> Self {
        PGConfig {
            batch_size,
            baseline,
            metric,
            gamma: 1.0,
            max_len: None,
            stop_at_eos: true,
        }
    }

    pub fn max_len_for(&self, source: &[usize]) -> usize {
        self.max_len.unwrap_or(source.len() + 2)
    }

    fn sampling(&self, source: &[usize]) -> DecodeConfig {
        DecodeConfig {
            mode: DecodeMode::Sample,
            max_len: self.max_len_for(source),
            stop_at_eos: self.stop_at_eos,
        }
    }

    fn greedy(&self, source: &[usize]) -> DecodeConfig {
        DecodeConfig {
            mode: DecodeMode::Greedy,
            max_len: self.max_len_for(source),
            stop_at_eos: self.stop_at_eos,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepStats {
    pub mean_sample_reward: f64,
    pub mean_greedy_reward: Option<f64>,
    pub baseline: f64,
    pub grad_norm: f64,
}

fn check_batch(batch: &[SequencePair], cfg: &PGConfig) -> Result<()> {
    if !(0.0..=1.0).contains(&cfg.gamma) {
        return Err(Error::InvalidArgument(format!("gamma {} outside [0, 1]", cfg.gamma)));
    }
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if batch.len() != cfg.batch_size {
        return Err(Error::LengthMismatch {
            op: "policy-gradient batch",
            expected: cfg.batch_size,
            got: batch.len(),
        });
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Sums per-item gradients in batch order and divides by the batch size.
fn average(p: &PolicyParams, parts: impl IntoIterator<Item = Result<Gradients>>, n: usize) -> Result<Gradients> {
    let mut acc = p.zeros_like();
    for g in parts {
        acc.axpy(1.0, &g?);
    }
    acc.scale(1.0 / n as f64);
    Ok(acc)
}

/// `γ^{T−1−t}·r − b` for each step `t` of a length-`T` episode.
fn discounted_weights(len: usize, r: f64, b: f64, gamma: f64) -> Vec<f64> {
    (0..len).map(|t| gamma.powi((len - 1 - t) as i32) * r - b).collect()
}

/// REINFORCE under an arbitrary sequence reward `reward_fn(ŷ, Y)`.
pub fn reinforce_step_with<R>(
    p: &PolicyParams,
    batch: &[SequencePair],
    cfg: &PGConfig,
    rng: &mut SeededRng,
    reward_fn: R,
) -> Result<(Gradients, StepStats)>
where
    R: Fn(&[usize], &[usize]) -> f64,
{
    check_batch(batch, cfg)?;
    let trajs = batch
        .iter()
        .map(|pair| rollout(p, &pair.source, &cfg.sampling(&pair.source), rng, None))
        .collect::<Result<Vec<_>>>()?;
    let rewards: Vec<f64> = trajs
        .iter()
        .zip(batch)
        .map(|(t, pair)| reward_fn(&t.actions, &pair.target))
        .collect();

    let mut greedy_rewards = None;
    let baselines: Vec<f64> = match cfg.baseline {
        Baseline::None => vec![0.0; batch.len()],
        Baseline::Constant(c) => vec![c; batch.len()],
        Baseline::BatchMean => vec![mean(&rewards); batch.len()],
        Baseline::SelfCritic => {
            let g = batch
                .iter()
                .map(|pair| {
                    let t = rollout(p, &pair.source, &cfg.greedy(&pair.source), rng, None)?;
                    Ok(reward_fn(&t.actions, &pair.target))
                })
                .collect::<Result<Vec<f64>>>()?;
            greedy_rewards = Some(mean(&g));
            g
        }
    };

    let grads = average(
        p,
        trajs
            .iter()
            .zip(&rewards)
            .zip(&baselines)
            .map(|((t, &r), &b)| weighted_logprob_backward(p, t, &discounted_weights(t.len(), r, b, cfg.gamma))),
        batch.len(),
    )?;
    let stats = StepStats {
        mean_sample_reward: mean(&rewards),
        mean_greedy_reward: greedy_rewards,
        baseline: mean(&baselines),
        grad_norm: grads.norm(),
    };
    Ok((grads, stats))
}

/// REINFORCE with the configured baseline and metric reward.
pub fn reinforce_step(
    p: &PolicyParams,
    batch: &[SequencePair],
    cfg: &PGConfig,
    rng: &mut SeededRng,
) -> Result<(Gradients, StepStats)> {
    let metric = cfg.metric;
    reinforce_step_with(p, batch, cfg, rng, |y_hat, y| reward(metric, y_hat, y))
}

/// Self-critical REINFORCE: each item's baseline is the reward of its greedy
/// decode, which contributes no gradient.
pub fn self_critic_step(
    p: &PolicyParams,
    batch: &[SequencePair],
    cfg: &PGConfig,
    rng: &mut SeededRng,
) -> Result<(Gradients, StepStats)> {
    let cfg = PGConfig {
        baseline: Baseline::SelfCritic,
        ..*cfg
    };
    reinforce_step(p, batch, &cfg, rng)
}

/// Batch-averaged teacher-forced cross-entropy gradient and mean loss.
pub fn ce_step(p: &PolicyParams, batch: &[SequencePair]) -> Result<(Gradients, f64)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut loss = 0.0;
    let grads = average(
        p,
        batch.iter().map(|pair| {
            let (l, cache) = forward_ce(p, pair)?;
            loss += l;
            ce_backward_on(p, &cache, &pair.target)
        }),
        batch.len(),
    )?;
    Ok((grads, loss / batch.len() as f64))
}

/// Cross-entropy against the ground truth with decoder inputs chosen by
/// `mode` (`Scheduled(ε)` or `E2eTopK(K)`), capped at `|Y|` steps. Returns
/// the batch-averaged gradient and mean loss over the decoded steps.
pub fn feeding_ce_step(
    p: &PolicyParams,
    batch: &[SequencePair],
    mode: DecodeMode,
    rng: &mut SeededRng,
) -> Result<(Gradients, f64)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut loss = 0.0;
    let grads = average(
        p,
        batch.iter().map(|pair| {
            let cfg = DecodeConfig::new(mode, pair.target.len());
            let traj = rollout(p, &pair.source, &cfg, rng, Some(&pair.target))?;
            loss -= traj
                .dists
                .iter()
                .zip(&pair.target)
                .map(|(dist, &y)| dist[y].ln())
                .sum::<f64>();
            ce_backward_on(p, &traj, &pair.target)
        }),
        batch.len(),
    )?;
    Ok((grads, loss / batch.len() as f64))
}

/// `η·∇L_REINFORCE + (1−η)·∇L_CE` on the same batch.
pub fn mixed_loss_step(
    p: &PolicyParams,
    batch: &[SequencePair],
    cfg: &PGConfig,
    eta: f64,
    rng: &mut SeededRng,
) -> Result<(Gradients, StepStats)> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidArgument(format!("mixing weight {eta} outside [0, 1]")));
    }
    let (mut g, mut stats) = reinforce_step(p, batch, cfg, rng)?;
    let (g_ce, _) = ce_step(p, batch)?;
    g.scale(eta);
    g.axpy(1.0 - eta, &g_ce);
    stats.grad_norm = g.norm();
    Ok((g, stats))
}

/// One MIXER item: its hybrid trajectory and the per-step loss weights
/// (1 on teacher-forced steps, `r − r_b` on sampled steps).
#[derive(Clone, Debug)]
pub struct MixerItem {
    pub traj: Trajectory,
    pub split: usize,
    pub weights: Vec<f64>,
}

/// Builds the MIXER trajectories and weights without backpropagating.
pub fn mixer_plan(
    p: &PolicyParams,
    batch: &[SequencePair],
    splits: &[usize],
    cfg: &PGConfig,
    rng: &mut SeededRng,
) -> Result<(Vec<MixerItem>, StepStats)> {
    check_batch(batch, cfg)?;
    if splits.len() != batch.len() {
        return Err(Error::LengthMismatch {
            op: "mixer splits",
            expected: batch.len(),
            got: splits.len(),
        });
    }
    let trajs = batch
        .iter()
        .zip(splits)
        .map(|(pair, &k)| mixer_rollout(p, &pair.source, &pair.target, k, cfg.max_len_for(&pair.source), rng))
        .collect::<Result<Vec<_>>>()?;
    let rewards: Vec<f64> = trajs
        .iter()
        .zip(batch)
        .map(|(t, pair)| reward(cfg.metric, &t.actions, &pair.target))
        .collect();
    // baseline over the items that have a sampled segment
    let rl: Vec<f64> = rewards
        .iter()
        .zip(batch.iter().zip(splits))
        .filter(|(_, (pair, &k))| k < pair.target.len())
        .map(|(&r, _)| r)
        .collect();
    let r_b = match cfg.baseline {
        Baseline::None => 0.0,
        Baseline::Constant(c) => c,
        Baseline::BatchMean => mean(&rl),
        Baseline::SelfCritic => return Err(Error::InvalidArgument("MIXER uses a batch or constant baseline".into())),
    };
    let items = trajs
        .into_iter()
        .zip(splits)
        .zip(&rewards)
        .map(|((traj, &split), &r)| {
            let weights = (0..traj.len()).map(|t| if t < split { 1.0 } else { r - r_b }).collect();
            MixerItem { traj, split, weights }
        })
        .collect();
    let stats = StepStats {
        mean_sample_reward: mean(&rl),
        mean_greedy_reward: None,
        baseline: r_b,
        grad_norm: 0.0,
    };
    Ok((items, stats))
}

/// MIXER: CE on the first `split` steps of each item and REINFORCE on the
/// sampled remainder, in a single backward pass per item.
pub fn mixer_step(
    p: &PolicyParams,
    batch: &[SequencePair],
    splits: &[usize],
    cfg: &PGConfig,
    rng: &mut SeededRng,
) -> Result<(Gradients, StepStats)> {
    let (items, mut stats) = mixer_plan(p, batch, splits, cfg, rng)?;
    let g = average(
        p,
        items
            .iter()
            .map(|it| backward(p, &it.traj, &weighted_logit_grads(&it.traj, &it.weights))),
        batch.len(),
    )?;
    stats.grad_norm = g.norm();
    Ok((g, stats))
}
