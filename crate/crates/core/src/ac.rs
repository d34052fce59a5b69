//! Batch actor-critic with a state-value network.
//!
//! The critic reads the decoder state `s_t` that produced action `t` and is
//! trained off-policy from a FIFO pool of `(s_t, v_t)` pairs, where `v_t` is
//! the discounted reward-to-go. Per-step rewards are incremental metric gains.

use std::collections::VecDeque;

use crate::checkpoint::{Checkpoint, Checkpointable};
use crate::error::{Error, Result};
use crate::metrics::{incremental_rewards, Metric};
use crate::policy::{
    decode_ranked, rollout, weighted_logprob_backward, DecodeConfig, DecodeMode, Gradients, PolicyParams, Trajectory,
};
use crate::tasks::SequencePair;
use crate::tensor::{dot, Matrix, SeededRng};

/// `V(s) = w2ᵀ·tanh(w1ᵀs + b1) + b2`.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueNetParams {
    /// `d × H`
    pub w1: Matrix,
    /// `H × 1`
    pub b1: Matrix,
    /// `H × 1`
    pub w2: Matrix,
    /// `1 × 1`
    pub b2: Matrix,
}

impl ValueNetParams {
    pub fn zeros(d: usize, h: usize) -> Self {
        ValueNetParams {
            w1: Matrix::zeros(d, h),
            b1: Matrix::zeros(h, 1),
            w2: Matrix::zeros(h, 1),
            b2: Matrix::zeros(1, 1),
        }
    }

    pub fn random(d: usize, h: usize, rng: &mut SeededRng) -> Self {
        ValueNetParams {
            w1: Matrix::random_uniform(d, h, 1.0 / (d as f64).sqrt(), rng),
            b1: Matrix::zeros(h, 1),
            w2: Matrix::random_uniform(h, 1, 1.0 / (h as f64).sqrt(), rng),
            b2: Matrix::zeros(1, 1),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden(&self) -> usize {
        self.w1.cols()
    }

    pub fn zeros_like(&self) -> Self {
        ValueNetParams::zeros(self.input_dim(), self.hidden())
    }

    pub fn matrices(&self) -> [(&'static str, &Matrix); 4] {
        [
            ("v_w1", &self.w1),
            ("v_b1", &self.b1),
            ("v_w2", &self.w2),
            ("v_b2", &self.b2),
        ]
    }

    fn matrices_mut(&mut self) -> [&mut Matrix; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.matrices()
            .iter()
            .flat_map(|(_, m)| m.as_slice().to_vec())
            .collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut off = 0;
        for m in self.matrices_mut() {
            let n = m.as_slice().len();
            m.as_mut_slice().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }

    pub fn axpy(&mut self, s: f64, other: &ValueNetParams) {
        for (m, (_, o)) in self.matrices_mut().into_iter().zip(other.matrices()) {
            m.axpy(s, o);
        }
    }

    pub fn norm(&self) -> f64 {
        self.matrices().iter().map(|(_, m)| m.sum_sq()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.matrices().iter().all(|(_, m)| m.is_finite())
    }

    pub fn max_abs_diff(&self, other: &ValueNetParams) -> f64 {
        self.matrices()
            .iter()
            .zip(other.matrices())
            .map(|((_, a), (_, b))| a.max_abs_diff(b))
            .fold(0.0, f64::max)
    }
}

impl Checkpointable for ValueNetParams {
    fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        for (name, m) in self.matrices() {
            ck.push(name, m.clone());
        }
        ck
    }

    fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let vp = ValueNetParams {
            w1: ck.take("v_w1")?,
            b1: ck.take("v_b1")?,
            w2: ck.take("v_w2")?,
            b2: ck.take("v_b2")?,
        };
        let h = vp.hidden();
        if vp.b1.shape() != (h, 1) || vp.w2.shape() != (h, 1) || vp.b2.shape() != (1, 1) {
            return Err(Error::Checkpoint(
                "value network matrices have inconsistent shapes".into(),
            ));
        }
        Ok(vp)
    }
}

fn check_state(vp: &ValueNetParams, s: &[f64]) -> Result<()> {
    if s.len() != vp.input_dim() {
        return Err(Error::LengthMismatch {
            op: "value network input",
            expected: vp.input_dim(),
            got: s.len(),
        });
    }
    Ok(())
}

fn hidden_layer(vp: &ValueNetParams, s: &[f64]) -> Vec<f64> {
    let mut z = vp.b1.as_slice().to_vec();
    vp.w1.matvec_t_acc(s, &mut z);
    z.iter().map(|v| v.tanh()).collect()
}

pub fn value_forward(vp: &ValueNetParams, s: &[f64]) -> Result<f64> {
    check_state(vp, s)?;
    let h = hidden_layer(vp, s);
    Ok(dot(vp.w2.as_slice(), &h) + vp.b2.as_slice()[0])
}

/// Gradient of `g·V(s)` with respect to the parameters.
pub fn value_backward(vp: &ValueNetParams, s: &[f64], g: f64) -> Result<ValueNetParams> {
    check_state(vp, s)?;
    let h = hidden_layer(vp, s);
    let mut grads = vp.zeros_like();
    grads.b2.as_mut_slice()[0] = g;
    for (o, &hv) in grads.w2.as_mut_slice().iter_mut().zip(&h) {
        *o = g * hv;
    }
    let gz: Vec<f64> = vp
        .w2
        .as_slice()
        .iter()
        .zip(&h)
        .map(|(w, hv)| g * w * (1.0 - hv * hv))
        .collect();
    grads.b1.as_mut_slice().copy_from_slice(&gz);
    grads.w1.add_outer(s, &gz);
    Ok(grads)
}

/// A critic regression pair.
#[derive(Clone, Debug, PartialEq)]
pub struct StateValueSample {
    pub state: Vec<f64>,
    pub target: f64,
}

/// `½Σᵢ(V(sᵢ) − vᵢ)²` and its gradient.
pub fn critic_loss_grad(vp: &ValueNetParams, samples: &[StateValueSample]) -> Result<(f64, ValueNetParams)> {
    let mut grads = vp.zeros_like();
    let mut loss = 0.0;
    for smp in samples {
        let err = value_forward(vp, &smp.state)? - smp.target;
        loss += 0.5 * err * err;
        grads.axpy(1.0, &value_backward(vp, &smp.state, err)?);
    }
    Ok((loss, grads))
}

/// One SGD step on the critic loss; returns the updated net and the
/// pre-update mean squared error.
pub fn critic_update(vp: &ValueNetParams, samples: &[StateValueSample], lr: f64) -> Result<(ValueNetParams, f64)> {
    if samples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let (loss, grads) = critic_loss_grad(vp, samples)?;
    if !grads.is_finite() {
        return Err(Error::NonFiniteGradient);
    }
    let mut next = vp.clone();
    next.axpy(-lr, &grads);
    Ok((next, 2.0 * loss / samples.len() as f64))
}

/// `v_t = Σ_{t'≥t} γ^{t'−t} r_{t'}`.
pub fn reward_to_go(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (o, &r) in out.iter_mut().zip(rewards).rev() {
        acc = r + gamma * acc;
        *o = acc;
    }
    out
}

/// One-step TD advantage `r + γ·V(s′) − V(s)`, with `V(s′) = 0` at terminal.
pub fn td_advantage(r: f64, v_now: f64, v_next: f64, gamma: f64, terminal: bool) -> f64 {
    r + if terminal { 0.0 } else { gamma * v_next } - v_now
}

/// Generalized advantage estimates `A_t = Σ_{i≥t} (γλ)^{i−t} δ_i`;
/// `values` holds `V(s_1..s_{T+1})`.
pub fn gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<Vec<f64>> {
    if values.len() != rewards.len() + 1 {
        return Err(Error::LengthMismatch {
            op: "gae values",
            expected: rewards.len() + 1,
            got: values.len(),
        });
    }
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        let delta = rewards[t] + gamma * values[t + 1] - values[t];
        acc = delta + gamma * lambda * acc;
        out[t] = acc;
    }
    Ok(out)
}

/// Bounded FIFO pool with uniform with-replacement draws.
#[derive(Clone, Debug)]
pub struct SamplePool<T> {
    capacity: usize,
    items: VecDeque<T>,
}

impl<T: Clone> SamplePool<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("pool capacity must be positive".into()));
        }
        Ok(SamplePool {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(item);
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }

    pub fn sample_indices(&self, n: usize, rng: &mut SeededRng) -> Result<Vec<usize>> {
        if self.items.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        Ok((0..n).map(|_| rng.below(self.items.len())).collect())
    }

    pub fn sample(&self, n: usize, rng: &mut SeededRng) -> Result<Vec<T>> {
        Ok(self
            .sample_indices(n, rng)?
            .into_iter()
            .map(|i| self.items[i].clone())
            .collect())
    }
}

/// A sampled trajectory with its per-step shaped rewards.
#[derive(Clone, Debug)]
pub struct Episode {
    pub traj: Trajectory,
    pub rewards: Vec<f64>,
    pub target: Vec<usize>,
}

impl Episode {
    pub fn new(traj: Trajectory, metric: Metric, target: &[usize]) -> Self {
        let rewards = incremental_rewards(metric, &traj.actions, target);
        Episode {
            traj,
            rewards,
            target: target.to_vec(),
        }
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

/// One sampled episode per pair, capped at `max_len` (default `T_e + 2`).
pub fn sample_episodes(
    p: &PolicyParams,
    batch: &[SequencePair],
    metric: Metric,
    max_len: Option<usize>,
    rng: &mut SeededRng,
) -> Result<Vec<Episode>> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    batch
        .iter()
        .map(|pair| {
            let cfg = DecodeConfig::new(DecodeMode::Sample, max_len.unwrap_or(pair.source.len() + 2));
            let traj = rollout(p, &pair.source, &cfg, rng, None)?;
            Ok(Episode::new(traj, metric, &pair.target))
        })
        .collect()
}

/// Anything that maps a decoder state to a scalar value.
pub trait StateCritic {
    fn value(&self, s: &[f64]) -> Result<f64>;
}

impl StateCritic for ValueNetParams {
    fn value(&self, s: &[f64]) -> Result<f64> {
        value_forward(self, s)
    }
}

/// Anything that scores every action in a decoder state.
pub trait ActionScorer {
    fn action_scores(&self, s: &[f64]) -> Result<Vec<f64>>;
}

/// Broadcasts a state value to all `n_actions` actions.
pub struct ValueBroadcast<'a, C: StateCritic> {
    pub critic: &'a C,
    pub n_actions: usize,
}

impl<C: StateCritic> ActionScorer for ValueBroadcast<'_, C> {
    fn action_scores(&self, s: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![self.critic.value(s)?; self.n_actions])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AdvantageMode {
    Td,
    Gae(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ACConfig {
    pub batch_size: usize,
    pub metric: Metric,
    pub gamma: f64,
    pub advantage: AdvantageMode,
    pub critic_lr: f64,
    pub critic_batch: usize,
    pub capacity: usize,
    pub max_len: Option<usize>,
}

impl ACConfig {
    pub fn new(batch_size: usize, metric: Metric) -> Self {
        ACConfig {
            batch_size,
            metric,
            gamma: 1.0,
            advantage: AdvantageMode::Td,
            critic_lr: 0.01,
            critic_batch: 32,
            capacity: 10_000,
            max_len: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} {v} outside [0, 1]")))
            }
        };
        unit("gamma", self.gamma)?;
        if let AdvantageMode::Gae(l) = self.advantage {
            unit("lambda", l)?;
        }
        if self.batch_size == 0 || self.critic_batch == 0 || self.capacity == 0 {
            return Err(Error::InvalidArgument(
                "batch sizes and capacity must be positive".into(),
            ));
        }
        if self.critic_lr.is_nan() || self.critic_lr <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "critic lr {} must be positive",
                self.critic_lr
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ACStats {
    pub mean_sample_reward: f64,
    pub mean_advantage: f64,
    pub critic_mse: f64,
    pub grad_norm: f64,
}

/// Critic regression pairs `(s_t, v_t)` of one episode.
pub fn value_samples(ep: &Episode, gamma: f64) -> Vec<StateValueSample> {
    ep.traj
        .states
        .iter()
        .zip(reward_to_go(&ep.rewards, gamma))
        .map(|(s, v)| StateValueSample {
            state: s.clone(),
            target: v,
        })
        .collect()
}

/// Per-step advantages of one episode under `critic`; the state after the
/// last step is terminal.
pub fn advantages<C: StateCritic>(critic: &C, ep: &Episode, gamma: f64, mode: AdvantageMode) -> Result<Vec<f64>> {
    let n = ep.traj.len();
    let mut values = ep
        .traj
        .states
        .iter()
        .map(|s| critic.value(s))
        .collect::<Result<Vec<f64>>>()?;
    values.push(0.0);
    match mode {
        AdvantageMode::Td => Ok((0..n)
            .map(|t| td_advantage(ep.rewards[t], values[t], values[t + 1], gamma, t + 1 == n))
            .collect()),
        AdvantageMode::Gae(lambda) => gae(&ep.rewards, &values, gamma, lambda),
    }
}

/// Batch-averaged gradient of `−Σ_t w_t log π(ŷ_t|·)` over episodes.
pub fn weighted_batch_gradient(p: &PolicyParams, episodes: &[Episode], weights: &[Vec<f64>]) -> Result<Gradients> {
    if episodes.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut acc = p.zeros_like();
    for (ep, w) in episodes.iter().zip(weights) {
        acc.axpy(1.0, &weighted_logprob_backward(p, &ep.traj, w)?);
    }
    acc.scale(1.0 / episodes.len() as f64);
    Ok(acc)
}

/// Actor gradient with advantages from a fixed critic.
pub fn actor_step<C: StateCritic>(
    p: &PolicyParams,
    critic: &C,
    episodes: &[Episode],
    gamma: f64,
    mode: AdvantageMode,
) -> Result<(Gradients, Vec<Vec<f64>>)> {
    let adv = episodes
        .iter()
        .map(|ep| advantages(critic, ep, gamma, mode))
        .collect::<Result<Vec<_>>>()?;
    Ok((weighted_batch_gradient(p, episodes, &adv)?, adv))
}

/// Value critic, its sample pool and configuration.
#[derive(Clone, Debug)]
pub struct ACTrainer {
    pub critic: ValueNetParams,
    pub pool: SamplePool<StateValueSample>,
    pub cfg: ACConfig,
}

impl ACTrainer {
    pub fn new(critic: ValueNetParams, cfg: ACConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(ACTrainer {
            critic,
            pool: SamplePool::new(cfg.capacity)?,
            cfg,
        })
    }

    /// Stores the episodes' `(s_t, v_t)` pairs and takes one critic step on
    /// `critic_batch` pooled draws; returns the pre-update mse.
    pub fn observe(&mut self, episodes: &[Episode], rng: &mut SeededRng) -> Result<f64> {
        for ep in episodes {
            for smp in value_samples(ep, self.cfg.gamma) {
                self.pool.push(smp);
            }
        }
        let draws = self.pool.sample(self.cfg.critic_batch, rng)?;
        let (critic, mse) = critic_update(&self.critic, &draws, self.cfg.critic_lr)?;
        self.critic = critic;
        Ok(mse)
    }

    /// Samples episodes, stores their `(s_t, v_t)` pairs, takes one critic
    /// step on `critic_batch` pooled draws and returns the actor gradient
    /// weighted by the refreshed critic's advantages.
    pub fn step(
        &mut self,
        p: &PolicyParams,
        batch: &[SequencePair],
        rng: &mut SeededRng,
    ) -> Result<(Gradients, ACStats)> {
        if batch.len() != self.cfg.batch_size {
            return Err(Error::LengthMismatch {
                op: "actor-critic batch",
                expected: self.cfg.batch_size,
                got: batch.len(),
            });
        }
        let episodes = sample_episodes(p, batch, self.cfg.metric, self.cfg.max_len, rng)?;
        let mse = self.observe(&episodes, rng)?;
        let (g, adv) = actor_step(p, &self.critic, &episodes, self.cfg.gamma, self.cfg.advantage)?;
        let n_steps: usize = adv.iter().map(Vec::len).sum();
        let stats = ACStats {
            mean_sample_reward: episodes.iter().map(Episode::total_reward).sum::<f64>() / episodes.len() as f64,
            mean_advantage: adv.iter().flatten().sum::<f64>() / n_steps.max(1) as f64,
            critic_mse: mse,
            grad_norm: g.norm(),
        };
        Ok((g, stats))
    }
}

/// Greedy decoding that ranks actions by `π(y|·)·A(s, y)`.
pub fn ac_inference_rank<S: ActionScorer>(
    p: &PolicyParams,
    scorer: &S,
    x: &[usize],
    max_len: usize,
) -> Result<Vec<usize>> {
    let traj = decode_ranked(p, x, max_len, |state, dist| {
        let a = scorer.action_scores(state)?;
        if a.len() != dist.len() {
            return Err(Error::LengthMismatch {
                op: "action scores",
                expected: dist.len(),
                got: a.len(),
            });
        }
        Ok(dist.iter().zip(&a).map(|(pi, adv)| pi * adv).collect())
    })?;
    Ok(traj.actions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::teacher_forced;
    use crate::tensor::{argmax, finite_diff_grad, rel_error};

    #[test]
    fn reward_to_go_examples() {
        assert_eq!(reward_to_go(&[1.0, 2.0, 3.0], 1.0), vec![6.0, 5.0, 3.0]);
        assert_eq!(reward_to_go(&[0.0, 0.0, 4.0], 0.5), vec![1.0, 2.0, 4.0]);
        assert_eq!(reward_to_go(&[0.3, -1.0], 0.0), vec![0.3, -1.0]);
    }

    #[test]
    fn td_advantage_examples() {
        assert_eq!(td_advantage(1.0, 0.25, 9.0, 0.0, false), 0.75);
        assert_eq!(td_advantage(1.0, 0.25, 9.0, 0.9, true), 0.75);
        assert_eq!(td_advantage(1.0, 0.5, 2.0, 0.5, false), 1.5);
    }

    #[test]
    fn gae_hand_example() {
        let a = gae(&[1.0, 0.0], &[0.2, 0.1, 0.0], 0.5, 0.5).unwrap();
        assert!((a[0] - 0.825).abs() < 1e-15);
        assert!((a[1] + 0.1).abs() < 1e-15);
        assert!(gae(&[1.0], &[0.0], 1.0, 1.0).is_err());
    }

    #[test]
    fn gae_limits_on_random_inputs() {
        let mut rng = SeededRng::new(11);
        for _ in 0..200 {
            let n = 1 + rng.below(8);
            let r: Vec<f64> = (0..n).map(|_| rng.uniform() * 2.0 - 1.0).collect();
            let mut v: Vec<f64> = (0..n).map(|_| rng.uniform() * 2.0 - 1.0).collect();
            v.push(0.0);
            let g = rng.uniform();
            let td = gae(&r, &v, g, 0.0).unwrap();
            for t in 0..n {
                assert!((td[t] - td_advantage(r[t], v[t], v[t + 1], g, t + 1 == n)).abs() <= 1e-10);
            }
            let mc = gae(&r, &v, g, 1.0).unwrap();
            let rtg = reward_to_go(&r, g);
            for t in 0..n {
                assert!((mc[t] - (rtg[t] - v[t])).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn value_forward_scalar_net() {
        let vp = ValueNetParams {
            w1: Matrix::from_vec(2, 1, vec![0.5, -1.0]).unwrap(),
            b1: Matrix::from_vec(1, 1, vec![0.1]).unwrap(),
            w2: Matrix::from_vec(1, 1, vec![2.0]).unwrap(),
            b2: Matrix::from_vec(1, 1, vec![-0.3]).unwrap(),
        };
        let s = [0.4, 0.2];
        let expect = 2.0 * (0.1f64 + 0.4 * 0.5 - 0.2).tanh() - 0.3;
        assert_eq!(value_forward(&vp, &s).unwrap(), expect);
        assert_eq!(value_forward(&ValueNetParams::zeros(2, 3), &s).unwrap(), 0.0);
        assert!(value_forward(&vp, &[1.0]).is_err());
    }

    #[test]
    fn critic_gradient_matches_finite_differences() {
        for seed in 0..5 {
            let mut rng = SeededRng::new(seed);
            let vp = ValueNetParams::random(4, 3, &mut rng);
            let samples: Vec<StateValueSample> = (0..5)
                .map(|_| StateValueSample {
                    state: (0..4).map(|_| rng.uniform()).collect(),
                    target: rng.uniform() * 2.0 - 1.0,
                })
                .collect();
            let (_, g) = critic_loss_grad(&vp, &samples).unwrap();
            let fd = finite_diff_grad(
                |x| {
                    let mut q = vp.clone();
                    q.set_flat(x);
                    critic_loss_grad(&q, &samples).unwrap().0
                },
                &vp.to_flat(),
                1e-5,
            );
            for (a, b) in g.to_flat().iter().zip(&fd) {
                assert!(rel_error(*a, *b, 1e-6) <= 1e-4, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let vp = ValueNetParams::random(3, 5, &mut SeededRng::new(7));
        let back =
            ValueNetParams::from_checkpoint(&Checkpoint::from_bytes(&vp.to_checkpoint().to_bytes()).unwrap()).unwrap();
        assert_eq!(back, vp);
    }

    #[test]
    fn critic_update_behaviour() {
        let mut rng = SeededRng::new(3);
        let vp = ValueNetParams::random(3, 4, &mut rng);
        let exact: Vec<StateValueSample> = (0..4)
            .map(|i| {
                let s = vec![i as f64 * 0.1, 0.5, -0.2];
                StateValueSample {
                    target: value_forward(&vp, &s).unwrap(),
                    state: s,
                }
            })
            .collect();
        let (same, mse) = critic_update(&vp, &exact, 0.1).unwrap();
        assert_eq!(mse, 0.0);
        assert_eq!(same, vp);

        let samples: Vec<StateValueSample> = (0..4)
            .map(|i| StateValueSample {
                state: vec![i as f64 * 0.3, -0.1, 0.4],
                target: i as f64 * 0.2 - 0.3,
            })
            .collect();
        let mut cur = vp;
        let mut last = f64::INFINITY;
        for _ in 0..100 {
            let (next, mse) = critic_update(&cur, &samples, 0.02).unwrap();
            assert!(mse < last);
            last = mse;
            cur = next;
        }
        assert!(critic_update(&cur, &[], 0.1).is_err());
    }

    #[test]
    fn pool_is_fifo_and_uniform() {
        let mut pool = SamplePool::new(10).unwrap();
        for i in 0..15 {
            pool.push(i);
        }
        assert_eq!(pool.len(), 10);
        assert_eq!(pool.iter().copied().collect::<Vec<_>>(), (5..15).collect::<Vec<_>>());
        let mut counts = [0usize; 15];
        for x in pool.sample(10_000, &mut SeededRng::new(5)).unwrap() {
            counts[x] += 1;
        }
        let chi2: f64 = counts[5..].iter().map(|&c| (c as f64 - 1000.0).powi(2) / 1000.0).sum();
        // χ²₉ critical value at p = 0.001
        assert!(chi2 < 27.877, "chi2 = {chi2}");
        assert!(SamplePool::<u8>::new(3)
            .unwrap()
            .sample(1, &mut SeededRng::new(0))
            .is_err());
    }

    struct ZeroCritic;
    impl StateCritic for ZeroCritic {
        fn value(&self, _: &[f64]) -> Result<f64> {
            Ok(0.0)
        }
    }

    fn episodes(p: &PolicyParams) -> Vec<Episode> {
        let batch = vec![
            SequencePair {
                source: vec![3, 4],
                target: vec![3, 4, 2],
            },
            SequencePair {
                source: vec![5, 3, 4],
                target: vec![5, 3, 4, 2],
            },
        ];
        sample_episodes(p, &batch, Metric::Rouge1F, None, &mut SeededRng::new(2)).unwrap()
    }

    #[test]
    fn zero_critic_gamma_zero_is_per_step_reinforce() {
        let p = PolicyParams::random(6, 4, &mut SeededRng::new(8));
        let eps = episodes(&p);
        let (g, adv) = actor_step(&p, &ZeroCritic, &eps, 0.0, AdvantageMode::Td).unwrap();
        for (a, ep) in adv.iter().zip(&eps) {
            assert_eq!(a, &ep.rewards);
        }
        let w: Vec<Vec<f64>> = eps.iter().map(|e| e.rewards.clone()).collect();
        assert_eq!(g, weighted_batch_gradient(&p, &eps, &w).unwrap());
    }

    #[test]
    fn zero_rewards_zero_critic_zero_gradient() {
        let p = PolicyParams::random(6, 4, &mut SeededRng::new(9));
        let mut eps = episodes(&p);
        for e in &mut eps {
            e.rewards.iter_mut().for_each(|r| *r = 0.0);
        }
        let (g, _) = actor_step(&p, &ZeroCritic, &eps, 0.7, AdvantageMode::Gae(0.9)).unwrap();
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn trainer_step_runs_and_fills_pool() {
        let p = PolicyParams::random(6, 4, &mut SeededRng::new(10));
        let mut cfg = ACConfig::new(2, Metric::Rouge1F);
        cfg.critic_batch = 4;
        cfg.advantage = AdvantageMode::Gae(0.95);
        let mut tr = ACTrainer::new(ValueNetParams::random(4, 4, &mut SeededRng::new(1)), cfg).unwrap();
        let batch = vec![
            SequencePair {
                source: vec![3, 4],
                target: vec![3, 4, 2],
            },
            SequencePair {
                source: vec![5],
                target: vec![5, 2],
            },
        ];
        let (g, stats) = tr.step(&p, &batch, &mut SeededRng::new(4)).unwrap();
        assert!(g.is_finite() && stats.critic_mse.is_finite());
        assert!(!tr.pool.is_empty());
        assert!(tr.step(&p, &batch[..1], &mut SeededRng::new(4)).is_err());
        cfg.gamma = 1.5;
        assert!(ACTrainer::new(ValueNetParams::zeros(4, 2), cfg).is_err());
    }

    struct Table(Vec<f64>);
    impl ActionScorer for Table {
        fn action_scores(&self, _: &[f64]) -> Result<Vec<f64>> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn inference_rank_cases() {
        let p = PolicyParams::random(6, 4, &mut SeededRng::new(12));
        let x = [3, 5, 4];
        let greedy = rollout(
            &p,
            &x,
            &DecodeConfig::new(DecodeMode::Greedy, 5),
            &mut SeededRng::new(0),
            None,
        )
        .unwrap();
        let ranked = ac_inference_rank(&p, &Table(vec![0.7; 6]), &x, 5).unwrap();
        assert_eq!(ranked, greedy.actions);

        let mut onehot = vec![0.0; 6];
        onehot[4] = 1.0;
        let ranked = ac_inference_rank(&p, &Table(onehot), &x, 3).unwrap();
        assert_eq!(ranked, vec![4, 4, 4]);

        // enumerate π·A at the first step
        let table = vec![0.1, -0.4, 0.3, 2.0, 0.05, 0.9];
        let ranked = ac_inference_rank(&p, &Table(table.clone()), &x, 1).unwrap();
        let dist = teacher_forced(&p, &x, &[0]).unwrap().dists[0].clone();
        let prods: Vec<f64> = dist.iter().zip(&table).map(|(a, b)| a * b).collect();
        assert_eq!(ranked[0], argmax(&prods));
        assert!(ac_inference_rank(&p, &Table(vec![1.0; 3]), &x, 2).is_err());
    }
}
