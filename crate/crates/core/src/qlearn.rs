//! Q-network critics: DQN, double DQN and SARSA targets, dueling heads,
//! uniform and prioritized experience replay, target networks with hard or
//! Polyak synchronization, and a tabular mode for enumerable toy MDPs.

use std::collections::VecDeque;

use crate::ac::{reward_to_go, ActionScorer, Episode, StateCritic};
use crate::checkpoint::{Checkpoint, Checkpointable};
use crate::error::{Error, Result};
use crate::metrics::{reward, Metric};
use crate::policy::{Gradients, PolicyParams};
use crate::schedules::polyak_tau;
use crate::tensor::{argmax, Matrix, SeededRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aggregation {
    Max,
    Mean,
}

/// `Q = v + (a − agg(a))`.
pub fn dueling_aggregate(v: f64, a: &[f64], agg: Aggregation) -> Vec<f64> {
    let center = match agg {
        Aggregation::Max => a.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Aggregation::Mean => a.iter().sum::<f64>() / a.len() as f64,
    };
    a.iter().map(|x| v + (x - center)).collect()
}

/// Q-network weights; the variant fixes which heads exist.
#[derive(Clone, Debug, PartialEq)]
pub enum QNetParams {
    /// `Q = qᵀ·tanh(w1ᵀs + b1)`
    Plain { w1: Matrix, b1: Matrix, q: Matrix },
    /// Shared trunk with a value head `v` (`H × 1`) and advantage head `a`.
    Dueling {
        w1: Matrix,
        b1: Matrix,
        v: Matrix,
        a: Matrix,
        agg: Aggregation,
    },
    /// `Q = qᵀ·s` on one-hot state features.
    Tabular { q: Matrix },
}

impl QNetParams {
    pub fn plain(d: usize, h: usize, n_actions: usize, rng: &mut SeededRng) -> Self {
        QNetParams::Plain {
            w1: Matrix::random_uniform(d, h, 1.0 / (d as f64).sqrt(), rng),
            b1: Matrix::zeros(h, 1),
            q: Matrix::random_uniform(h, n_actions, 1.0 / (h as f64).sqrt(), rng),
        }
    }

    pub fn dueling(d: usize, h: usize, n_actions: usize, agg: Aggregation, rng: &mut SeededRng) -> Self {
        QNetParams::Dueling {
            w1: Matrix::random_uniform(d, h, 1.0 / (d as f64).sqrt(), rng),
            b1: Matrix::zeros(h, 1),
            v: Matrix::random_uniform(h, 1, 1.0 / (h as f64).sqrt(), rng),
            a: Matrix::random_uniform(h, n_actions, 1.0 / (h as f64).sqrt(), rng),
            agg,
        }
    }

    pub fn tabular(n_states: usize, n_actions: usize) -> Self {
        QNetParams::Tabular {
            q: Matrix::zeros(n_states, n_actions),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            QNetParams::Plain { w1, .. } | QNetParams::Dueling { w1, .. } => w1.rows(),
            QNetParams::Tabular { q } => q.rows(),
        }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            QNetParams::Plain { q, .. } | QNetParams::Tabular { q } => q.cols(),
            QNetParams::Dueling { a, .. } => a.cols(),
        }
    }

    pub fn matrices(&self) -> Vec<(&'static str, &Matrix)> {
        match self {
            QNetParams::Plain { w1, b1, q } => vec![("q_w1", w1), ("q_b1", b1), ("q_head", q)],
            QNetParams::Dueling { w1, b1, v, a, .. } => {
                vec![("q_w1", w1), ("q_b1", b1), ("q_v", v), ("q_a", a)]
            }
            QNetParams::Tabular { q } => vec![("q_table", q)],
        }
    }

    fn matrices_mut(&mut self) -> Vec<&mut Matrix> {
        match self {
            QNetParams::Plain { w1, b1, q } => vec![w1, b1, q],
            QNetParams::Dueling { w1, b1, v, a, .. } => vec![w1, b1, v, a],
            QNetParams::Tabular { q } => vec![q],
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for m in z.matrices_mut() {
            m.scale(0.0);
        }
        z
    }

    fn same_layout(&self, other: &QNetParams) -> bool {
        std::mem::discriminant(self) == std::mem::discriminant(other)
            && self
                .matrices()
                .iter()
                .zip(other.matrices())
                .all(|((_, a), (_, b))| a.shape() == b.shape())
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

    pub fn axpy(&mut self, s: f64, other: &QNetParams) {
        let others: Vec<Matrix> = other.matrices().into_iter().map(|(_, m)| m.clone()).collect();
        for (m, o) in self.matrices_mut().into_iter().zip(&others) {
            m.axpy(s, o);
        }
    }

    pub fn norm(&self) -> f64 {
        self.matrices().iter().map(|(_, m)| m.sum_sq()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.matrices().iter().all(|(_, m)| m.is_finite())
    }

    pub fn max_abs_diff(&self, other: &QNetParams) -> f64 {
        self.matrices()
            .iter()
            .zip(other.matrices())
            .map(|((_, a), (_, b))| a.max_abs_diff(b))
            .fold(0.0, f64::max)
    }
}

fn trunk(w1: &Matrix, b1: &Matrix, s: &[f64]) -> Vec<f64> {
    let mut z = b1.as_slice().to_vec();
    w1.matvec_t_acc(s, &mut z);
    z.iter().map(|v| v.tanh()).collect()
}

pub fn q_forward(qn: &QNetParams, s: &[f64]) -> Result<Vec<f64>> {
    if s.len() != qn.input_dim() {
        return Err(Error::LengthMismatch {
            op: "Q-network input",
            expected: qn.input_dim(),
            got: s.len(),
        });
    }
    Ok(match qn {
        QNetParams::Plain { w1, b1, q } => q.matvec_t(&trunk(w1, b1, s)),
        QNetParams::Dueling { w1, b1, v, a, agg } => {
            let h = trunk(w1, b1, s);
            let val = v.matvec_t(&h)[0];
            dueling_aggregate(val, &a.matvec_t(&h), *agg)
        }
        QNetParams::Tabular { q } => q.matvec_t(s),
    })
}

/// Gradient of `gᵀ·Q(s)` with respect to the parameters.
pub fn q_backward(qn: &QNetParams, s: &[f64], g: &[f64]) -> Result<QNetParams> {
    if g.len() != qn.n_actions() {
        return Err(Error::LengthMismatch {
            op: "Q-network output gradient",
            expected: qn.n_actions(),
            got: g.len(),
        });
    }
    q_forward(qn, s)?;
    let mut grads = qn.zeros_like();
    match (qn, &mut grads) {
        (
            QNetParams::Plain { w1, b1, q },
            QNetParams::Plain {
                w1: gw1,
                b1: gb1,
                q: gq,
            },
        ) => {
            let h = trunk(w1, b1, s);
            gq.add_outer(&h, g);
            let gz: Vec<f64> = q
                .matvec(g)
                .iter()
                .zip(&h)
                .map(|(gh, hv)| gh * (1.0 - hv * hv))
                .collect();
            gb1.as_mut_slice().copy_from_slice(&gz);
            gw1.add_outer(s, &gz);
        }
        (
            QNetParams::Dueling { w1, b1, v, a, agg },
            QNetParams::Dueling {
                w1: gw1,
                b1: gb1,
                v: gv,
                a: ga,
                ..
            },
        ) => {
            let h = trunk(w1, b1, s);
            let total: f64 = g.iter().sum();
            let mut g_adv = g.to_vec();
            match agg {
                Aggregation::Mean => g_adv.iter_mut().for_each(|x| *x -= total / g.len() as f64),
                Aggregation::Max => g_adv[argmax(&a.matvec_t(&h))] -= total,
            }
            gv.add_outer(&h, &[total]);
            ga.add_outer(&h, &g_adv);
            let mut gh = a.matvec(&g_adv);
            for (o, vv) in gh.iter_mut().zip(v.as_slice()) {
                *o += vv * total;
            }
            let gz: Vec<f64> = gh.iter().zip(&h).map(|(x, hv)| x * (1.0 - hv * hv)).collect();
            gb1.as_mut_slice().copy_from_slice(&gz);
            gw1.add_outer(s, &gz);
        }
        (QNetParams::Tabular { .. }, QNetParams::Tabular { q: gq }) => gq.add_outer(s, g),
        _ => unreachable!("zeros_like keeps the variant"),
    }
    Ok(grads)
}

impl ActionScorer for QNetParams {
    fn action_scores(&self, s: &[f64]) -> Result<Vec<f64>> {
        q_forward(self, s)
    }
}

impl Checkpointable for QNetParams {
    fn to_checkpoint(&self) -> Checkpoint {
        let code = match self {
            QNetParams::Plain { .. } => 0.0,
            QNetParams::Dueling {
                agg: Aggregation::Max, ..
            } => 1.0,
            QNetParams::Dueling {
                agg: Aggregation::Mean, ..
            } => 2.0,
            QNetParams::Tabular { .. } => 3.0,
        };
        let mut ck = Checkpoint::new();
        ck.push("q_arch", Matrix::from_vec(1, 1, vec![code]).expect("1x1"));
        for (name, m) in self.matrices() {
            ck.push(name, m.clone());
        }
        ck
    }

    fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let code = ck.take("q_arch")?.as_slice()[0];
        let qn = match code as i64 {
            0 => QNetParams::Plain {
                w1: ck.take("q_w1")?,
                b1: ck.take("q_b1")?,
                q: ck.take("q_head")?,
            },
            1 | 2 => QNetParams::Dueling {
                w1: ck.take("q_w1")?,
                b1: ck.take("q_b1")?,
                v: ck.take("q_v")?,
                a: ck.take("q_a")?,
                agg: if code == 1.0 {
                    Aggregation::Max
                } else {
                    Aggregation::Mean
                },
            },
            3 => QNetParams::Tabular { q: ck.take("q_table")? },
            _ => return Err(Error::Checkpoint(format!("unknown Q-network architecture code {code}"))),
        };
        let ok = match &qn {
            QNetParams::Plain { w1, b1, q } => b1.shape() == (w1.cols(), 1) && q.rows() == w1.cols(),
            QNetParams::Dueling { w1, b1, v, a, .. } => {
                b1.shape() == (w1.cols(), 1) && v.shape() == (w1.cols(), 1) && a.rows() == w1.cols()
            }
            QNetParams::Tabular { .. } => true,
        };
        if !ok {
            return Err(Error::Checkpoint("Q-network matrices have inconsistent shapes".into()));
        }
        Ok(qn)
    }
}

pub fn dqn_target(r: f64, next_q: &[f64], done: bool, gamma: f64) -> f64 {
    if done {
        r
    } else {
        r + gamma * next_q.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Action chosen by the target network, valued by the live network.
pub fn ddqn_target(r: f64, next_q_live: &[f64], next_q_target: &[f64], done: bool, gamma: f64) -> f64 {
    if done {
        r
    } else {
        r + gamma * next_q_live[argmax(next_q_target)]
    }
}

pub fn sarsa_target(r: f64, next_q_live: &[f64], next_action: usize, done: bool, gamma: f64) -> Result<f64> {
    if next_action >= next_q_live.len() {
        return Err(Error::OutOfVocab {
            index: next_action,
            vocab: next_q_live.len(),
        });
    }
    Ok(if done { r } else { r + gamma * next_q_live[next_action] })
}

/// One transition `(s_t, y_t, s_{t+1}, r_t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Experience {
    pub state: Vec<f64>,
    pub action: usize,
    /// Equal to `state` on terminal transitions; never read there.
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    /// Action actually taken in `next_state` (SARSA).
    pub next_action: Option<usize>,
    /// Discounted reward-to-go from this step (ground-truth Q target).
    pub return_to_go: f64,
    pub td_error: f64,
}

/// Transitions of one episode; the last step is terminal.
pub fn episode_experiences(ep: &Episode, gamma: f64) -> Vec<Experience> {
    let n = ep.traj.len();
    let rtg = reward_to_go(&ep.rewards, gamma);
    (0..n)
        .map(|t| {
            let done = t + 1 == n;
            Experience {
                state: ep.traj.states[t].clone(),
                action: ep.traj.actions[t],
                next_state: ep.traj.states[if done { t } else { t + 1 }].clone(),
                reward: ep.rewards[t],
                done,
                next_action: (!done).then(|| ep.traj.actions[t + 1]),
                return_to_go: rtg[t],
                td_error: 0.0,
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PriorityDirection {
    /// Small TD errors are drawn more often.
    LowFirst,
    HighFirst,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ReplayMode {
    Uniform,
    Prioritized { direction: PriorityDirection, alpha: f64 },
}

/// Bounded FIFO experience store.
#[derive(Clone, Debug)]
pub struct ExperienceBuffer {
    capacity: usize,
    items: VecDeque<Experience>,
    mode: ReplayMode,
}

impl ExperienceBuffer {
    pub fn new(capacity: usize, mode: ReplayMode) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("buffer capacity must be positive".into()));
        }
        if let ReplayMode::Prioritized { alpha, .. } = mode {
            if alpha.is_nan() || alpha < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "priority exponent {alpha} must be non-negative"
                )));
            }
        }
        Ok(ExperienceBuffer {
            capacity,
            items: VecDeque::new(),
            mode,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn mode(&self) -> ReplayMode {
        self.mode
    }

    pub fn get(&self, i: usize) -> Option<&Experience> {
        self.items.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        self.items.iter()
    }

    /// Appends `e`, evicting the oldest item at capacity. Under prioritized
    /// replay the new item gets the current maximal priority.
    pub fn push(&mut self, mut e: Experience) {
        if let ReplayMode::Prioritized { direction, .. } = self.mode {
            e.td_error = match direction {
                PriorityDirection::LowFirst => 0.0,
                PriorityDirection::HighFirst => self.items.iter().map(|x| x.td_error.abs()).fold(1.0, f64::max),
            };
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(e);
    }

    pub fn set_td_error(&mut self, i: usize, td: f64) -> Result<()> {
        let len = self.items.len();
        let item = self
            .items
            .get_mut(i)
            .ok_or_else(|| Error::InvalidRange(format!("experience index {i} beyond buffer size {len}")))?;
        item.td_error = td;
        Ok(())
    }

    /// Sampling weights, normalized to sum to one.
    pub fn probabilities(&self) -> Vec<f64> {
        let n = self.items.len();
        let w: Vec<f64> = match self.mode {
            ReplayMode::Uniform => vec![1.0; n],
            ReplayMode::Prioritized { direction, alpha } => {
                let sign = match direction {
                    PriorityDirection::LowFirst => -1.0,
                    PriorityDirection::HighFirst => 1.0,
                };
                self.items
                    .iter()
                    .map(|e| (e.td_error.abs() + 1e-6).powf(sign * alpha))
                    .collect()
            }
        };
        let total: f64 = w.iter().sum();
        w.into_iter().map(|x| x / total).collect()
    }

    /// `n` with-replacement draws.
    pub fn sample_indices(&self, n: usize, rng: &mut SeededRng) -> Result<Vec<usize>> {
        if self.items.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        if n == 0 {
            return Err(Error::InvalidArgument("sample size must be positive".into()));
        }
        Ok(match self.mode {
            ReplayMode::Uniform => (0..n).map(|_| rng.below(self.items.len())).collect(),
            ReplayMode::Prioritized { .. } => {
                let probs = self.probabilities();
                (0..n).map(|_| rng.categorical(&probs)).collect()
            }
        })
    }

    pub fn sample(&self, n: usize, rng: &mut SeededRng) -> Result<Vec<Experience>> {
        Ok(self
            .sample_indices(n, rng)?
            .into_iter()
            .map(|i| self.items[i].clone())
            .collect())
    }
}

/// `½Σᵢ(Q(sᵢ, yᵢ) − qᵢ)² + η·Σᵢ Σ_y (Q(sᵢ, y) − mean_y Q(sᵢ, ·))²` and its
/// gradient.
pub fn qnet_loss_grad(
    qn: &QNetParams,
    batch: &[Experience],
    targets: &[f64],
    shrink: f64,
) -> Result<(f64, QNetParams)> {
    if batch.len() != targets.len() {
        return Err(Error::LengthMismatch {
            op: "Q targets",
            expected: batch.len(),
            got: targets.len(),
        });
    }
    let mut grads = qn.zeros_like();
    let mut loss = 0.0;
    for (e, &target) in batch.iter().zip(targets) {
        let q = q_forward(qn, &e.state)?;
        if e.action >= q.len() {
            return Err(Error::OutOfVocab {
                index: e.action,
                vocab: q.len(),
            });
        }
        let mut g = vec![0.0; q.len()];
        let err = q[e.action] - target;
        loss += 0.5 * err * err;
        g[e.action] = err;
        if shrink != 0.0 {
            let mean = q.iter().sum::<f64>() / q.len() as f64;
            for (gy, qy) in g.iter_mut().zip(&q) {
                loss += shrink * (qy - mean) * (qy - mean);
                *gy += 2.0 * shrink * (qy - mean);
            }
        }
        grads.axpy(1.0, &q_backward(qn, &e.state, &g)?);
    }
    Ok((loss, grads))
}

/// One SGD step; returns the updated net and the pre-update mean squared
/// error on the chosen actions.
pub fn qnet_update(
    qn: &QNetParams,
    batch: &[Experience],
    targets: &[f64],
    lr: f64,
    shrink: Option<f64>,
) -> Result<(QNetParams, f64)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let (_, grads) = qnet_loss_grad(qn, batch, targets, shrink.unwrap_or(0.0))?;
    if !grads.is_finite() {
        return Err(Error::NonFiniteGradient);
    }
    let mut sq = 0.0;
    for (e, t) in batch.iter().zip(targets) {
        let q = q_forward(qn, &e.state)?[e.action];
        sq += (q - t) * (q - t);
    }
    let mut next = qn.clone();
    next.axpy(-lr, &grads);
    Ok((next, sq / batch.len() as f64))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SyncMode {
    /// Full copy every `n` updates.
    Hard(u64),
    /// `Ψ′ ← τΨ′ + (1−τ)Ψ` with the step-dependent `τ`.
    Polyak,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetNet {
    pub params: QNetParams,
    pub sync: SyncMode,
}

impl TargetNet {
    pub fn new(live: &QNetParams, sync: SyncMode) -> Result<Self> {
        if sync == SyncMode::Hard(0) {
            return Err(Error::InvalidArgument("hard sync interval must be positive".into()));
        }
        Ok(TargetNet {
            params: live.clone(),
            sync,
        })
    }
}

/// Blends `target` toward `live` with `Ψ′ ← τΨ′ + (1−τ)Ψ`.
pub fn polyak_blend(target: &QNetParams, live: &QNetParams, tau: f64) -> Result<QNetParams> {
    if !target.same_layout(live) {
        return Err(Error::InvalidArgument(
            "target and live Q-networks differ in shape".into(),
        ));
    }
    let mut out = target.clone();
    out.set_flat(
        &target
            .to_flat()
            .iter()
            .zip(live.to_flat())
            .map(|(t, l)| tau * t + (1.0 - tau) * l)
            .collect::<Vec<_>>(),
    );
    Ok(out)
}

pub fn target_sync(live: &QNetParams, target: &mut TargetNet, step: u64) -> Result<()> {
    if !target.params.same_layout(live) {
        return Err(Error::InvalidArgument(
            "target and live Q-networks differ in shape".into(),
        ));
    }
    match target.sync {
        SyncMode::Hard(n) => {
            if step.is_multiple_of(n) {
                target.params = live.clone();
            }
        }
        SyncMode::Polyak => target.params = polyak_blend(&target.params, live, polyak_tau(step))?,
    }
    Ok(())
}

/// Per item, the ground-truth reward-to-go with probability `eps_q`, else
/// the bootstrap target.
pub fn scheduled_q_targets(
    batch: &[Experience],
    bootstrap: &[f64],
    eps_q: f64,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    if batch.len() != bootstrap.len() {
        return Err(Error::LengthMismatch {
            op: "bootstrap targets",
            expected: batch.len(),
            got: bootstrap.len(),
        });
    }
    if !(0.0..=1.0).contains(&eps_q) {
        return Err(Error::InvalidArgument(format!("eps_q {eps_q} outside [0, 1]")));
    }
    Ok(batch
        .iter()
        .zip(bootstrap)
        .map(|(e, &b)| {
            let gt = eps_q >= 1.0 || (eps_q > 0.0 && rng.bernoulli(eps_q));
            if gt {
                e.return_to_go
            } else {
                b
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetKind {
    Dqn,
    Ddqn,
    Sarsa,
}

/// Bootstrap targets for `batch` under `kind`.
pub fn bootstrap_targets(
    kind: TargetKind,
    live: &QNetParams,
    target: &QNetParams,
    batch: &[Experience],
    gamma: f64,
) -> Result<Vec<f64>> {
    batch
        .iter()
        .map(|e| {
            if e.done {
                return Ok(e.reward);
            }
            let next_live = q_forward(live, &e.next_state)?;
            match kind {
                TargetKind::Dqn => Ok(dqn_target(e.reward, &next_live, false, gamma)),
                TargetKind::Ddqn => {
                    let next_target = q_forward(target, &e.next_state)?;
                    Ok(ddqn_target(e.reward, &next_live, &next_target, false, gamma))
                }
                TargetKind::Sarsa => {
                    let a = e
                        .next_action
                        .ok_or_else(|| Error::InvalidArgument("SARSA needs the next action".into()))?;
                    sarsa_target(e.reward, &next_live, a, false, gamma)
                }
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QConfig {
    pub gamma: f64,
    pub kind: TargetKind,
    pub lr: f64,
    pub batch_size: usize,
    pub capacity: usize,
    pub replay: ReplayMode,
    pub sync: SyncMode,
    pub shrink: Option<f64>,
}

impl QConfig {
    pub fn new(kind: TargetKind) -> Self {
        QConfig {
            gamma: 1.0,
            kind,
            lr: 0.01,
            batch_size: 32,
            capacity: 10_000,
            replay: ReplayMode::Prioritized {
                direction: PriorityDirection::LowFirst,
                alpha: 1.0,
            },
            sync: SyncMode::Hard(500),
            shrink: None,
        }
    }
}

/// Live and target Q-networks with their replay buffer.
#[derive(Clone, Debug)]
pub struct QCritic {
    pub live: QNetParams,
    pub target: TargetNet,
    pub buffer: ExperienceBuffer,
    pub cfg: QConfig,
    pub updates: u64,
}

impl QCritic {
    pub fn new(live: QNetParams, cfg: QConfig) -> Result<Self> {
        if !(0.0..=1.0).contains(&cfg.gamma) {
            return Err(Error::InvalidArgument(format!("gamma {} outside [0, 1]", cfg.gamma)));
        }
        if cfg.batch_size == 0 || cfg.lr.is_nan() || cfg.lr <= 0.0 {
            return Err(Error::InvalidArgument("Q batch size and lr must be positive".into()));
        }
        Ok(QCritic {
            target: TargetNet::new(&live, cfg.sync)?,
            buffer: ExperienceBuffer::new(cfg.capacity, cfg.replay)?,
            live,
            cfg,
            updates: 0,
        })
    }

    pub fn observe(&mut self, episodes: &[Episode]) {
        for ep in episodes {
            for e in episode_experiences(ep, self.cfg.gamma) {
                self.buffer.push(e);
            }
        }
    }

    /// One critic update on a replay batch, mixing in ground-truth returns
    /// with probability `eps_q`; then syncs the target net. Returns the
    /// pre-update mse.
    pub fn train_step(&mut self, eps_q: f64, rng: &mut SeededRng) -> Result<f64> {
        let idx = self.buffer.sample_indices(self.cfg.batch_size, rng)?;
        let batch: Vec<Experience> = idx.iter().map(|&i| self.buffer.items[i].clone()).collect();
        let boot = bootstrap_targets(self.cfg.kind, &self.live, &self.target.params, &batch, self.cfg.gamma)?;
        let targets = scheduled_q_targets(&batch, &boot, eps_q, rng)?;
        for ((&i, e), t) in idx.iter().zip(&batch).zip(&targets) {
            let q = q_forward(&self.live, &e.state)?[e.action];
            self.buffer.set_td_error(i, t - q)?;
        }
        let (live, mse) = qnet_update(&self.live, &batch, &targets, self.cfg.lr, self.cfg.shrink)?;
        self.live = live;
        self.updates += 1;
        target_sync(&self.live, &mut self.target, self.updates)?;
        Ok(mse)
    }
}

/// Actor weights `Q(s_t, ŷ_t)`, minus `V(s_t)` when a value baseline is given.
pub fn q_weights<S: ActionScorer, V: StateCritic>(scorer: &S, ep: &Episode, baseline: Option<&V>) -> Result<Vec<f64>> {
    ep.traj
        .states
        .iter()
        .zip(&ep.traj.actions)
        .map(|(s, &a)| {
            let q = scorer.action_scores(s)?;
            let v = match baseline {
                Some(c) => c.value(s)?,
                None => 0.0,
            };
            q.get(a).map(|qa| qa - v).ok_or(Error::OutOfVocab {
                index: a,
                vocab: q.len(),
            })
        })
        .collect()
}

/// Batch-averaged actor gradient of `−Σ_t w_t log π(ŷ_t|·)` with Q weights.
pub fn q_actor_step<S: ActionScorer, V: StateCritic>(
    p: &PolicyParams,
    scorer: &S,
    episodes: &[Episode],
    baseline: Option<&V>,
) -> Result<Gradients> {
    let weights = episodes
        .iter()
        .map(|ep| q_weights(scorer, ep, baseline))
        .collect::<Result<Vec<_>>>()?;
    crate::ac::weighted_batch_gradient(p, episodes, &weights)
}

/// Deterministic episodic MDP over token prefixes: each step appends one of
/// `actions`, episodes last `target.len()` steps and the per-step reward is
/// the incremental metric gain against `target`.
#[derive(Clone, Debug, PartialEq)]
pub struct SortMdp {
    pub target: Vec<usize>,
    pub actions: Vec<usize>,
    pub metric: Metric,
}

impl SortMdp {
    /// The sort task on `source`: the target is `source` in ascending order.
    pub fn new(source: &[usize], actions: Vec<usize>, metric: Metric) -> Result<Self> {
        if source.is_empty() || actions.is_empty() {
            return Err(Error::InvalidArgument(
                "MDP needs a source and at least one action".into(),
            ));
        }
        let mut target = source.to_vec();
        target.sort_unstable();
        Ok(SortMdp {
            target,
            actions,
            metric,
        })
    }

    pub fn horizon(&self) -> usize {
        self.target.len()
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    /// Non-terminal states are action-index prefixes shorter than the horizon.
    pub fn n_states(&self) -> usize {
        (0..self.horizon()).map(|k| self.n_actions().pow(k as u32)).sum()
    }

    pub fn state_id(&self, prefix: &[usize]) -> usize {
        let a = self.n_actions();
        let offset: usize = (0..prefix.len()).map(|k| a.pow(k as u32)).sum();
        offset + prefix.iter().fold(0, |acc, &i| acc * a + i)
    }

    pub fn features(&self, prefix: &[usize]) -> Vec<f64> {
        let mut f = vec![0.0; self.n_states()];
        f[self.state_id(prefix)] = 1.0;
        f
    }

    fn tokens(&self, prefix: &[usize]) -> Vec<usize> {
        prefix.iter().map(|&i| self.actions[i]).collect()
    }

    pub fn reward(&self, prefix: &[usize], action: usize) -> f64 {
        let mut seq = self.tokens(prefix);
        let before = reward(self.metric, &seq, &self.target);
        seq.push(self.actions[action]);
        reward(self.metric, &seq, &self.target) - before
    }

    fn prefixes(&self) -> Vec<Vec<usize>> {
        let mut all = vec![vec![]];
        let mut frontier = vec![vec![]];
        for _ in 1..self.horizon() {
            frontier = frontier
                .iter()
                .flat_map(|p: &Vec<usize>| {
                    (0..self.n_actions()).map(move |a| {
                        let mut q = p.clone();
                        q.push(a);
                        q
                    })
                })
                .collect();
            all.extend(frontier.iter().cloned());
        }
        all
    }

    /// `Q*` by value iteration, indexed `[state_id][action]`.
    pub fn q_star(&self, gamma: f64) -> Vec<Vec<f64>> {
        let prefixes = self.prefixes();
        let mut q = vec![vec![0.0; self.n_actions()]; self.n_states()];
        loop {
            let mut change: f64 = 0.0;
            for p in &prefixes {
                let sid = self.state_id(p);
                for a in 0..self.n_actions() {
                    let mut next = p.clone();
                    next.push(a);
                    let future = if next.len() == self.horizon() {
                        0.0
                    } else {
                        q[self.state_id(&next)]
                            .iter()
                            .copied()
                            .fold(f64::NEG_INFINITY, f64::max)
                    };
                    let v = self.reward(p, a) + gamma * future;
                    change = change.max((v - q[sid][a]).abs());
                    q[sid][a] = v;
                }
            }
            if change == 0.0 {
                return q;
            }
        }
    }

    /// One episode under a uniform random behaviour policy.
    pub fn random_episode(&self, gamma: f64, rng: &mut SeededRng) -> Vec<Experience> {
        let mut prefix = Vec::new();
        let mut out: Vec<Experience> = Vec::new();
        while prefix.len() < self.horizon() {
            let a = rng.below(self.n_actions());
            let state = self.features(&prefix);
            let r = self.reward(&prefix, a);
            prefix.push(a);
            let done = prefix.len() == self.horizon();
            if let Some(prev) = out.last_mut() {
                prev.next_action = Some(a);
            }
            out.push(Experience {
                next_state: if done { state.clone() } else { self.features(&prefix) },
                state,
                action: a,
                reward: r,
                done,
                next_action: None,
                return_to_go: 0.0,
                td_error: 0.0,
            });
        }
        let rewards: Vec<f64> = out.iter().map(|e| e.reward).collect();
        for (e, v) in out.iter_mut().zip(reward_to_go(&rewards, gamma)) {
            e.return_to_go = v;
        }
        out
    }

    /// Max-norm distance between a tabular Q-network and `Q*`.
    pub fn distance(&self, qn: &QNetParams, q_star: &[Vec<f64>]) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for p in self.prefixes() {
            let q = q_forward(qn, &self.features(&p))?;
            for (a, b) in q.iter().zip(&q_star[self.state_id(&p)]) {
                worst = worst.max((a - b).abs());
            }
        }
        Ok(worst)
    }
}

/// Trains a tabular Q-network on `mdp` from uniform-random exploration,
/// adding one episode to the buffer before each update.
pub fn fit_tabular(mdp: &SortMdp, cfg: QConfig, updates: u64, rng: &mut SeededRng) -> Result<QCritic> {
    let mut critic = QCritic::new(QNetParams::tabular(mdp.n_states(), mdp.n_actions()), cfg)?;
    for _ in 0..updates {
        for e in mdp.random_episode(cfg.gamma, rng) {
            critic.buffer.push(e);
        }
        critic.train_step(0.0, rng)?;
    }
    Ok(critic)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{finite_diff_grad, rel_error};

    fn exp(state: Vec<f64>, action: usize) -> Experience {
        Experience {
            next_state: state.clone(),
            state,
            action,
            reward: 0.0,
            done: true,
            next_action: None,
            return_to_go: 0.0,
            td_error: 0.0,
        }
    }

    #[test]
    fn target_examples() {
        assert_eq!(dqn_target(0.4, &[9.0], true, 0.9), 0.4);
        assert_eq!(dqn_target(0.4, &[9.0], false, 0.0), 0.4);
        assert!((dqn_target(1.0, &[0.2, 0.7], false, 0.9) - 1.63).abs() < 1e-15);
        assert_eq!(ddqn_target(0.0, &[0.1, 0.9], &[5.0, 1.0], false, 1.0), 0.1);
        assert_eq!(ddqn_target(0.3, &[0.1, 0.9], &[5.0, 1.0], true, 1.0), 0.3);
        assert_eq!(
            ddqn_target(0.2, &[0.1, 0.9], &[0.1, 0.9], false, 0.5),
            dqn_target(0.2, &[0.1, 0.9], false, 0.5)
        );
        assert_eq!(sarsa_target(0.5, &[0.2, 0.8], 0, false, 0.5).unwrap(), 0.6);
        assert_eq!(sarsa_target(0.5, &[0.2, 0.8], 1, false, 0.0).unwrap(), 0.5);
        assert_eq!(
            sarsa_target(0.5, &[0.2, 0.8], 1, false, 0.5).unwrap(),
            dqn_target(0.5, &[0.2, 0.8], false, 0.5)
        );
        assert!(sarsa_target(0.5, &[0.2, 0.8], 2, false, 0.5).is_err());
    }

    #[test]
    fn dueling_identities() {
        let a = [0.3, -1.0, 2.5];
        let q = dueling_aggregate(0.7, &a, Aggregation::Max);
        assert_eq!(q[2], 0.7);
        let q = dueling_aggregate(0.7, &a, Aggregation::Mean);
        assert!((q.iter().sum::<f64>() / 3.0 - 0.7).abs() < 1e-15);
        let shifted = [0.3 + 4.0, -1.0 + 4.0, 2.5 + 4.0];
        for agg in [Aggregation::Max, Aggregation::Mean] {
            let q1 = dueling_aggregate(0.7, &a, agg);
            let q2 = dueling_aggregate(0.7, &shifted, agg);
            for (x, y) in q1.iter().zip(&q2) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn q_forward_hand_values() {
        let qn = QNetParams::Plain {
            w1: Matrix::from_vec(1, 1, vec![2.0]).unwrap(),
            b1: Matrix::from_vec(1, 1, vec![-0.5]).unwrap(),
            q: Matrix::from_vec(1, 2, vec![1.5, -3.0]).unwrap(),
        };
        let h = (-0.5f64 + 0.3 * 2.0).tanh();
        assert_eq!(q_forward(&qn, &[0.3]).unwrap(), vec![1.5 * h, -3.0 * h]);
        let z = QNetParams::plain(3, 2, 4, &mut SeededRng::new(0)).zeros_like();
        assert_eq!(q_forward(&z, &[1.0, 2.0, 3.0]).unwrap(), vec![0.0; 4]);
        assert!(q_forward(&z, &[1.0]).is_err());
    }

    fn fd_check(qn: &QNetParams, shrink: f64, seed: u64) {
        let mut rng = SeededRng::new(seed);
        let d = qn.input_dim();
        let batch: Vec<Experience> = (0..4)
            .map(|_| {
                exp(
                    (0..d).map(|_| rng.uniform() * 2.0 - 1.0).collect(),
                    rng.below(qn.n_actions()),
                )
            })
            .collect();
        let targets: Vec<f64> = (0..4).map(|_| rng.uniform()).collect();
        let (_, g) = qnet_loss_grad(qn, &batch, &targets, shrink).unwrap();
        let fd = finite_diff_grad(
            |x| {
                let mut q = qn.clone();
                q.set_flat(x);
                qnet_loss_grad(&q, &batch, &targets, shrink).unwrap().0
            },
            &qn.to_flat(),
            1e-5,
        );
        for (a, b) in g.to_flat().iter().zip(&fd) {
            assert!(rel_error(*a, *b, 1e-6) <= 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn q_gradients_match_finite_differences() {
        for seed in 0..4 {
            let mut rng = SeededRng::new(seed);
            for shrink in [0.0, 0.1] {
                fd_check(&QNetParams::plain(4, 3, 5, &mut rng), shrink, seed);
                fd_check(&QNetParams::dueling(4, 3, 5, Aggregation::Mean, &mut rng), shrink, seed);
                fd_check(&QNetParams::dueling(4, 3, 5, Aggregation::Max, &mut rng), shrink, seed);
                let mut t = QNetParams::tabular(4, 3);
                let flat: Vec<f64> = (0..12).map(|_| rng.uniform()).collect();
                t.set_flat(&flat);
                fd_check(&t, shrink, seed);
            }
        }
    }

    #[test]
    fn update_cases() {
        let qn = QNetParams::plain(3, 4, 3, &mut SeededRng::new(2));
        let batch = vec![exp(vec![0.1, 0.2, 0.3], 1), exp(vec![-0.4, 0.0, 0.9], 2)];
        let exact: Vec<f64> = batch
            .iter()
            .map(|e| q_forward(&qn, &e.state).unwrap()[e.action])
            .collect();
        let (same, mse) = qnet_update(&qn, &batch, &exact, 0.1, None).unwrap();
        assert_eq!(mse, 0.0);
        assert_eq!(same, qn);

        let spread = |q: &QNetParams| {
            batch
                .iter()
                .map(|e| {
                    let v = q_forward(q, &e.state).unwrap();
                    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                        - v.iter().copied().fold(f64::INFINITY, f64::min)
                })
                .sum::<f64>()
        };
        let (shrunk, _) = qnet_update(&qn, &batch, &exact, 0.05, Some(5.0)).unwrap();
        assert!(spread(&shrunk) < spread(&qn));
    }

    #[test]
    fn buffer_fifo_and_sampling() {
        let mut b = ExperienceBuffer::new(2, ReplayMode::Uniform).unwrap();
        for i in 0..3 {
            b.push(exp(vec![i as f64], 0));
        }
        assert_eq!(b.len(), 2);
        assert_eq!(b.get(0).unwrap().state, vec![1.0]);
        assert!(ExperienceBuffer::new(2, ReplayMode::Uniform)
            .unwrap()
            .sample(1, &mut SeededRng::new(0))
            .is_err());

        let mut b = ExperienceBuffer::new(4, ReplayMode::Uniform).unwrap();
        for i in 0..4 {
            b.push(exp(vec![i as f64], 0));
        }
        let mut counts = [0usize; 4];
        for i in b.sample_indices(40_000, &mut SeededRng::new(3)).unwrap() {
            counts[i] += 1;
        }
        for c in counts {
            let f = c as f64 / 40_000.0;
            assert!((0.23..=0.27).contains(&f), "{f}");
        }
    }

    #[test]
    fn prioritized_directions() {
        for (dir, favoured) in [(PriorityDirection::LowFirst, 0), (PriorityDirection::HighFirst, 1)] {
            let mut b = ExperienceBuffer::new(
                4,
                ReplayMode::Prioritized {
                    direction: dir,
                    alpha: 1.0,
                },
            )
            .unwrap();
            b.push(exp(vec![0.0], 0));
            b.push(exp(vec![1.0], 0));
            b.set_td_error(0, 0.0).unwrap();
            b.set_td_error(1, 10.0).unwrap();
            let mut counts = [0usize; 2];
            for i in b.sample_indices(2000, &mut SeededRng::new(1)).unwrap() {
                counts[i] += 1;
            }
            assert!(counts[favoured] > counts[1 - favoured]);
        }
        let mut b = ExperienceBuffer::new(
            4,
            ReplayMode::Prioritized {
                direction: PriorityDirection::HighFirst,
                alpha: 1.0,
            },
        )
        .unwrap();
        b.push(exp(vec![0.0], 0));
        b.set_td_error(0, 3.0).unwrap();
        b.push(exp(vec![1.0], 0));
        assert_eq!(b.get(1).unwrap().td_error, 3.0);
    }

    #[test]
    fn sync_cases() {
        let live = QNetParams::plain(2, 2, 3, &mut SeededRng::new(1));
        let old = QNetParams::plain(2, 2, 3, &mut SeededRng::new(2));
        let mut t = TargetNet {
            params: old.clone(),
            sync: SyncMode::Hard(5),
        };
        target_sync(&live, &mut t, 4).unwrap();
        assert_eq!(t.params, old);
        target_sync(&live, &mut t, 5).unwrap();
        assert_eq!(t.params, live);

        assert_eq!(polyak_blend(&old, &live, 1.0).unwrap(), old);
        assert_eq!(polyak_blend(&old, &live, 0.0).unwrap(), live);
        let mut t = TargetNet {
            params: old.clone(),
            sync: SyncMode::Polyak,
        };
        target_sync(&live, &mut t, 0).unwrap();
        assert_eq!(t.params, old);
        let bad = QNetParams::plain(2, 3, 3, &mut SeededRng::new(2));
        assert!(target_sync(&bad, &mut t, 1).is_err());
    }

    #[test]
    fn scheduled_targets_mix() {
        let batch: Vec<Experience> = (0..10_000)
            .map(|_| {
                let mut e = exp(vec![0.0], 0);
                e.return_to_go = 1.0;
                e
            })
            .collect();
        let boot = vec![0.0; batch.len()];
        let mut rng = SeededRng::new(6);
        assert!(scheduled_q_targets(&batch, &boot, 1.0, &mut rng)
            .unwrap()
            .iter()
            .all(|&v| v == 1.0));
        assert!(scheduled_q_targets(&batch, &boot, 0.0, &mut rng)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
        let frac = scheduled_q_targets(&batch, &boot, 0.5, &mut rng)
            .unwrap()
            .iter()
            .sum::<f64>()
            / 1e4;
        assert!((0.47..=0.53).contains(&frac));
    }

    #[test]
    fn sort_mdp_value_iteration() {
        let mdp = SortMdp::new(&[4, 3], vec![3, 4, 5], Metric::RougeLF).unwrap();
        assert_eq!(mdp.n_states(), 4);
        let q = mdp.q_star(1.0);
        assert!((q[0][0] - 1.0).abs() < 1e-12);
        assert!((q[0][1] - 0.5).abs() < 1e-12);
        assert!((q[0][2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = SeededRng::new(4);
        for qn in [
            QNetParams::plain(3, 2, 4, &mut rng),
            QNetParams::dueling(3, 2, 4, Aggregation::Mean, &mut rng),
            QNetParams::dueling(3, 2, 4, Aggregation::Max, &mut rng),
            QNetParams::tabular(4, 3),
        ] {
            let back =
                QNetParams::from_checkpoint(&Checkpoint::from_bytes(&qn.to_checkpoint().to_bytes()).unwrap()).unwrap();
            assert_eq!(back, qn);
        }
    }
}
