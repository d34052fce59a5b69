//! Elman encoder-decoder policy: forward pass, exact backpropagation through
//! time, and the decoding modes used by the trainers.
//!
//! Encoder: `h_t = σ(U1·e(x_t) + U2·h_{t-1})`, `h_0 = 0`.
//! Decoder: `s_t = σ(W1·e(y_{t-1}) + W2·s_{t-1} + W3·c)`,
//! `o_t = W4ᵀ·s_t + W5ᵀ·c`, `π(·|…) = softmax(o_t)`, with `s_0 = c = h_{T_e}`
//! and `y_0 = BOS`. `e(·)` is a row of the learned embedding table.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::tasks::{SequencePair, BOS, EOS};
use crate::tensor::{argmax, log_softmax, sigmoid, softmax, Matrix, SeededRng};

/// Learnable matrices of the encoder-decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    /// `|A| × d` token embeddings.
    pub emb: Matrix,
    pub u1: Matrix,
    pub u2: Matrix,
    pub w1: Matrix,
    pub w2: Matrix,
    pub w3: Matrix,
    /// `d × |A|`, applied transposed to the decoder state.
    pub w4: Matrix,
    /// `d × |A|`, applied transposed to the context.
    pub w5: Matrix,
}

/// Gradients share the parameter layout.
pub type Gradients = PolicyParams;

pub const PARAM_NAMES: [&str; 8] = ["emb", "u1", "u2", "w1", "w2", "w3", "w4", "w5"];

impl PolicyParams {
    pub fn zeros(vocab: usize, d: usize) -> Self {
        PolicyParams {
            emb: Matrix::zeros(vocab, d),
            u1: Matrix::zeros(d, d),
            u2: Matrix::zeros(d, d),
            w1: Matrix::zeros(d, d),
            w2: Matrix::zeros(d, d),
            w3: Matrix::zeros(d, d),
            w4: Matrix::zeros(d, vocab),
            w5: Matrix::zeros(d, vocab),
        }
    }

    /// Glorot-uniform recurrent and output matrices, unit-scale embeddings.
    pub fn random(vocab: usize, d: usize, rng: &mut SeededRng) -> Self {
        PolicyParams::random_with_gain(vocab, d, 1.0, rng)
    }

    /// As [`PolicyParams::random`], with the recurrent ranges scaled by `gain`.
    pub fn random_with_gain(vocab: usize, d: usize, gain: f64, rng: &mut SeededRng) -> Self {
        let sq = gain * (6.0 / (2 * d) as f64).sqrt();
        let out = (6.0 / (d + vocab) as f64).sqrt();
        PolicyParams {
            emb: Matrix::random_uniform(vocab, d, 1.0, rng),
            u1: Matrix::random_uniform(d, d, sq, rng),
            u2: Matrix::random_uniform(d, d, sq, rng),
            w1: Matrix::random_uniform(d, d, sq, rng),
            w2: Matrix::random_uniform(d, d, sq, rng),
            w3: Matrix::random_uniform(d, d, sq, rng),
            w4: Matrix::random_uniform(d, vocab, out, rng),
            w5: Matrix::random_uniform(d, vocab, out, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        PolicyParams::zeros(self.vocab_size(), self.hidden())
    }

    pub fn vocab_size(&self) -> usize {
        self.emb.rows()
    }

    pub fn hidden(&self) -> usize {
        self.emb.cols()
    }

    pub fn matrices(&self) -> [(&'static str, &Matrix); 8] {
        [
            ("emb", &self.emb),
            ("u1", &self.u1),
            ("u2", &self.u2),
            ("w1", &self.w1),
            ("w2", &self.w2),
            ("w3", &self.w3),
            ("w4", &self.w4),
            ("w5", &self.w5),
        ]
    }

    pub fn matrices_mut(&mut self) -> [(&'static str, &mut Matrix); 8] {
        [
            ("emb", &mut self.emb),
            ("u1", &mut self.u1),
            ("u2", &mut self.u2),
            ("w1", &mut self.w1),
            ("w2", &mut self.w2),
            ("w3", &mut self.w3),
            ("w4", &mut self.w4),
            ("w5", &mut self.w5),
        ]
    }

    pub fn num_params(&self) -> usize {
        self.matrices().iter().map(|(_, m)| m.as_slice().len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.matrices()
            .iter()
            .flat_map(|(_, m)| m.as_slice().iter().copied())
            .collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut off = 0;
        for (_, m) in self.matrices_mut() {
            let n = m.as_slice().len();
            m.as_mut_slice().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }

    /// `self += s · other`.
    pub fn axpy(&mut self, s: f64, other: &PolicyParams) {
        for ((_, a), (_, b)) in self.matrices_mut().into_iter().zip(other.matrices()) {
            a.axpy(s, b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (_, m) in self.matrices_mut() {
            m.scale(s);
        }
    }

    pub fn norm(&self) -> f64 {
        self.matrices().iter().map(|(_, m)| m.sum_sq()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.matrices().iter().all(|(_, m)| m.is_finite())
    }

    pub fn max_abs_diff(&self, other: &PolicyParams) -> f64 {
        self.matrices()
            .iter()
            .zip(other.matrices())
            .map(|((_, a), (_, b))| a.max_abs_diff(b))
            .fold(0.0, f64::max)
    }

    fn check_token(&self, t: usize) -> Result<()> {
        if t >= self.vocab_size() {
            return Err(Error::OutOfVocab {
                index: t,
                vocab: self.vocab_size(),
            });
        }
        Ok(())
    }
}

/// What the decoder consumed at one step.
#[derive(Clone, Debug, PartialEq)]
pub enum StepInput {
    Token(usize),
    /// Renormalized top-K mixture of the previous step's distribution.
    Mixture {
        tokens: Vec<usize>,
        weights: Vec<f64>,
    },
}

impl StepInput {
    fn embed(&self, p: &PolicyParams) -> Vec<f64> {
        match self {
            StepInput::Token(t) => p.emb.row(*t).to_vec(),
            StepInput::Mixture { tokens, weights } => {
                let mut v = vec![0.0; p.hidden()];
                for (&t, &w) in tokens.iter().zip(weights) {
                    for (o, e) in v.iter_mut().zip(p.emb.row(t)) {
                        *o += w * e;
                    }
                }
                v
            }
        }
    }
}

/// One decoded sequence with everything the backward pass needs.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub input: Vec<usize>,
    /// Encoder states `h_1..h_{T_e}`.
    pub enc_states: Vec<Vec<f64>>,
    /// `c = h_{T_e}`, also the initial decoder state.
    pub context: Vec<f64>,
    /// Input fed at each step; the first is always `BOS`.
    pub inputs: Vec<StepInput>,
    pub actions: Vec<usize>,
    /// Decoder states `s_1..s_T`.
    pub states: Vec<Vec<f64>>,
    pub logits: Vec<Vec<f64>>,
    pub dists: Vec<Vec<f64>>,
    pub logprobs: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn total_logprob(&self) -> f64 {
        self.logprobs.iter().sum()
    }

    /// Decoder state entering step `t` (`s_0` for the first step).
    pub fn state_before(&self, t: usize) -> &[f64] {
        if t == 0 {
            &self.context
        } else {
            &self.states[t - 1]
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DecodeMode {
    TeacherForced,
    Greedy,
    Sample,
    /// Feed the ground-truth token with probability `ε`, else the model's sample.
    Scheduled(f64),
    /// Feed the renormalized top-K embedding mixture.
    E2eTopK(usize),
    Beam(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecodeConfig {
    pub mode: DecodeMode,
    pub max_len: usize,
    /// When false, EOS is an ordinary action and episodes run to `max_len`.
    pub stop_at_eos: bool,
}

impl DecodeConfig {
    pub fn new(mode: DecodeMode, max_len: usize) -> Self {
        DecodeConfig {
            mode,
            max_len,
            stop_at_eos: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.max_len == 0 {
            return Err(Error::InvalidArgument("max_len must be at least 1".into()));
        }
        match self.mode {
            DecodeMode::Scheduled(eps) if !(0.0..=1.0).contains(&eps) => Err(Error::InvalidArgument(format!(
                "scheduled epsilon {eps} outside [0, 1]"
            ))),
            DecodeMode::E2eTopK(0) | DecodeMode::Beam(0) => {
                Err(Error::InvalidArgument("K and beam width must be at least 1".into()))
            }
            _ => Ok(()),
        }
    }
}

pub fn encode(p: &PolicyParams, x: &[usize]) -> Result<Vec<Vec<f64>>> {
    if x.is_empty() {
        return Err(Error::InvalidArgument("empty input sequence".into()));
    }
    let d = p.hidden();
    let mut h = vec![0.0; d];
    let mut out = Vec::with_capacity(x.len());
    for &tok in x {
        p.check_token(tok)?;
        let mut a = p.u1.matvec(p.emb.row(tok));
        p.u2.matvec_acc(&h, &mut a);
        h = sigmoid(&a);
        out.push(h.clone());
    }
    Ok(out)
}

fn step_from_embedding(p: &PolicyParams, x: &[f64], s: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut z = p.w1.matvec(x);
    p.w2.matvec_acc(s, &mut z);
    p.w3.matvec_acc(c, &mut z);
    let s_next = sigmoid(&z);
    let mut o = p.w4.matvec_t(&s_next);
    p.w5.matvec_t_acc(c, &mut o);
    let dist = softmax(&o);
    (s_next, o, dist)
}

/// One decoder transition from token `y_prev`; returns `(s', logits, dist)`.
pub fn decode_step(p: &PolicyParams, y_prev: usize, s: &[f64], c: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    p.check_token(y_prev)?;
    let d = p.hidden();
    if s.len() != d || c.len() != d {
        return Err(Error::LengthMismatch {
            op: "decode_step",
            expected: d,
            got: if s.len() != d { s.len() } else { c.len() },
        });
    }
    Ok(step_from_embedding(p, p.emb.row(y_prev), s, c))
}

struct Decision {
    action: usize,
    /// `None` ends the episode after this step.
    next: Option<StepInput>,
}

/// Shared decode loop: `choose(t, state, dist)` picks the action and next input.
fn decode_with<F>(p: &PolicyParams, x: &[usize], max_len: usize, mut choose: F) -> Result<Trajectory>
where
    F: FnMut(usize, &[f64], &[f64]) -> Result<Decision>,
{
    let enc_states = encode(p, x)?;
    let context = enc_states.last().cloned().expect("non-empty input");
    let mut traj = Trajectory {
        input: x.to_vec(),
        enc_states,
        context,
        inputs: Vec::new(),
        actions: Vec::new(),
        states: Vec::new(),
        logits: Vec::new(),
        dists: Vec::new(),
        logprobs: Vec::new(),
    };
    let mut input = StepInput::Token(BOS);
    let mut s = traj.context.clone();
    for t in 0..max_len {
        let emb = input.embed(p);
        let (s_next, o, dist) = step_from_embedding(p, &emb, &s, &traj.context);
        let logp = log_softmax(&o);
        let decision = choose(t, &s_next, &dist)?;
        p.check_token(decision.action)?;
        traj.inputs.push(input);
        traj.actions.push(decision.action);
        traj.logprobs.push(logp[decision.action]);
        traj.states.push(s_next.clone());
        traj.logits.push(o);
        traj.dists.push(dist);
        s = s_next;
        match decision.next {
            Some(next) => input = next,
            None => break,
        }
    }
    Ok(traj)
}

fn top_k_mixture(dist: &[f64], k: usize) -> StepInput {
    let mut idx: Vec<usize> = (0..dist.len()).collect();
    idx.sort_by(|&a, &b| dist[b].partial_cmp(&dist[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    idx.truncate(k.min(dist.len()));
    let total: f64 = idx.iter().map(|&i| dist[i]).sum();
    let weights = idx.iter().map(|&i| dist[i] / total).collect();
    StepInput::Mixture { tokens: idx, weights }
}

/// Teacher-forced pass over `y`: inputs are `BOS, y_1, …, y_{T-1}`.
pub fn teacher_forced(p: &PolicyParams, x: &[usize], y: &[usize]) -> Result<Trajectory> {
    if y.is_empty() {
        return Err(Error::InvalidArgument("empty target sequence".into()));
    }
    decode_with(p, x, y.len(), |t, _, _| {
        Ok(Decision {
            action: y[t],
            next: y.get(t + 1).map(|_| StepInput::Token(y[t])),
        })
    })
}

/// Decodes `x` under `cfg`.
///
/// `Scheduled` runs until the token fed next is EOS (or `max_len`); once past
/// the end of the ground truth it always feeds the model's own sample, and a
/// coin is only drawn when `0 < ε < 1`. `E2eTopK` with a ground truth runs
/// exactly `|Y|` steps and records the argmax as the action.
pub fn rollout(
    p: &PolicyParams,
    x: &[usize],
    cfg: &DecodeConfig,
    rng: &mut SeededRng,
    ground_truth: Option<&[usize]>,
) -> Result<Trajectory> {
    cfg.validate()?;
    let stop = |a: usize| cfg.stop_at_eos && a == EOS;
    match cfg.mode {
        DecodeMode::TeacherForced => {
            let y = ground_truth.ok_or(Error::MissingGroundTruth)?;
            teacher_forced(p, x, &y[..y.len().min(cfg.max_len)])
        }
        DecodeMode::Greedy => decode_with(p, x, cfg.max_len, |_, _, dist| {
            let a = argmax(dist);
            Ok(Decision {
                action: a,
                next: (!stop(a)).then_some(StepInput::Token(a)),
            })
        }),
        DecodeMode::Sample => decode_with(p, x, cfg.max_len, |_, _, dist| {
            let a = rng.categorical(dist);
            Ok(Decision {
                action: a,
                next: (!stop(a)).then_some(StepInput::Token(a)),
            })
        }),
        DecodeMode::Scheduled(eps) => {
            let y = ground_truth.ok_or(Error::MissingGroundTruth)?;
            decode_with(p, x, cfg.max_len, |t, _, dist| {
                let a = rng.categorical(dist);
                let use_truth = t < y.len() && (eps >= 1.0 || (eps > 0.0 && rng.bernoulli(eps)));
                let fed = if use_truth { y[t] } else { a };
                Ok(Decision {
                    action: a,
                    next: (!stop(fed)).then_some(StepInput::Token(fed)),
                })
            })
        }
        DecodeMode::E2eTopK(k) => {
            let steps = ground_truth.map_or(cfg.max_len, |y| y.len().min(cfg.max_len));
            decode_with(p, x, steps, |_, _, dist| {
                let a = argmax(dist);
                let next = if ground_truth.is_none() && stop(a) {
                    None
                } else {
                    Some(top_k_mixture(dist, k))
                };
                Ok(Decision { action: a, next })
            })
        }
        DecodeMode::Beam(width) => {
            let seq = beam_search(p, x, width, cfg.max_len)?;
            teacher_forced(p, x, &seq)
        }
    }
}

/// MIXER decoding: teacher-forced over `y[..split]`, then sampled until EOS
/// or `max_len`. `split == |y|` is plain teacher forcing.
pub fn mixer_rollout(
    p: &PolicyParams,
    x: &[usize],
    y: &[usize],
    split: usize,
    max_len: usize,
    rng: &mut SeededRng,
) -> Result<Trajectory> {
    if split > y.len() {
        return Err(Error::InvalidRange(format!(
            "split {split} beyond target length {}",
            y.len()
        )));
    }
    if split == y.len() {
        return teacher_forced(p, x, y);
    }
    decode_with(p, x, max_len.max(split + 1), |t, _, dist| {
        let a = if t < split { y[t] } else { rng.categorical(dist) };
        Ok(Decision {
            action: a,
            next: (t < split || a != EOS).then_some(StepInput::Token(a)),
        })
    })
}

/// Greedy decoding under an arbitrary per-step ranking:
/// `score(state, dist)` returns one score per action. Stops at EOS.
pub fn decode_ranked<F>(p: &PolicyParams, x: &[usize], max_len: usize, mut score: F) -> Result<Trajectory>
where
    F: FnMut(&[f64], &[f64]) -> Result<Vec<f64>>,
{
    decode_with(p, x, max_len, |_, state, dist| {
        let a = argmax(&score(state, dist)?);
        Ok(Decision {
            action: a,
            next: (a != EOS).then_some(StepInput::Token(a)),
        })
    })
}

/// Re-runs `traj`'s input decisions under `p`. Token inputs are replayed
/// verbatim; mixture inputs keep their token set and recompute the weights.
pub fn replay(p: &PolicyParams, traj: &Trajectory) -> Result<Trajectory> {
    let n = traj.len();
    decode_with(p, &traj.input, n, |t, _, dist| {
        let next = traj.inputs.get(t + 1).map(|inp| match inp {
            StepInput::Token(tok) => StepInput::Token(*tok),
            StepInput::Mixture { tokens, .. } => {
                let total: f64 = tokens.iter().map(|&i| dist[i]).sum();
                StepInput::Mixture {
                    tokens: tokens.clone(),
                    weights: tokens.iter().map(|&i| dist[i] / total).collect(),
                }
            }
        });
        Ok(Decision {
            action: traj.actions[t],
            next,
        })
    })
}

/// Backpropagates per-step logit gradients `∂L/∂o_t` through the decoder,
/// any top-K mixture weights, and the encoder.
pub fn backward(p: &PolicyParams, traj: &Trajectory, g_logits: &[Vec<f64>]) -> Result<Gradients> {
    let n = traj.len();
    if g_logits.len() != n {
        return Err(Error::LengthMismatch {
            op: "backward",
            expected: n,
            got: g_logits.len(),
        });
    }
    let d = p.hidden();
    let c = &traj.context;
    let mut g = p.zeros_like();
    let mut g_o: Vec<Vec<f64>> = g_logits.to_vec();
    let mut g_s_next = vec![0.0; d];
    let mut g_c = vec![0.0; d];

    for t in (0..n).rev() {
        let s_t = &traj.states[t];
        let s_prev = traj.state_before(t);
        let go = &g_o[t];

        g.w4.add_outer(s_t, go);
        g.w5.add_outer(c, go);
        let mut g_s = g_s_next;
        p.w4.matvec_acc(go, &mut g_s);
        p.w5.matvec_acc(go, &mut g_c);

        let g_z: Vec<f64> = g_s.iter().zip(s_t).map(|(gs, s)| gs * s * (1.0 - s)).collect();
        let x_t = traj.inputs[t].embed(p);
        g.w1.add_outer(&g_z, &x_t);
        g.w2.add_outer(&g_z, s_prev);
        g.w3.add_outer(&g_z, c);
        let g_x = p.w1.matvec_t(&g_z);
        g_s_next = p.w2.matvec_t(&g_z);
        p.w3.matvec_t_acc(&g_z, &mut g_c);

        match &traj.inputs[t] {
            StepInput::Token(tok) => {
                for (e, gx) in g.emb.row_mut(*tok).iter_mut().zip(&g_x) {
                    *e += gx;
                }
            }
            StepInput::Mixture { tokens, weights } => {
                let mut g_w = Vec::with_capacity(tokens.len());
                for (&tok, &w) in tokens.iter().zip(weights) {
                    let row = p.emb.row(tok);
                    g_w.push(row.iter().zip(&g_x).map(|(a, b)| a * b).sum::<f64>());
                    for (e, gx) in g.emb.row_mut(tok).iter_mut().zip(&g_x) {
                        *e += w * gx;
                    }
                }
                // w_k = p_k / S over the selected set; chain into the previous logits.
                let prev = &traj.dists[t - 1];
                let total: f64 = tokens.iter().map(|&i| prev[i]).sum();
                let mean_gw: f64 = weights.iter().zip(&g_w).map(|(w, gw)| w * gw).sum();
                let mut g_p = vec![0.0; prev.len()];
                for (&tok, gw) in tokens.iter().zip(&g_w) {
                    g_p[tok] = (gw - mean_gw) / total;
                }
                let pg: f64 = prev.iter().zip(&g_p).map(|(a, b)| a * b).sum();
                for (j, go_prev) in g_o[t - 1].iter_mut().enumerate() {
                    *go_prev += prev[j] * (g_p[j] - pg);
                }
            }
        }
    }

    // s_0 and c are both h_{T_e}
    let mut g_h: Vec<f64> = g_s_next.iter().zip(&g_c).map(|(a, b)| a + b).collect();
    for t in (0..traj.enc_states.len()).rev() {
        let h_t = &traj.enc_states[t];
        let g_a: Vec<f64> = g_h.iter().zip(h_t).map(|(gh, h)| gh * h * (1.0 - h)).collect();
        let tok = traj.input[t];
        g.u1.add_outer(&g_a, p.emb.row(tok));
        if t > 0 {
            g.u2.add_outer(&g_a, &traj.enc_states[t - 1]);
        }
        let g_e = p.u1.matvec_t(&g_a);
        for (e, ge) in g.emb.row_mut(tok).iter_mut().zip(&g_e) {
            *e += ge;
        }
        g_h = p.u2.matvec_t(&g_a);
    }
    Ok(g)
}

/// Teacher-forced cross-entropy `−Σ_t log π(y_t | …)`; the trajectory is the
/// cache for [`backward_ce`].
pub fn forward_ce(p: &PolicyParams, pair: &SequencePair) -> Result<(f64, Trajectory)> {
    let traj = teacher_forced(p, &pair.source, &pair.target)?;
    Ok((-traj.total_logprob(), traj))
}

pub fn backward_ce(p: &PolicyParams, pair: &SequencePair, cache: &Trajectory) -> Result<Gradients> {
    if cache.actions != pair.target {
        return Err(Error::InvalidArgument("cache does not match the pair's target".into()));
    }
    ce_backward_on(p, cache, &pair.target)
}

/// Cross-entropy gradient of `targets` on whatever inputs `traj` consumed
/// (scheduled-sampling and top-K feeding use this with the ground truth).
pub fn ce_backward_on(p: &PolicyParams, traj: &Trajectory, targets: &[usize]) -> Result<Gradients> {
    let n = traj.len().min(targets.len());
    let g_o: Vec<Vec<f64>> = (0..traj.len())
        .map(|t| {
            let mut g = traj.dists[t].clone();
            if t < n {
                g[targets[t]] -= 1.0;
            } else {
                g.iter_mut().for_each(|v| *v = 0.0);
            }
            g
        })
        .collect();
    backward(p, traj, &g_o)
}

/// Gradient of `−Σ_t w_t · log π(ŷ_t | …)` on a frozen trajectory.
pub fn weighted_logprob_backward(p: &PolicyParams, traj: &Trajectory, weights: &[f64]) -> Result<Gradients> {
    if weights.len() != traj.len() {
        return Err(Error::LengthMismatch {
            op: "weighted_logprob_backward",
            expected: traj.len(),
            got: weights.len(),
        });
    }
    backward(p, traj, &weighted_logit_grads(traj, weights))
}

/// Per-step `∂L/∂o_t = w_t·(π_t − 1(ŷ_t))`.
pub fn weighted_logit_grads(traj: &Trajectory, weights: &[f64]) -> Vec<Vec<f64>> {
    traj.dists
        .iter()
        .zip(&traj.actions)
        .zip(weights)
        .map(|((dist, &a), &w)| {
            let mut g: Vec<f64> = dist.iter().map(|v| v * w).collect();
            g[a] -= w;
            g
        })
        .collect()
}

#[derive(Clone)]
struct Hypothesis {
    tokens: Vec<usize>,
    logp: f64,
    state: Vec<f64>,
    finished: bool,
}

impl Hypothesis {
    fn score(&self) -> f64 {
        self.logp / self.tokens.len() as f64
    }
}

/// Length-normalized beam search; hypotheses end at their first EOS or at
/// `max_len`.
pub fn beam_search(p: &PolicyParams, x: &[usize], width: usize, max_len: usize) -> Result<Vec<usize>> {
    if width == 0 || max_len == 0 {
        return Err(Error::InvalidArgument("beam width and max_len must be positive".into()));
    }
    let enc = encode(p, x)?;
    let c = enc.last().cloned().expect("non-empty input");
    let mut alive = vec![Hypothesis {
        tokens: vec![],
        logp: 0.0,
        state: c.clone(),
        finished: false,
    }];
    let mut done: Vec<Hypothesis> = Vec::new();
    for _ in 0..max_len {
        let mut pool = std::mem::take(&mut done);
        for h in &alive {
            let prev = h.tokens.last().copied().unwrap_or(BOS);
            let (s, o, _) = step_from_embedding(p, p.emb.row(prev), &h.state, &c);
            for (tok, lp) in log_softmax(&o).into_iter().enumerate() {
                let mut tokens = h.tokens.clone();
                tokens.push(tok);
                pool.push(Hypothesis {
                    tokens,
                    logp: h.logp + lp,
                    state: s.clone(),
                    finished: tok == EOS,
                });
            }
        }
        pool.sort_by(|a, b| b.score().partial_cmp(&a.score()).unwrap_or(Ordering::Equal));
        pool.truncate(width);
        let (fin, live): (Vec<_>, Vec<_>) = pool.into_iter().partition(|h| h.finished);
        done = fin;
        alive = live;
        if alive.is_empty() {
            break;
        }
    }
    done.extend(alive);
    let best = done
        .into_iter()
        .max_by(|a, b| a.score().partial_cmp(&b.score()).unwrap_or(Ordering::Equal))
        .expect("at least one hypothesis");
    Ok(best.tokens)
}

/// `p − lr·g`, after scaling `g` down to global norm `clip` when it exceeds it.
pub fn sgd_update(p: &PolicyParams, g: &Gradients, lr: f64, clip: Option<f64>) -> Result<PolicyParams> {
    if lr.is_nan() || lr <= 0.0 {
        return Err(Error::InvalidArgument(format!("learning rate {lr} must be positive")));
    }
    if !g.is_finite() {
        return Err(Error::NonFiniteGradient);
    }
    let mut scale = lr;
    if let Some(clip) = clip {
        let norm = g.norm();
        if norm > clip {
            scale *= clip / norm;
        }
    }
    let mut out = p.clone();
    out.axpy(-scale, g);
    Ok(out)
}
