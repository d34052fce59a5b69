//! Finite-difference verification of every hand-written backward pass.

use crate::ac::{critic_loss_grad, StateValueSample, ValueNetParams};
use crate::error::Result;
use crate::policy::{
    backward_ce, ce_backward_on, forward_ce, replay, rollout, weighted_logprob_backward, DecodeConfig, DecodeMode,
    PolicyParams,
};
use crate::qlearn::{qnet_loss_grad, Aggregation, Experience, QNetParams};
use crate::tasks::{SequencePair, TaskKind, NUM_RESERVED};
use crate::tensor::{finite_diff_grad, rel_error, SeededRng};

use super::config::ExperimentConfig;

pub const GRAD_TOLERANCE: f64 = 1e-4;
const STEP: f64 = 1e-5;
const FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradRow {
    pub suite: &'static str,
    pub matrix: &'static str,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradReport {
    pub rows: Vec<GradRow>,
}

impl GradReport {
    pub fn max_error(&self) -> f64 {
        self.rows.iter().map(|r| r.max_rel_error).fold(0.0, f64::max)
    }

    /// False when any row exceeds `tol` or is NaN.
    pub fn passed(&self, tol: f64) -> bool {
        self.rows.iter().all(|r| r.max_rel_error <= tol)
    }

    pub fn render(&self) -> String {
        let mut out = format!("{:<18} {:<8} {:>12}\n", "suite", "matrix", "max_rel_err");
        for r in &self.rows {
            out.push_str(&format!("{:<18} {:<8} {:>12.3e}\n", r.suite, r.matrix, r.max_rel_error));
        }
        out
    }
}

/// Splits flat analytic and numeric gradients into named blocks and reports
/// the worst relative error per block.
pub fn compare_blocks(
    suite: &'static str,
    blocks: &[(&'static str, usize)],
    analytic: &[f64],
    numeric: &[f64],
) -> Vec<GradRow> {
    let mut offset = 0;
    blocks
        .iter()
        .map(|&(matrix, len)| {
            let worst = analytic[offset..offset + len]
                .iter()
                .zip(&numeric[offset..offset + len])
                .map(|(&a, &n)| rel_error(a, n, FLOOR))
                .fold(0.0, |m: f64, e| if e.is_nan() { f64::NAN } else { m.max(e) });
            offset += len;
            GradRow {
                suite,
                matrix,
                max_rel_error: worst,
            }
        })
        .collect()
}

fn policy_blocks(p: &PolicyParams) -> Vec<(&'static str, usize)> {
    p.matrices().iter().map(|(n, m)| (*n, m.rows() * m.cols())).collect()
}

fn policy_fd(p: &PolicyParams, loss: impl Fn(&PolicyParams) -> f64) -> Vec<f64> {
    let mut probe = p.clone();
    finite_diff_grad(
        |x| {
            probe.set_flat(x);
            loss(&probe)
        },
        &p.to_flat(),
        STEP,
    )
}

fn random_vec(n: usize, scale: f64, rng: &mut SeededRng) -> Vec<f64> {
    (0..n).map(|_| scale * (2.0 * rng.uniform() - 1.0)).collect()
}

fn random_pair(task: TaskKind, vocab: usize, rng: &mut SeededRng) -> SequencePair {
    let len = 2 + rng.below(3);
    let source: Vec<usize> = (0..len)
        .map(|_| NUM_RESERVED + rng.below(vocab - NUM_RESERVED))
        .collect();
    SequencePair {
        target: task.target_for(&source),
        source,
    }
}

/// Runs the CE, top-K CE, weighted-logprob, value-net and Q-net suites at
/// small dimensions (`d ≤ 6`, `|A| ≤ 8`, `T ≤ 5`, `H ≤ 6`) seeded by
/// `cfg.seed`.
pub fn grad_check(cfg: &ExperimentConfig) -> Result<GradReport> {
    let mut rng = SeededRng::new(cfg.seed);
    let d = cfg.d.min(6);
    let vocab = cfg.vocab_size.min(8);
    let h = cfg.hidden.unwrap_or(6).min(6);
    let mut rows = Vec::new();

    let p = PolicyParams::random_with_gain(vocab, d, cfg.init_gain, &mut rng);
    let blocks = policy_blocks(&p);

    let pair = random_pair(cfg.task, vocab, &mut rng);
    let (_, cache) = forward_ce(&p, &pair)?;
    let g = backward_ce(&p, &pair, &cache)?;
    let num = policy_fd(&p, |q| forward_ce(q, &pair).map_or(f64::NAN, |(l, _)| l));
    rows.extend(compare_blocks("ce", &blocks, &g.to_flat(), &num));

    let k = 2.min(vocab);
    let traj = rollout(
        &p,
        &pair.source,
        &DecodeConfig::new(DecodeMode::E2eTopK(k), pair.target.len()),
        &mut rng,
        Some(&pair.target),
    )?;
    let g = ce_backward_on(&p, &traj, &pair.target)?;
    let num = policy_fd(&p, |q| {
        replay(q, &traj).map_or(f64::NAN, |r| {
            -r.dists
                .iter()
                .zip(&pair.target)
                .map(|(dist, &y)| dist[y].ln())
                .sum::<f64>()
        })
    });
    rows.extend(compare_blocks("topk_ce", &blocks, &g.to_flat(), &num));

    let sample = DecodeConfig {
        mode: DecodeMode::Sample,
        max_len: 5,
        stop_at_eos: false,
    };
    let traj = rollout(&p, &pair.source, &sample, &mut rng, None)?;
    let w = random_vec(traj.len(), 2.0, &mut rng);
    let g = weighted_logprob_backward(&p, &traj, &w)?;
    let num = policy_fd(&p, |q| {
        replay(q, &traj).map_or(f64::NAN, |r| {
            -r.logprobs.iter().zip(&w).map(|(l, w)| l * w).sum::<f64>()
        })
    });
    rows.extend(compare_blocks("weighted_logprob", &blocks, &g.to_flat(), &num));

    let vp = ValueNetParams::random(d, h, &mut rng);
    let samples: Vec<StateValueSample> = (0..4)
        .map(|_| StateValueSample {
            state: random_vec(d, 1.0, &mut rng).iter().map(|v| 0.5 + 0.5 * v).collect(),
            target: rng.uniform(),
        })
        .collect();
    let (_, g) = critic_loss_grad(&vp, &samples)?;
    let mut probe = vp.clone();
    let num = finite_diff_grad(
        |x| {
            probe.set_flat(x);
            critic_loss_grad(&probe, &samples).map_or(f64::NAN, |(l, _)| l)
        },
        &vp.to_flat(),
        STEP,
    );
    let blocks: Vec<_> = vp.matrices().iter().map(|(n, m)| (*n, m.rows() * m.cols())).collect();
    rows.extend(compare_blocks("value", &blocks, &g.to_flat(), &num));

    let nets = [
        ("q_plain", QNetParams::plain(d, h, vocab, &mut rng)),
        (
            "q_dueling_max",
            QNetParams::dueling(d, h, vocab, Aggregation::Max, &mut rng),
        ),
        (
            "q_dueling_mean",
            QNetParams::dueling(d, h, vocab, Aggregation::Mean, &mut rng),
        ),
    ];
    let batch: Vec<Experience> = (0..4)
        .map(|_| {
            let state: Vec<f64> = random_vec(d, 1.0, &mut rng).iter().map(|v| 0.5 + 0.5 * v).collect();
            Experience {
                next_state: state.clone(),
                state,
                action: rng.below(vocab),
                reward: rng.uniform(),
                done: true,
                next_action: None,
                return_to_go: 0.0,
                td_error: 0.0,
            }
        })
        .collect();
    let targets = random_vec(batch.len(), 1.0, &mut rng);
    let shrink = cfg.shrink.unwrap_or(0.1);
    for (suite, qn) in nets {
        let (_, g) = qnet_loss_grad(&qn, &batch, &targets, shrink)?;
        let mut probe = qn.clone();
        let num = finite_diff_grad(
            |x| {
                probe.set_flat(x);
                qnet_loss_grad(&probe, &batch, &targets, shrink).map_or(f64::NAN, |(l, _)| l)
            },
            &qn.to_flat(),
            STEP,
        );
        let blocks: Vec<_> = qn.matrices().iter().map(|(n, m)| (*n, m.rows() * m.cols())).collect();
        rows.extend(compare_blocks(suite, &blocks, &g.to_flat(), &num));
    }
    Ok(GradReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_init_passes_with_one_row_per_matrix() {
        let report = grad_check(&ExperimentConfig::default()).unwrap();
        assert!(report.passed(GRAD_TOLERANCE), "{}", report.render());
        let count = |s: &str| report.rows.iter().filter(|r| r.suite == s).count();
        assert_eq!(count("ce"), 8);
        assert_eq!(count("weighted_logprob"), 8);
        assert_eq!(count("value"), 4);
        assert_eq!(count("q_plain"), 3);
        assert_eq!(count("q_dueling_max"), 4);
    }

    #[test]
    fn corrupted_gradient_fails() {
        let mut analytic = vec![0.5, -0.25, 1.0];
        let numeric = analytic.clone();
        let ok = GradReport {
            rows: compare_blocks("fixture", &[("a", 1), ("b", 2)], &analytic, &numeric),
        };
        assert!(ok.passed(GRAD_TOLERANCE));
        analytic[2] *= 1.001;
        let bad = GradReport {
            rows: compare_blocks("fixture", &[("a", 1), ("b", 2)], &analytic, &numeric),
        };
        assert!(!bad.passed(GRAD_TOLERANCE));
        assert_eq!(bad.rows[0].max_rel_error, 0.0);
        assert!(bad.rows[1].max_rel_error > GRAD_TOLERANCE);
        analytic[0] = f64::NAN;
        let nan = GradReport {
            rows: compare_blocks("fixture", &[("a", 1), ("b", 2)], &analytic, &numeric),
        };
        assert!(!nan.passed(GRAD_TOLERANCE));
    }
}
