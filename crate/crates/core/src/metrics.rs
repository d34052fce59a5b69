//! Overlap and edit-distance scores over token sequences, usable both for
//! evaluation and as bounded rewards.

use std::collections::HashMap;
use std::fmt;
use std::hash::Hash;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tasks::EOS;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf { precision, recall, f1 }
    }

    fn from_counts(overlap: usize, cand_total: usize, ref_total: usize) -> Self {
        let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        Prf::new(ratio(overlap, cand_total), ratio(overlap, ref_total))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub rouge1: Prf,
    pub rouge2: Prf,
    pub rouge_l: Prf,
    pub bleu: f64,
    pub wer: f64,
    /// Position-wise agreement with the reference over reference positions.
    pub token_accuracy: f64,
}

fn ngram_counts<T: Eq + Hash>(seq: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if n > 0 && seq.len() >= n {
        for w in seq.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram overlap and the candidate/reference n-gram totals.
fn clipped_overlap<T: Eq + Hash>(cand: &[T], reference: &[T], n: usize) -> (usize, usize, usize) {
    let c = ngram_counts(cand, n);
    let r = ngram_counts(reference, n);
    let overlap = c.iter().map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0))).sum();
    let total = |s: &[T]| (s.len() + 1).saturating_sub(n);
    (overlap, total(cand), total(reference))
}

pub fn rouge_n<T: Eq + Hash>(cand: &[T], reference: &[T], n: usize) -> Prf {
    let (overlap, ct, rt) = clipped_overlap(cand, reference, n);
    Prf::from_counts(overlap, ct, rt)
}

/// Longest common subsequence length by dynamic programming.
pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l<T: Eq>(cand: &[T], reference: &[T]) -> Prf {
    Prf::from_counts(lcs_len(cand, reference), cand.len(), reference.len())
}

/// Single-reference BLEU with add-one smoothing of zero clipped counts for
/// `n ≥ 2`, orders capped at the candidate length, and brevity penalty
/// `exp(min(0, 1 − |ref|/|cand|))`. No unigram match scores 0.
pub fn bleu<T: Eq + Hash>(cand: &[T], reference: &[T], max_n: usize) -> f64 {
    if cand.is_empty() || max_n == 0 {
        return 0.0;
    }
    let orders = max_n.min(cand.len());
    let mut log_sum = 0.0;
    for n in 1..=orders {
        let (overlap, total, _) = clipped_overlap(cand, reference, n);
        let p = if overlap > 0 {
            overlap as f64 / total as f64
        } else if n == 1 {
            return 0.0;
        } else {
            1.0 / (total as f64 + 1.0)
        };
        log_sum += p.ln();
    }
    let bp = (1.0 - reference.len() as f64 / cand.len() as f64).min(0.0).exp();
    bp * (log_sum / orders as f64).exp()
}

pub fn levenshtein<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Word error rate: unit-cost edit distance over the reference length.
pub fn wer<T: Eq>(cand: &[T], reference: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    Ok(levenshtein(cand, reference) as f64 / reference.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Metric {
    Rouge1F,
    Rouge2F,
    RougeLF,
    Bleu,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Rouge1F, Metric::Rouge2F, Metric::RougeLF, Metric::Bleu];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Rouge1F => "rouge1_f",
            Metric::Rouge2F => "rouge2_f",
            Metric::RougeLF => "rougeL_f",
            Metric::Bleu => "bleu",
        }
    }

    /// Raw score, no EOS handling.
    pub fn score<T: Eq + Hash>(self, cand: &[T], reference: &[T]) -> f64 {
        match self {
            Metric::Rouge1F => rouge_n(cand, reference, 1).f1,
            Metric::Rouge2F => rouge_n(cand, reference, 2).f1,
            Metric::RougeLF => rouge_l(cand, reference).f1,
            Metric::Bleu => bleu(cand, reference, 4),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::UnknownMetric(s.to_string()))
    }
}

pub fn strip_eos(seq: &[usize]) -> &[usize] {
    let mut end = seq.len();
    while end > 0 && seq[end - 1] == EOS {
        end -= 1;
    }
    &seq[..end]
}

/// Score of `cand` against `reference` with trailing EOS removed from both.
pub fn reward(metric: Metric, cand: &[usize], reference: &[usize]) -> f64 {
    metric.score(strip_eos(cand), strip_eos(reference))
}

pub fn reward_by_name(metric: &str, cand: &[usize], reference: &[usize]) -> Result<f64> {
    Ok(reward(metric.parse()?, cand, reference))
}

/// Per-step shaped rewards `R(ŷ_{1..t}) − R(ŷ_{1..t−1})`; they sum to the
/// terminal reward.
pub fn incremental_rewards(metric: Metric, actions: &[usize], reference: &[usize]) -> Vec<f64> {
    let mut prev = 0.0;
    (1..=actions.len())
        .map(|t| {
            let r = reward(metric, &actions[..t], reference);
            let gain = r - prev;
            prev = r;
            gain
        })
        .collect()
}

/// Full report for one candidate/reference pair (EOS stripped).
pub fn report(cand: &[usize], reference: &[usize]) -> MetricReport {
    let c = strip_eos(cand);
    let r = strip_eos(reference);
    let hits = reference
        .iter()
        .enumerate()
        .filter(|&(i, tok)| cand.get(i) == Some(tok))
        .count();
    MetricReport {
        rouge1: rouge_n(c, r, 1),
        rouge2: rouge_n(c, r, 2),
        rouge_l: rouge_l(c, r),
        bleu: bleu(c, r, 4),
        wer: if r.is_empty() {
            c.len() as f64
        } else {
            levenshtein(c, r) as f64 / r.len() as f64
        },
        token_accuracy: if reference.is_empty() {
            0.0
        } else {
            hits as f64 / reference.len() as f64
        },
    }
}

impl MetricReport {
    /// Component-wise mean.
    pub fn mean(reports: &[MetricReport]) -> MetricReport {
        let n = reports.len().max(1) as f64;
        let avg = |f: &dyn Fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let prf = |g: &dyn Fn(&MetricReport) -> Prf| Prf {
            precision: avg(&|r| g(r).precision),
            recall: avg(&|r| g(r).recall),
            f1: avg(&|r| g(r).f1),
        };
        MetricReport {
            rouge1: prf(&|r| r.rouge1),
            rouge2: prf(&|r| r.rouge2),
            rouge_l: prf(&|r| r.rouge_l),
            bleu: avg(&|r| r.bleu),
            wer: avg(&|r| r.wer),
            token_accuracy: avg(&|r| r.token_accuracy),
        }
    }
}
