//! Browser bindings for three `seqrl` operations: schedule curves, metric
//! scoring and a GAE explorer.

use seqrl::ac::gae;
use seqrl::metrics::{bleu, rouge_l, rouge_n, wer};
use seqrl::schedules::Schedule;
use wasm_bindgen::prelude::*;

/// `samples` evenly spaced values of `text` over `0..=steps`.
pub fn schedule_points(text: &str, steps: u32, samples: u32) -> Result<Vec<f64>, String> {
    let schedule: Schedule = text.trim().parse().map_err(|e: seqrl::Error| e.to_string())?;
    let samples = samples.max(2);
    (0..samples)
        .map(|i| {
            let step = (u64::from(steps) * u64::from(i)) / u64::from(samples - 1);
            schedule.value_at(step).map_err(|e| e.to_string())
        })
        .collect()
}

/// `[rouge1_f, rouge2_f, rougeL_f, bleu, wer]` of whitespace-separated words.
pub fn score_text(candidate: &str, reference: &str) -> Result<Vec<f64>, String> {
    let cand: Vec<&str> = candidate.split_whitespace().collect();
    let refr: Vec<&str> = reference.split_whitespace().collect();
    let wer = wer(&cand, &refr).map_err(|e| e.to_string())?;
    Ok(vec![
        rouge_n(&cand, &refr, 1).f1,
        rouge_n(&cand, &refr, 2).f1,
        rouge_l(&cand, &refr).f1,
        bleu(&cand, &refr, 4),
        wer,
    ])
}

/// GAE advantages of one episode. `values` holds `V(s_0..s_{n-1})`, with an
/// optional trailing bootstrap value (terminal 0 when omitted).
pub fn gae_advantages(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<Vec<f64>, String> {
    let mut v = values.to_vec();
    if v.len() == rewards.len() {
        v.push(0.0);
    }
    gae(rewards, &v, gamma, lambda).map_err(|e| e.to_string())
}

#[wasm_bindgen(js_name = scheduleCurve)]
pub fn schedule_curve(text: &str, steps: u32, samples: u32) -> Result<Vec<f64>, JsError> {
    schedule_points(text, steps, samples).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = scoreText)]
pub fn score(candidate: &str, reference: &str) -> Result<Vec<f64>, JsError> {
    score_text(candidate, reference).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = gaeExplore)]
pub fn gae_explore(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<Vec<f64>, JsError> {
    gae_advantages(rewards, values, gamma, lambda).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_curve_endpoints() {
        let pts = schedule_points("linear:1:0:100", 100, 5).unwrap();
        assert_eq!(pts, vec![1.0, 0.75, 0.5, 0.25, 0.0]);
        assert!(schedule_points("cosine:1", 10, 3).is_err());
    }

    #[test]
    fn identical_text_scores_perfectly() {
        let s = score_text("the cat sat on the mat", "the cat sat on the mat").unwrap();
        assert_eq!(s, vec![1.0, 1.0, 1.0, 1.0, 0.0]);
        assert!(score_text("a", "").is_err());
    }

    #[test]
    fn gae_defaults_to_terminal_zero() {
        let a = gae_advantages(&[0.0, 1.0], &[0.5, 0.5], 1.0, 1.0).unwrap();
        assert_eq!(a, vec![0.5, 0.5]);
        let td = gae_advantages(&[0.0, 1.0], &[0.5, 0.5, 0.0], 1.0, 0.0).unwrap();
        assert_eq!(td, vec![0.0, 0.5]);
    }
}
