use std::fs;

use seqrl::harness::{
    self, emit_results, evaluate, load_policy, read_results, run, Algorithm, EvalDecode, ExperimentConfig, LogRow,
    RunLog, COLUMNS,
};
use seqrl::policy::PolicyParams;
use seqrl::tasks::{SequencePair, EOS};
use seqrl::tensor::SeededRng;
use seqrl::Error;

fn small(alg: Algorithm) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        algorithm: alg,
        n_train: 64,
        n_eval: 16,
        d: 8,
        pretrain_steps: 20,
        rl_steps: if alg.is_rl() { 10 } else { 0 },
        batch_size: 4,
        eval_every: 10,
        seed: 3,
        log_wall_clock: false,
        ..Default::default()
    };
    match alg {
        Algorithm::E2e => cfg.top_k = Some(3),
        Algorithm::Mixed => cfg.set("eta", "linear:0:1:10").unwrap(),
        Algorithm::Mixer => cfg.set("mixer", "mixer:2:1:5").unwrap(),
        Algorithm::AcGae => cfg.lambda = Some(0.9),
        _ => {}
    }
    if alg.uses_value_critic() || alg.uses_q_critic() {
        cfg.hidden = Some(6);
    }
    cfg
}

#[test]
fn every_algorithm_runs_deterministically() {
    for alg in Algorithm::ALL {
        let cfg = small(alg);
        let a = run(&cfg).unwrap_or_else(|e| panic!("{alg}: {e}"));
        let b = run(&cfg).unwrap();
        assert_eq!(a.log.rows, b.log.rows, "{alg}");
        assert_eq!(a.policy, b.policy, "{alg}");
        assert!(a.policy.is_finite(), "{alg}");
        let steps: Vec<u64> = a.log.rows.iter().map(|r| r.step).collect();
        let mut expected = vec![0, 10, 20];
        if alg.is_rl() {
            expected.push(30);
        }
        assert_eq!(steps, expected, "{alg}");
        assert_eq!(a.value_critic.is_some(), alg.uses_value_critic(), "{alg}");
        assert_eq!(a.q_critic.is_some(), alg.uses_q_critic(), "{alg}");
    }
}

#[test]
fn different_seeds_differ() {
    let a = run(&small(Algorithm::Reinforce)).unwrap();
    let b = run(&ExperimentConfig {
        seed: 4,
        ..small(Algorithm::Reinforce)
    })
    .unwrap();
    assert_ne!(a.policy, b.policy);
}

#[test]
fn empty_log_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("results.csv");
    emit_results(&RunLog::default(), &path).unwrap();
    assert_eq!(fs::read_to_string(&path).unwrap(), format!("{}\n", COLUMNS.join(",")));
    assert!(read_results(&path).unwrap().is_empty());
}

#[test]
fn results_round_trip_and_header_is_checked() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("results.csv");
    let out = run(&small(Algorithm::SelfCritic)).unwrap();
    emit_results(&out.log, &path).unwrap();
    assert_eq!(read_results(&path).unwrap(), out.log.rows);
    assert!(out.log.rows.iter().all(|r| r.seconds == 0.0));

    let text = fs::read_to_string(&path).unwrap().replacen("rougeL_f", "rouge_l", 1);
    fs::write(&path, text).unwrap();
    assert!(matches!(read_results(&path), Err(Error::Parse { line: 1, .. })));
}

#[test]
fn wall_clock_column_is_filled_when_enabled() {
    let cfg = ExperimentConfig {
        log_wall_clock: true,
        ..small(Algorithm::Ce)
    };
    let out = run(&cfg).unwrap();
    let last: &LogRow = out.log.rows.last().unwrap();
    assert!(last.seconds > 0.0);
    assert_eq!(out.log.elapsed.len(), out.log.rows.len());
}

#[test]
fn out_dir_holds_every_artifact_and_checkpoints_reload() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        out_dir: Some(dir.path().to_path_buf()),
        ..small(Algorithm::Pgac)
    };
    let out = run(&cfg).unwrap();
    for f in [
        "config.txt",
        "results.csv",
        "best.txt",
        "policy_pretrain.ckpt",
        "policy_final.ckpt",
        "policy_best.ckpt",
        "critic_value.ckpt",
        "critic_q.ckpt",
    ] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    let reloaded = ExperimentConfig::load(&dir.path().join("config.txt")).unwrap();
    assert_eq!(reloaded, cfg);

    let final_p = load_policy(&dir.path().join("policy_final.ckpt")).unwrap();
    assert_eq!(final_p, out.policy);
    let (_, eval) = harness::datasets(&cfg).unwrap();
    let a = evaluate(&out.policy, &eval.pairs, EvalDecode::Greedy).unwrap();
    let b = evaluate(&final_p, &eval.pairs, EvalDecode::Greedy).unwrap();
    assert_eq!(a, b);

    let best = fs::read_to_string(dir.path().join("best.txt")).unwrap();
    assert!(best.contains(&format!("best_step = {}", out.log.best_step)));
    let best_row = &out.log.rows[out.log.index_of(out.log.best_step).unwrap()];
    assert_eq!(best_row.rouge_l_f, out.log.best_rouge_l_f);
    assert!(out.log.rows.iter().all(|r| r.rouge_l_f <= out.log.best_rouge_l_f));
}

#[test]
fn fine_tuning_from_checkpoint_skips_pretraining() {
    let dir = tempfile::tempdir().unwrap();
    let pre = ExperimentConfig {
        out_dir: Some(dir.path().to_path_buf()),
        ..small(Algorithm::Ce)
    };
    run(&pre).unwrap();
    let cfg = ExperimentConfig {
        init_checkpoint: Some(dir.path().join("policy_final.ckpt")),
        ..small(Algorithm::SelfCritic)
    };
    let out = run(&cfg).unwrap();
    assert_eq!(out.log.rl_start, 0);
    assert_eq!(out.log.rows.iter().map(|r| r.step).collect::<Vec<_>>(), vec![0, 10]);

    let wrong = ExperimentConfig { d: 9, ..cfg };
    assert!(matches!(run(&wrong), Err(Error::Config { ref field, .. }) if field == "init_checkpoint"));
}

/// Emits `3` then EOS for any source: BOS lights state unit 0, token 3 lights
/// unit 1, and the output layer maps unit 0 to `3` and unit 1 to EOS.
fn scripted_policy() -> PolicyParams {
    let k = 12.0;
    let mut p = PolicyParams::zeros(4, 2);
    p.emb[(1, 0)] = 1.0;
    p.emb[(1, 1)] = -1.0;
    p.emb[(3, 0)] = -1.0;
    p.emb[(3, 1)] = 1.0;
    p.w1[(0, 0)] = k;
    p.w1[(1, 1)] = k;
    p.w4[(0, 3)] = k;
    p.w4[(1, EOS)] = k;
    p
}

#[test]
fn scripted_policy_scores_perfectly() {
    let p = scripted_policy();
    let data = [SequencePair {
        source: vec![3],
        target: vec![3, EOS],
    }];
    for decode in [EvalDecode::Greedy, EvalDecode::Beam(3)] {
        let r = evaluate(&p, &data, decode).unwrap();
        assert_eq!(r.rouge1.f1, 1.0);
        assert_eq!(r.rouge_l.f1, 1.0);
        assert_eq!(r.wer, 0.0);
        assert_eq!(r.token_accuracy, 1.0);
    }
}

#[test]
fn empty_output_scores_zero() {
    let mut p = PolicyParams::zeros(5, 2);
    p.emb[(1, 0)] = 1.0;
    p.w1[(0, 0)] = 5.0;
    p.w4[(0, EOS)] = 10.0;
    p.w4[(1, EOS)] = 10.0;
    let data = [SequencePair {
        source: vec![3, 4],
        target: vec![3, 4, EOS],
    }];
    let r = evaluate(&p, &data, EvalDecode::Greedy).unwrap();
    assert_eq!([r.rouge1.f1, r.rouge2.f1, r.rouge_l.f1, r.bleu], [0.0; 4]);
    assert_eq!(r.wer, 1.0);
}

#[test]
fn untrained_policy_samples_poorly() {
    let cfg = ExperimentConfig {
        pretrain_steps: 0,
        n_eval: 200,
        ..small(Algorithm::Ce)
    };
    let out = run(&cfg).unwrap();
    assert_eq!(out.log.rows.len(), 1);
    assert!(out.log.rows[0].sample_reward < 0.5, "{}", out.log.rows[0].sample_reward);
}

#[test]
fn cross_entropy_training_lowers_smoothed_loss() {
    let cfg = ExperimentConfig {
        n_train: 500,
        n_eval: 100,
        d: 16,
        pretrain_steps: 3000,
        eval_every: 100,
        ..small(Algorithm::Ce)
    };
    let log = run(&cfg).unwrap().log;
    let smooth = |i| log.trailing_mean(i, 5, |r| r.ce_loss);
    let n = log.rows.len();
    assert!(smooth(n - 1) < 0.5 * log.rows[0].ce_loss);
    for i in (9..n).step_by(5) {
        assert!(smooth(i) < smooth(i - 5), "smoothed loss rose at row {i}");
    }
    assert!(log.rows[n - 1].greedy_reward > log.rows[0].greedy_reward);
}

#[test]
fn mixed_loss_at_zero_weight_reproduces_cross_entropy() {
    let ce = run(&ExperimentConfig {
        pretrain_steps: 21,
        ..small(Algorithm::Ce)
    })
    .unwrap();
    let mixed = run(&ExperimentConfig {
        rl_steps: 1,
        ..small(Algorithm::Mixed)
    })
    .unwrap();
    let gap = mixed.policy.max_abs_diff(&ce.policy);
    assert!(gap <= 1e-12, "gap {gap:e}");
}

#[test]
fn config_mismatches_are_rejected() {
    let mut cfg = small(Algorithm::Ce);
    cfg.gamma = Some(0.9);
    assert!(matches!(run(&cfg), Err(Error::Config { ref field, .. }) if field == "gamma"));

    let cfg = ExperimentConfig {
        rl_steps: 5,
        ..small(Algorithm::Ce)
    };
    assert!(matches!(run(&cfg), Err(Error::Config { ref field, .. }) if field == "rl_steps"));

    let mut cfg = small(Algorithm::E2e);
    cfg.top_k = None;
    assert!(matches!(run(&cfg), Err(Error::Config { ref field, .. }) if field == "top_k"));

    let mut cfg = small(Algorithm::Mixer);
    cfg.set("mixer", "const:0.5").unwrap();
    assert!(matches!(run(&cfg), Err(Error::Config { ref field, .. }) if field == "mixer"));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.txt");
    fs::write(&path, "algorithm = ce\nlearning_rate = 0.1\n").unwrap();
    assert!(matches!(ExperimentConfig::load(&path), Err(Error::Config { ref field, .. }) if field == "learning_rate"));
}

#[test]
fn loaded_datasets_must_match_vocabulary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(Algorithm::Ce);
    let (train, eval) = harness::datasets(&cfg).unwrap();
    seqrl::tasks::save_dataset(&train, &dir.path().join("train.txt")).unwrap();
    seqrl::tasks::save_dataset(&eval, &dir.path().join("eval.txt")).unwrap();
    let from_files = ExperimentConfig {
        train_data: Some(dir.path().join("train.txt")),
        eval_data: Some(dir.path().join("eval.txt")),
        ..cfg.clone()
    };
    let (t2, e2) = harness::datasets(&from_files).unwrap();
    assert_eq!(t2.pairs, train.pairs);
    assert_eq!(e2.pairs, eval.pairs);
    assert_eq!(run(&from_files).unwrap().policy, run(&cfg).unwrap().policy);

    let wrong = ExperimentConfig {
        vocab_size: 10,
        ..from_files
    };
    assert!(harness::datasets(&wrong).is_err());
}

#[test]
fn grad_check_passes_across_seeds() {
    let mut rng = SeededRng::new(0);
    for _ in 0..5 {
        let cfg = ExperimentConfig {
            seed: rng.below(1000) as u64,
            ..Default::default()
        };
        let report = harness::grad_check(&cfg).unwrap();
        assert!(report.passed(harness::GRAD_TOLERANCE), "{}", report.render());
    }
}
