use std::fs;
use std::process::{Command, Output};

fn seqrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqrl"))
        .args(args)
        .env_remove("SEQRL_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn gen_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = root.join("exp.txt");
    fs::write(
        &cfg,
        "# tiny run\nalgorithm = self_critic\nn_train = 32\nn_eval = 8\nd = 6\npretrain_steps = 10\nrl_steps = 4\nbatch_size = 4\neval_every = 5\nlog_wall_clock = false\n",
    )
    .unwrap();
    let cfg = cfg.to_str().unwrap();
    let data = root.join("data");
    let o = seqrl(&["gen-data", "--config", cfg, "--out", data.to_str().unwrap()]);
    assert!(o.status.success(), "{o:?}");
    assert!(data.join("train.txt").is_file() && data.join("eval.txt").is_file());

    let run = root.join("run");
    let o = seqrl(&[
        "train",
        "--config",
        cfg,
        "--out",
        run.to_str().unwrap(),
        "--seed",
        "5",
        "--quiet",
    ]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).starts_with("best rougeL_f"));
    let csv = fs::read_to_string(run.join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);
    assert!(fs::read_to_string(run.join("config.txt")).unwrap().contains("seed = 5"));

    let ckpt = run.join("policy_final.ckpt");
    let o = seqrl(&[
        "eval",
        "--config",
        cfg,
        "--seed",
        "5",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--decode",
        "beam:2",
    ]);
    assert!(o.status.success(), "{o:?}");
    let text = stdout(&o);
    for key in ["rouge1_f", "rouge2_f", "rougeL_f", "bleu", "wer", "token_accuracy"] {
        assert!(text.lines().any(|l| l.starts_with(key)), "missing {key}: {text}");
    }
}

#[test]
fn env_seed_yields_to_flag_and_set() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let o = Command::new(env!("CARGO_BIN_EXE_seqrl"))
        .args([
            "gen-data",
            "--out",
            out.to_str().unwrap(),
            "--set",
            "n_train=3",
            "--set",
            "n_eval=2",
        ])
        .env("SEQRL_SEED", "11")
        .output()
        .unwrap();
    assert!(o.status.success(), "{o:?}");
    let by_env = fs::read_to_string(out.join("train.txt")).unwrap();
    let o = seqrl(&[
        "gen-data",
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "11",
        "--set",
        "n_train=3",
        "--set",
        "n_eval=2",
    ]);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(out.join("train.txt")).unwrap(), by_env);
}

#[test]
fn grad_check_reports_pass() {
    let o = seqrl(&["grad-check", "--seed", "2"]);
    assert!(o.status.success(), "{o:?}");
    let text = stdout(&o);
    assert!(text.lines().last().unwrap().starts_with("PASS"));
    assert!(text.contains("q_dueling_mean"));
}

#[test]
fn bad_config_exits_with_code_two() {
    let o = seqrl(&["train", "--set", "algorithm=ce", "--set", "gamma=0.5", "--quiet"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("gamma"));
    let o = seqrl(&["train", "--set", "no_equals_sign"]);
    assert_eq!(o.status.code(), Some(2));
}
