use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use seqrl::harness::{self, EvalDecode, ExperimentConfig, GRAD_TOLERANCE};
use seqrl::tasks::save_dataset;
use seqrl::{Error, Result};

#[derive(Parser)]
#[command(
    name = "seqrl",
    about = "Train and evaluate RL sequence-to-sequence policies",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed and `SEQRL_SEED`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the training and held-out datasets.
    GenData(Common),
    /// Run pretraining and RL fine-tuning.
    Train {
        #[command(flatten)]
        common: Common,
        /// Start from this policy checkpoint and skip pretraining.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Suppress per-evaluation progress lines.
        #[arg(long)]
        quiet: bool,
    },
    /// Score a policy checkpoint on the held-out set.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// `greedy` or `beam:<width>`; defaults to the config's `eval_decode`.
        #[arg(long)]
        decode: Option<EvalDecode>,
    },
    /// Finite-difference check of every backward pass.
    GradCheck(Common),
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Ok(v) = std::env::var("SEQRL_SEED") {
        cfg.set("seed", &v)?;
    }
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &c.out {
        cfg.out_dir = Some(out.clone());
    }
    for kv in &c.sets {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("expected KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v)?;
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenData(common) => {
            let cfg = load_config(&common)?;
            let dir = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
            std::fs::create_dir_all(&dir)?;
            let (train, eval) = harness::datasets(&cfg)?;
            save_dataset(&train, &dir.join("train.txt"))?;
            save_dataset(&eval, &dir.join("eval.txt"))?;
            println!(
                "wrote {} train and {} eval pairs to {}",
                train.pairs.len(),
                eval.pairs.len(),
                dir.display()
            );
        }
        Command::Train {
            common,
            checkpoint,
            quiet,
        } => {
            let mut cfg = load_config(&common)?;
            if checkpoint.is_some() {
                cfg.init_checkpoint = checkpoint;
            }
            let out = harness::run_with(&cfg, |row| {
                if !quiet {
                    println!(
                        "step {:>7}  ce {:.4}  sample {:.4}  greedy {:.4}  rougeL_f {:.4}  bleu {:.4}",
                        row.step, row.ce_loss, row.sample_reward, row.greedy_reward, row.rouge_l_f, row.bleu
                    );
                }
            })?;
            println!(
                "best rougeL_f {:.4} at step {}",
                out.log.best_rouge_l_f, out.log.best_step
            );
        }
        Command::Eval {
            common,
            checkpoint,
            decode,
        } => {
            let cfg = load_config(&common)?;
            let p = harness::load_policy(&checkpoint)?;
            let (_, eval) = harness::datasets(&cfg)?;
            let rep = harness::evaluate(&p, &eval.pairs, decode.unwrap_or(cfg.eval_decode))?;
            println!("rouge1_f {:.6}", rep.rouge1.f1);
            println!("rouge2_f {:.6}", rep.rouge2.f1);
            println!("rougeL_f {:.6}", rep.rouge_l.f1);
            println!("bleu {:.6}", rep.bleu);
            println!("wer {:.6}", rep.wer);
            println!("token_accuracy {:.6}", rep.token_accuracy);
        }
        Command::GradCheck(common) => {
            let cfg = load_config(&common)?;
            let report = harness::grad_check(&cfg)?;
            print!("{}", report.render());
            let ok = report.passed(GRAD_TOLERANCE);
            println!(
                "{} (max {:.3e}, tolerance {GRAD_TOLERANCE:e})",
                if ok { "PASS" } else { "FAIL" },
                report.max_error()
            );
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
