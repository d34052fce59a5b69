//! Experiment orchestration: pretraining then RL fine-tuning, held-out
//! evaluation, checkpoints and CSV results.

mod config;
mod gradcheck;

pub use config::{Algorithm, BaselineSetting, EvalDecode, ExperimentConfig};
pub use gradcheck::{compare_blocks, grad_check, GradReport, GradRow, GRAD_TOLERANCE};

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::ac::{sample_episodes, ACConfig, ACTrainer, AdvantageMode, ValueNetParams};
use crate::checkpoint::{Checkpoint, Checkpointable};
use crate::error::{Error, Result};
use crate::metrics::{report, reward, Metric, MetricReport};
use crate::pg::{
    ce_step, feeding_ce_step, mixed_loss_step, mixer_step, reinforce_step, self_critic_step, Baseline, PGConfig,
};
use crate::policy::{beam_search, forward_ce, rollout, sgd_update, DecodeConfig, DecodeMode, Gradients, PolicyParams};
use crate::qlearn::{q_actor_step, Aggregation, QConfig, QCritic, QNetParams, TargetKind};
use crate::schedules::{Schedule, ScheduleKind};
use crate::tasks::{gen_task, load_dataset, Dataset, SequencePair, Split, Vocab};
use crate::tensor::SeededRng;

const STREAM_TRAIN_DATA: u64 = 0;
const STREAM_EVAL_DATA: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_TRAIN: u64 = 3;
const STREAM_CRITIC_INIT: u64 = 4;
const STREAM_EVAL: u64 = 5;

pub const DEFAULT_HIDDEN: usize = 16;

/// Columns of the results CSV, in order.
pub const COLUMNS: [&str; 9] = [
    "step",
    "ce_loss",
    "sample_reward",
    "greedy_reward",
    "rouge1_f",
    "rouge2_f",
    "rougeL_f",
    "bleu",
    "seconds",
];

/// One held-out evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    /// Mean teacher-forced sequence cross-entropy.
    pub ce_loss: f64,
    /// Mean reward of one sampled decode per pair.
    pub sample_reward: f64,
    /// Mean reward of the greedy decode.
    pub greedy_reward: f64,
    pub rouge1_f: f64,
    pub rouge2_f: f64,
    #[serde(rename = "rougeL_f")]
    pub rouge_l_f: f64,
    pub bleu: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunLog {
    pub rows: Vec<LogRow>,
    /// Full metric report behind each row.
    pub reports: Vec<MetricReport>,
    /// Wall-clock seconds since the run started, recorded regardless of
    /// `log_wall_clock`.
    pub elapsed: Vec<f64>,
    /// First step of the RL phase.
    pub rl_start: u64,
    /// Step of the evaluation with the highest held-out `rougeL_f`.
    pub best_step: u64,
    pub best_rouge_l_f: f64,
}

impl RunLog {
    /// Row index at `step`, if one was logged.
    pub fn index_of(&self, step: u64) -> Option<usize> {
        self.rows.iter().position(|r| r.step == step)
    }

    /// Mean of `f` over rows `i−window+1 ..= i`.
    pub fn trailing_mean(&self, i: usize, window: usize, f: impl Fn(&LogRow) -> f64) -> f64 {
        let lo = (i + 1).saturating_sub(window.max(1));
        let slice = &self.rows[lo..=i];
        slice.iter().map(f).sum::<f64>() / slice.len() as f64
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub log: RunLog,
    pub policy: PolicyParams,
    pub best_policy: PolicyParams,
    pub value_critic: Option<ValueNetParams>,
    pub q_critic: Option<QNetParams>,
}

/// Mean metric report of `decode` over `data` (outputs capped at `|X| + 2`).
pub fn evaluate(p: &PolicyParams, data: &[SequencePair], decode: EvalDecode) -> Result<MetricReport> {
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let reports = data
        .iter()
        .map(|pair| Ok(report(&decode_eval(p, &pair.source, decode)?, &pair.target)))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport::mean(&reports))
}

fn decode_eval(p: &PolicyParams, x: &[usize], decode: EvalDecode) -> Result<Vec<usize>> {
    let max_len = x.len() + 2;
    match decode {
        EvalDecode::Greedy => {
            let cfg = DecodeConfig::new(DecodeMode::Greedy, max_len);
            Ok(rollout(p, x, &cfg, &mut SeededRng::new(0), None)?.actions)
        }
        EvalDecode::Beam(w) => beam_search(p, x, w, max_len),
    }
}

/// Training and held-out data: loaded from the configured files, else
/// generated from the seed.
pub fn datasets(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let root = SeededRng::new(cfg.seed);
    let vocab = Vocab::synthetic(cfg.n_content())?;
    let make = |path: &Option<PathBuf>, n: usize, split: Split, stream: u64| -> Result<Dataset> {
        match path {
            Some(p) => {
                let d = load_dataset(p)?;
                if d.vocab.len() != cfg.vocab_size {
                    return Err(Error::config(
                        "vocab_size",
                        format!(
                            "{} has {} tokens, config says {}",
                            p.display(),
                            d.vocab.len(),
                            cfg.vocab_size
                        ),
                    ));
                }
                if d.pairs.is_empty() {
                    return Err(Error::config(split.to_string() + "_data", "dataset is empty"));
                }
                Ok(d)
            }
            None => gen_task(
                cfg.task,
                n,
                &vocab,
                cfg.len_min,
                cfg.len_max,
                split,
                &mut root.derive(stream),
            ),
        }
    };
    Ok((
        make(&cfg.train_data, cfg.n_train, Split::Train, STREAM_TRAIN_DATA)?,
        make(&cfg.eval_data, cfg.n_eval, Split::Eval, STREAM_EVAL_DATA)?,
    ))
}

/// The RL-phase update rule with its critics.
#[allow(clippy::large_enum_variant)]
enum RlTrainer {
    Pg(PGConfig),
    SelfCritic(PGConfig),
    Mixer {
        pg: PGConfig,
        schedule: Schedule,
    },
    Mixed {
        pg: PGConfig,
        eta: Schedule,
    },
    Ac(ACTrainer),
    Q {
        critic: QCritic,
        eps_q: Schedule,
        value: Option<ACTrainer>,
        metric: Metric,
        max_len: Option<usize>,
    },
}

impl RlTrainer {
    fn new(cfg: &ExperimentConfig, rng: &mut SeededRng) -> Result<Option<Self>> {
        let alg = cfg.algorithm;
        let mut pg = PGConfig::new(cfg.batch_size, Baseline::BatchMean, cfg.metric);
        pg.gamma = cfg.gamma.unwrap_or(1.0);
        pg.max_len = cfg.max_len;
        let hidden = cfg.hidden.unwrap_or(DEFAULT_HIDDEN);
        let value_trainer = |rng: &mut SeededRng, advantage| -> Result<ACTrainer> {
            let mut ac = ACConfig::new(cfg.batch_size, cfg.metric);
            ac.gamma = pg.gamma;
            ac.advantage = advantage;
            ac.max_len = cfg.max_len;
            ac.critic_lr = cfg.critic_lr.unwrap_or(ac.critic_lr);
            ac.critic_batch = cfg.critic_batch.unwrap_or(ac.critic_batch);
            ac.capacity = cfg.capacity.unwrap_or(ac.capacity);
            ACTrainer::new(ValueNetParams::random(cfg.d, hidden, rng), ac)
        };
        let trainer = match alg {
            Algorithm::Ce | Algorithm::ScheduledSampling | Algorithm::E2e => return Ok(None),
            Algorithm::Reinforce => {
                pg.baseline = match cfg.baseline.unwrap_or(BaselineSetting::BatchMean) {
                    BaselineSetting::None => Baseline::None,
                    BaselineSetting::BatchMean => Baseline::BatchMean,
                    BaselineSetting::Constant(c) => Baseline::Constant(c),
                };
                RlTrainer::Pg(pg)
            }
            Algorithm::SelfCritic => RlTrainer::SelfCritic(pg),
            Algorithm::Mixer => RlTrainer::Mixer {
                pg,
                schedule: cfg.mixer.ok_or_else(|| Error::config("mixer", "required"))?,
            },
            Algorithm::Mixed => {
                pg.baseline = Baseline::SelfCritic;
                RlTrainer::Mixed {
                    pg,
                    eta: cfg.eta.ok_or_else(|| Error::config("eta", "required"))?,
                }
            }
            Algorithm::AcValue => RlTrainer::Ac(value_trainer(rng, AdvantageMode::Td)?),
            Algorithm::AcGae => {
                let lambda = cfg.lambda.ok_or_else(|| Error::config("lambda", "required"))?;
                RlTrainer::Ac(value_trainer(rng, AdvantageMode::Gae(lambda))?)
            }
            Algorithm::Dqn | Algorithm::Ddqn | Algorithm::Dueling | Algorithm::Pgac => {
                let default_kind = if alg == Algorithm::Ddqn {
                    TargetKind::Ddqn
                } else {
                    TargetKind::Dqn
                };
                let mut q = QConfig::new(cfg.q_target.unwrap_or(default_kind));
                q.gamma = pg.gamma;
                q.lr = cfg.q_lr.unwrap_or(q.lr);
                q.batch_size = cfg.q_batch.unwrap_or(q.batch_size);
                q.capacity = cfg.capacity.unwrap_or(q.capacity);
                q.replay = cfg.replay.unwrap_or(q.replay);
                q.sync = cfg.sync.unwrap_or(q.sync);
                q.shrink = cfg.shrink;
                let vocab = cfg.vocab_size;
                let live = if alg == Algorithm::Dueling {
                    let agg = cfg.dueling_agg.unwrap_or(Aggregation::Max);
                    QNetParams::dueling(cfg.d, hidden, vocab, agg, rng)
                } else {
                    QNetParams::plain(cfg.d, hidden, vocab, rng)
                };
                let value = if alg == Algorithm::Pgac {
                    Some(value_trainer(rng, AdvantageMode::Td)?)
                } else {
                    None
                };
                RlTrainer::Q {
                    critic: QCritic::new(live, q)?,
                    eps_q: cfg.eps_q.unwrap_or(Schedule::constant(0.0)),
                    value,
                    metric: cfg.metric,
                    max_len: cfg.max_len,
                }
            }
        };
        Ok(Some(trainer))
    }

    /// Actor gradient for RL step `t` (counted from the start of the phase).
    fn gradient(&mut self, p: &PolicyParams, batch: &[SequencePair], t: u64, rng: &mut SeededRng) -> Result<Gradients> {
        match self {
            RlTrainer::Pg(pg) => Ok(reinforce_step(p, batch, pg, rng)?.0),
            RlTrainer::SelfCritic(pg) => Ok(self_critic_step(p, batch, pg, rng)?.0),
            RlTrainer::Mixer { pg, schedule } => {
                let delta = schedule.value_at(t)? as usize;
                let splits: Vec<usize> = batch
                    .iter()
                    .map(|pair| pair.target.len().saturating_sub(delta))
                    .collect();
                Ok(mixer_step(p, batch, &splits, pg, rng)?.0)
            }
            RlTrainer::Mixed { pg, eta } => {
                let eta = eta.value_at(t)?.clamp(0.0, 1.0);
                Ok(mixed_loss_step(p, batch, pg, eta, rng)?.0)
            }
            RlTrainer::Ac(ac) => Ok(ac.step(p, batch, rng)?.0),
            RlTrainer::Q {
                critic,
                eps_q,
                value,
                metric,
                max_len,
            } => {
                let eps = eps_q.value_at(t)?.clamp(0.0, 1.0);
                let episodes = sample_episodes(p, batch, *metric, *max_len, rng)?;
                critic.observe(&episodes);
                critic.train_step(eps, rng)?;
                match value {
                    Some(v) => {
                        v.observe(&episodes, rng)?;
                        q_actor_step(p, &critic.live, &episodes, Some(&v.critic))
                    }
                    None => q_actor_step(p, &critic.live, &episodes, None::<&ValueNetParams>),
                }
            }
        }
    }

    fn value_critic(&self) -> Option<&ValueNetParams> {
        match self {
            RlTrainer::Ac(ac) => Some(&ac.critic),
            RlTrainer::Q { value: Some(v), .. } => Some(&v.critic),
            _ => None,
        }
    }

    fn q_critic(&self) -> Option<&QNetParams> {
        match self {
            RlTrainer::Q { critic, .. } => Some(&critic.live),
            _ => None,
        }
    }
}

/// Mutable state of a run between evaluations.
struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    eval: &'a [SequencePair],
    log: RunLog,
    best: Option<PolicyParams>,
    start: Instant,
}

impl Runner<'_> {
    fn evaluate_row(&mut self, p: &PolicyParams, step: u64) -> Result<LogRow> {
        let cfg = self.cfg;
        let mut sample_rng = SeededRng::new(cfg.seed).derive(STREAM_EVAL).derive(step);
        let (mut ce, mut sampled, mut greedy) = (0.0, 0.0, 0.0);
        let mut reports = Vec::with_capacity(self.eval.len());
        for pair in self.eval {
            let max_len = pair.source.len() + 2;
            ce += forward_ce(p, pair)?.0;
            let s = rollout(
                p,
                &pair.source,
                &DecodeConfig::new(DecodeMode::Sample, max_len),
                &mut sample_rng,
                None,
            )?;
            sampled += reward(cfg.metric, &s.actions, &pair.target);
            let g = decode_eval(p, &pair.source, EvalDecode::Greedy)?;
            greedy += reward(cfg.metric, &g, &pair.target);
            let out = match cfg.eval_decode {
                EvalDecode::Greedy => g,
                beam => decode_eval(p, &pair.source, beam)?,
            };
            reports.push(report(&out, &pair.target));
        }
        let n = self.eval.len() as f64;
        let rep = MetricReport::mean(&reports);
        let elapsed = self.start.elapsed().as_secs_f64();
        let row = LogRow {
            step,
            ce_loss: ce / n,
            sample_reward: sampled / n,
            greedy_reward: greedy / n,
            rouge1_f: rep.rouge1.f1,
            rouge2_f: rep.rouge2.f1,
            rouge_l_f: rep.rouge_l.f1,
            bleu: rep.bleu,
            seconds: if cfg.log_wall_clock { elapsed } else { 0.0 },
        };
        if self.best.is_none() || row.rouge_l_f > self.log.best_rouge_l_f {
            self.best = Some(p.clone());
            self.log.best_step = step;
            self.log.best_rouge_l_f = row.rouge_l_f;
        }
        self.log.rows.push(row);
        self.log.reports.push(rep);
        self.log.elapsed.push(elapsed);
        Ok(row)
    }

    fn log_if_new(&mut self, p: &PolicyParams, step: u64, on_row: &mut dyn FnMut(&LogRow)) -> Result<()> {
        if self.log.rows.last().is_some_and(|r| r.step == step) {
            return Ok(());
        }
        let row = self.evaluate_row(p, step)?;
        on_row(&row);
        Ok(())
    }
}

fn save_policy(out: Option<&Path>, name: &str, p: &PolicyParams) -> Result<()> {
    match out {
        Some(dir) => p.to_checkpoint().save(&dir.join(name)),
        None => Ok(()),
    }
}

pub fn load_policy(path: &Path) -> Result<PolicyParams> {
    PolicyParams::from_checkpoint(&Checkpoint::load(path)?)
}

/// [`run_with`] without a progress callback.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    run_with(cfg, |_| {})
}

/// Pretrains for `pretrain_steps` (skipped when `init_checkpoint` is set),
/// then fine-tunes for `rl_steps`. Evaluates at step 0, every `eval_every`
/// steps and at the end of each phase; `on_row` sees each row as it is
/// logged.
pub fn run_with(cfg: &ExperimentConfig, mut on_row: impl FnMut(&LogRow)) -> Result<RunOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let out_dir = cfg.out_dir.as_deref();
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.txt"), cfg.to_text())?;
    }
    let (train, eval) = datasets(cfg)?;
    let root = SeededRng::new(cfg.seed);
    let mut p = match &cfg.init_checkpoint {
        Some(path) => {
            let p = load_policy(path)?;
            if p.vocab_size() != cfg.vocab_size || p.hidden() != cfg.d {
                return Err(Error::config(
                    "init_checkpoint",
                    format!(
                        "checkpoint has |A|={} d={}, config has {} and {}",
                        p.vocab_size(),
                        p.hidden(),
                        cfg.vocab_size,
                        cfg.d
                    ),
                ));
            }
            p
        }
        None => PolicyParams::random_with_gain(cfg.vocab_size, cfg.d, cfg.init_gain, &mut root.derive(STREAM_INIT)),
    };
    let mut rng = root.derive(STREAM_TRAIN);
    let mut rl = RlTrainer::new(cfg, &mut root.derive(STREAM_CRITIC_INIT))?;

    let mut runner = Runner {
        cfg,
        eval: &eval.pairs,
        log: RunLog::default(),
        best: None,
        start,
    };
    let pretrain = if cfg.init_checkpoint.is_some() {
        0
    } else {
        cfg.pretrain_steps
    };
    let total = pretrain + if rl.is_some() { cfg.rl_steps } else { 0 };
    let mut cursor = 0usize;
    let n_train = train.pairs.len();
    let lr_at = |base: f64, step: u64| match cfg.lr_decay {
        Some(k) => base / (1.0 + step as f64 / k),
        None => base,
    };
    let epsilon = cfg.epsilon.unwrap_or(Schedule {
        kind: ScheduleKind::Linear {
            start: 1.0,
            end: 0.0,
            total_steps: pretrain.max(1),
        },
        lo: 0.0,
        hi: 1.0,
    });

    runner.log_if_new(&p, 0, &mut on_row)?;
    runner.log.rl_start = pretrain;
    for step in 0..total {
        let batch: Vec<SequencePair> = (0..cfg.batch_size)
            .map(|i| train.pairs[(cursor + i) % n_train].clone())
            .collect();
        cursor = (cursor + cfg.batch_size) % n_train;
        let (g, base_lr) = if step < pretrain {
            let g = match cfg.algorithm {
                Algorithm::ScheduledSampling => {
                    let eps = epsilon.value_at(step)?.clamp(0.0, 1.0);
                    feeding_ce_step(&p, &batch, DecodeMode::Scheduled(eps), &mut rng)?.0
                }
                Algorithm::E2e => {
                    let k = cfg.top_k.ok_or_else(|| Error::config("top_k", "required"))?;
                    feeding_ce_step(&p, &batch, DecodeMode::E2eTopK(k), &mut rng)?.0
                }
                _ => ce_step(&p, &batch)?.0,
            };
            (g, cfg.lr)
        } else {
            let trainer = rl.as_mut().expect("RL steps only run with a trainer");
            (
                trainer.gradient(&p, &batch, step - pretrain, &mut rng)?,
                cfg.rl_lr.unwrap_or(cfg.lr),
            )
        };
        let lr = lr_at(base_lr, step);
        p = sgd_update(&p, &g, lr, cfg.clip)?;
        if cfg.weight_decay > 0.0 {
            p.scale(1.0 - lr * cfg.weight_decay);
        }
        let done = step + 1;
        if done == pretrain {
            save_policy(out_dir, "policy_pretrain.ckpt", &p)?;
        }
        if done % cfg.eval_every == 0 || done == pretrain || done == total {
            runner.log_if_new(&p, done, &mut on_row)?;
        }
    }

    save_policy(out_dir, "policy_final.ckpt", &p)?;
    let best_policy = runner.best.take().unwrap_or_else(|| p.clone());
    save_policy(out_dir, "policy_best.ckpt", &best_policy)?;
    let value_critic = rl.as_ref().and_then(|r| r.value_critic().cloned());
    let q_critic = rl.as_ref().and_then(|r| r.q_critic().cloned());
    if let Some(dir) = out_dir {
        if let Some(v) = &value_critic {
            v.to_checkpoint().save(&dir.join("critic_value.ckpt"))?;
        }
        if let Some(q) = &q_critic {
            q.to_checkpoint().save(&dir.join("critic_q.ckpt"))?;
        }
        emit_results(&runner.log, &dir.join("results.csv"))?;
        fs::write(
            dir.join("best.txt"),
            format!(
                "best_step = {}\nrougeL_f = {}\n",
                runner.log.best_step, runner.log.best_rouge_l_f
            ),
        )?;
    }
    Ok(RunOutput {
        log: runner.log,
        policy: p,
        best_policy,
        value_critic,
        q_critic,
    })
}

/// Writes the header and one line per row.
pub fn emit_results(log: &RunLog, path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(COLUMNS)?;
    for row in &log.rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<LogRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != COLUMNS {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("unexpected header {}", header.join(",")),
        });
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
