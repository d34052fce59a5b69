//! Experiment configuration: flat `key = value` text with `#` comments.
//!
//! Algorithm-specific fields are `Option`s. Validation rejects a field that
//! does not apply to the chosen algorithm as well as a missing required one.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::metrics::Metric;
use crate::qlearn::{Aggregation, PriorityDirection, ReplayMode, SyncMode, TargetKind};
use crate::schedules::{Schedule, ScheduleKind};
use crate::tasks::{TaskKind, NUM_RESERVED};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algorithm {
    Ce,
    ScheduledSampling,
    E2e,
    Reinforce,
    SelfCritic,
    Mixer,
    Mixed,
    AcValue,
    AcGae,
    Dqn,
    Ddqn,
    Dueling,
    Pgac,
}

impl Algorithm {
    pub const ALL: [Algorithm; 13] = [
        Algorithm::Ce,
        Algorithm::ScheduledSampling,
        Algorithm::E2e,
        Algorithm::Reinforce,
        Algorithm::SelfCritic,
        Algorithm::Mixer,
        Algorithm::Mixed,
        Algorithm::AcValue,
        Algorithm::AcGae,
        Algorithm::Dqn,
        Algorithm::Ddqn,
        Algorithm::Dueling,
        Algorithm::Pgac,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Ce => "ce",
            Algorithm::ScheduledSampling => "scheduled_sampling",
            Algorithm::E2e => "e2e",
            Algorithm::Reinforce => "reinforce",
            Algorithm::SelfCritic => "self_critic",
            Algorithm::Mixer => "mixer",
            Algorithm::Mixed => "mixed",
            Algorithm::AcValue => "ac_value",
            Algorithm::AcGae => "ac_gae",
            Algorithm::Dqn => "dqn",
            Algorithm::Ddqn => "ddqn",
            Algorithm::Dueling => "dueling",
            Algorithm::Pgac => "pgac",
        }
    }

    /// Whether the algorithm has an RL phase after pretraining.
    pub fn is_rl(self) -> bool {
        !matches!(self, Algorithm::Ce | Algorithm::ScheduledSampling | Algorithm::E2e)
    }

    pub fn uses_value_critic(self) -> bool {
        matches!(self, Algorithm::AcValue | Algorithm::AcGae | Algorithm::Pgac)
    }

    pub fn uses_q_critic(self) -> bool {
        matches!(
            self,
            Algorithm::Dqn | Algorithm::Ddqn | Algorithm::Dueling | Algorithm::Pgac
        )
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::config("algorithm", format!("unknown algorithm `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EvalDecode {
    Greedy,
    Beam(usize),
}

impl fmt::Display for EvalDecode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalDecode::Greedy => f.write_str("greedy"),
            EvalDecode::Beam(w) => write!(f, "beam:{w}"),
        }
    }
}

impl FromStr for EvalDecode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "greedy" => Ok(EvalDecode::Greedy),
            Some(("beam", w)) => match w.parse::<usize>() {
                Ok(w) if w > 0 => Ok(EvalDecode::Beam(w)),
                _ => Err(Error::InvalidArgument(format!("bad beam width in `{s}`"))),
            },
            _ => Err(Error::InvalidArgument(format!(
                "expected `greedy` or `beam:<width>`, got `{s}`"
            ))),
        }
    }
}

/// Reward baseline for plain REINFORCE.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BaselineSetting {
    None,
    BatchMean,
    Constant(f64),
}

impl fmt::Display for BaselineSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaselineSetting::None => f.write_str("none"),
            BaselineSetting::BatchMean => f.write_str("batch_mean"),
            BaselineSetting::Constant(c) => write!(f, "const:{c}"),
        }
    }
}

impl FromStr for BaselineSetting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(BaselineSetting::None),
            "batch_mean" => Ok(BaselineSetting::BatchMean),
            _ => s
                .strip_prefix("const:")
                .and_then(|v| v.parse().ok())
                .map(BaselineSetting::Constant)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown baseline `{s}`"))),
        }
    }
}

pub fn format_replay(r: ReplayMode) -> String {
    match r {
        ReplayMode::Uniform => "uniform".into(),
        ReplayMode::Prioritized {
            direction: PriorityDirection::LowFirst,
            alpha,
        } => format!("low_first:{alpha}"),
        ReplayMode::Prioritized {
            direction: PriorityDirection::HighFirst,
            alpha,
        } => format!("high_first:{alpha}"),
    }
}

pub fn parse_replay(s: &str) -> Result<ReplayMode> {
    if s == "uniform" {
        return Ok(ReplayMode::Uniform);
    }
    let (dir, alpha) = s.split_once(':').unwrap_or((s, "1"));
    let direction = match dir {
        "low_first" => PriorityDirection::LowFirst,
        "high_first" => PriorityDirection::HighFirst,
        _ => return Err(Error::InvalidArgument(format!("unknown replay mode `{s}`"))),
    };
    let alpha = alpha
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("bad priority exponent in `{s}`")))?;
    Ok(ReplayMode::Prioritized { direction, alpha })
}

pub fn format_sync(s: SyncMode) -> String {
    match s {
        SyncMode::Hard(n) => format!("hard:{n}"),
        SyncMode::Polyak => "polyak".into(),
    }
}

pub fn parse_sync(s: &str) -> Result<SyncMode> {
    if s == "polyak" {
        return Ok(SyncMode::Polyak);
    }
    s.strip_prefix("hard:")
        .and_then(|n| n.parse().ok())
        .filter(|&n: &u64| n > 0)
        .map(SyncMode::Hard)
        .ok_or_else(|| Error::InvalidArgument(format!("expected `hard:<N>` or `polyak`, got `{s}`")))
}

fn format_target(t: TargetKind) -> &'static str {
    match t {
        TargetKind::Dqn => "dqn",
        TargetKind::Ddqn => "ddqn",
        TargetKind::Sarsa => "sarsa",
    }
}

fn parse_target(s: &str) -> Result<TargetKind> {
    match s {
        "dqn" => Ok(TargetKind::Dqn),
        "ddqn" => Ok(TargetKind::Ddqn),
        "sarsa" => Ok(TargetKind::Sarsa),
        _ => Err(Error::InvalidArgument(format!("unknown Q target `{s}`"))),
    }
}

fn parse_agg(s: &str) -> Result<Aggregation> {
    match s {
        "max" => Ok(Aggregation::Max),
        "mean" => Ok(Aggregation::Mean),
        _ => Err(Error::InvalidArgument(format!("unknown aggregation `{s}`"))),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    /// Vocabulary size `|A|`, reserved tokens included.
    pub vocab_size: usize,
    pub len_min: usize,
    pub len_max: usize,
    pub n_train: usize,
    pub n_eval: usize,
    pub train_data: Option<PathBuf>,
    pub eval_data: Option<PathBuf>,
    pub d: usize,
    pub init_gain: f64,
    pub algorithm: Algorithm,
    pub pretrain_steps: u64,
    pub rl_steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    /// `lr_t = lr / (1 + t / lr_decay)` when set.
    pub lr_decay: Option<f64>,
    pub weight_decay: f64,
    pub clip: Option<f64>,
    pub metric: Metric,
    pub eval_every: u64,
    pub eval_decode: EvalDecode,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub log_wall_clock: bool,
    pub init_checkpoint: Option<PathBuf>,

    pub epsilon: Option<Schedule>,
    pub top_k: Option<usize>,

    pub rl_lr: Option<f64>,
    pub max_len: Option<usize>,
    pub gamma: Option<f64>,
    pub baseline: Option<BaselineSetting>,
    pub eta: Option<Schedule>,
    pub mixer: Option<Schedule>,
    pub lambda: Option<f64>,
    pub hidden: Option<usize>,
    pub critic_lr: Option<f64>,
    pub critic_batch: Option<usize>,
    pub capacity: Option<usize>,
    pub q_lr: Option<f64>,
    pub q_batch: Option<usize>,
    pub q_target: Option<TargetKind>,
    pub replay: Option<ReplayMode>,
    pub sync: Option<SyncMode>,
    pub eps_q: Option<Schedule>,
    pub shrink: Option<f64>,
    pub dueling_agg: Option<Aggregation>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: TaskKind::Copy,
            vocab_size: 8,
            len_min: 4,
            len_max: 6,
            n_train: 2000,
            n_eval: 200,
            train_data: None,
            eval_data: None,
            d: 32,
            init_gain: 4.0,
            algorithm: Algorithm::Ce,
            pretrain_steps: 1000,
            rl_steps: 0,
            batch_size: 16,
            lr: 0.5,
            lr_decay: None,
            weight_decay: 0.0,
            clip: Some(1.0),
            metric: Metric::Rouge1F,
            eval_every: 200,
            eval_decode: EvalDecode::Greedy,
            seed: 0,
            out_dir: None,
            log_wall_clock: true,
            init_checkpoint: None,
            epsilon: None,
            top_k: None,
            rl_lr: None,
            max_len: None,
            gamma: None,
            baseline: None,
            eta: None,
            mixer: None,
            lambda: None,
            hidden: None,
            critic_lr: None,
            critic_batch: None,
            capacity: None,
            q_lr: None,
            q_batch: None,
            q_target: None,
            replay: None,
            sync: None,
            eps_q: None,
            shrink: None,
            dueling_agg: None,
        }
    }
}

/// Optional fields and the algorithms they apply to.
fn applies(field: &str, alg: Algorithm) -> bool {
    use Algorithm::*;
    match field {
        "epsilon" => alg == ScheduledSampling,
        "top_k" => alg == E2e,
        "rl_lr" | "max_len" => alg.is_rl(),
        "gamma" => alg.is_rl() && alg != Mixer,
        "baseline" => alg == Reinforce,
        "eta" => alg == Mixed,
        "mixer" => alg == Mixer,
        "lambda" => alg == AcGae,
        "hidden" | "capacity" => alg.uses_value_critic() || alg.uses_q_critic(),
        "critic_lr" | "critic_batch" => alg.uses_value_critic(),
        "q_lr" | "q_batch" | "q_target" | "replay" | "sync" | "eps_q" | "shrink" => alg.uses_q_critic(),
        "dueling_agg" => alg == Dueling,
        _ => true,
    }
}

fn required(field: &str, alg: Algorithm) -> bool {
    matches!(
        (field, alg),
        ("top_k", Algorithm::E2e)
            | ("eta", Algorithm::Mixed)
            | ("mixer", Algorithm::Mixer)
            | ("lambda", Algorithm::AcGae)
    )
}

fn parse_field<T: FromStr>(field: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e: T::Err| Error::config(field, format!("cannot parse `{value}`: {e}")))
}

fn parse_bool(field: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(field, format!("expected a boolean, got `{value}`"))),
    }
}

fn via<T>(field: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config { .. } => e,
        other => Error::config(field, other.to_string()),
    })
}

impl ExperimentConfig {
    pub fn for_algorithm(algorithm: Algorithm) -> Self {
        ExperimentConfig {
            algorithm,
            ..Default::default()
        }
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let opt_none = v.is_empty() || v == "none";
        match key {
            "task" => self.task = via(key, v.parse())?,
            "vocab_size" => self.vocab_size = parse_field(key, v)?,
            "len_min" => self.len_min = parse_field(key, v)?,
            "len_max" => self.len_max = parse_field(key, v)?,
            "n_train" => self.n_train = parse_field(key, v)?,
            "n_eval" => self.n_eval = parse_field(key, v)?,
            "train_data" => self.train_data = (!opt_none).then(|| PathBuf::from(v)),
            "eval_data" => self.eval_data = (!opt_none).then(|| PathBuf::from(v)),
            "d" => self.d = parse_field(key, v)?,
            "init_gain" => self.init_gain = parse_field(key, v)?,
            "algorithm" => self.algorithm = via(key, v.parse())?,
            "pretrain_steps" => self.pretrain_steps = parse_field(key, v)?,
            "rl_steps" => self.rl_steps = parse_field(key, v)?,
            "batch_size" => self.batch_size = parse_field(key, v)?,
            "lr" => self.lr = parse_field(key, v)?,
            "lr_decay" => self.lr_decay = if opt_none { None } else { Some(parse_field(key, v)?) },
            "weight_decay" => self.weight_decay = parse_field(key, v)?,
            "clip" => self.clip = if opt_none { None } else { Some(parse_field(key, v)?) },
            "metric" => self.metric = via(key, v.parse())?,
            "eval_every" => self.eval_every = parse_field(key, v)?,
            "eval_decode" => self.eval_decode = via(key, v.parse())?,
            "seed" => self.seed = parse_field(key, v)?,
            "out_dir" => self.out_dir = (!opt_none).then(|| PathBuf::from(v)),
            "log_wall_clock" => self.log_wall_clock = parse_bool(key, v)?,
            "init_checkpoint" => self.init_checkpoint = (!opt_none).then(|| PathBuf::from(v)),
            "epsilon" => self.epsilon = Some(via(key, v.parse())?),
            "top_k" => self.top_k = Some(parse_field(key, v)?),
            "rl_lr" => self.rl_lr = Some(parse_field(key, v)?),
            "max_len" => self.max_len = Some(parse_field(key, v)?),
            "gamma" => self.gamma = Some(parse_field(key, v)?),
            "baseline" => self.baseline = Some(via(key, v.parse())?),
            "eta" => self.eta = Some(via(key, v.parse())?),
            "mixer" => self.mixer = Some(via(key, v.parse())?),
            "lambda" => self.lambda = Some(parse_field(key, v)?),
            "hidden" => self.hidden = Some(parse_field(key, v)?),
            "critic_lr" => self.critic_lr = Some(parse_field(key, v)?),
            "critic_batch" => self.critic_batch = Some(parse_field(key, v)?),
            "capacity" => self.capacity = Some(parse_field(key, v)?),
            "q_lr" => self.q_lr = Some(parse_field(key, v)?),
            "q_batch" => self.q_batch = Some(parse_field(key, v)?),
            "q_target" => self.q_target = Some(via(key, parse_target(v))?),
            "replay" => self.replay = Some(via(key, parse_replay(v))?),
            "sync" => self.sync = Some(via(key, parse_sync(v))?),
            "eps_q" => self.eps_q = Some(via(key, v.parse())?),
            "shrink" => self.shrink = Some(parse_field(key, v)?),
            "dueling_agg" => self.dueling_agg = Some(via(key, parse_agg(v))?),
            _ => return Err(Error::config(key, "unknown field")),
        }
        Ok(())
    }

    /// Applies every assignment in `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                msg: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Parse {
                    path: origin.to_path_buf(),
                    line: i + 1,
                    msg: format!("field `{key}` assigned twice"),
                });
            }
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = ExperimentConfig::default();
        c.apply_text(text, Path::new("<config>"))?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut c = ExperimentConfig::default();
        c.apply_text(&fs::read_to_string(path)?, path)?;
        Ok(c)
    }

    fn optional_fields(&self) -> Vec<(&'static str, Option<String>)> {
        let s = |x: Option<String>| x;
        vec![
            ("epsilon", self.epsilon.map(|v| v.to_string())),
            ("top_k", self.top_k.map(|v| v.to_string())),
            ("rl_lr", self.rl_lr.map(|v| v.to_string())),
            ("max_len", self.max_len.map(|v| v.to_string())),
            ("gamma", self.gamma.map(|v| v.to_string())),
            ("baseline", self.baseline.map(|v| v.to_string())),
            ("eta", self.eta.map(|v| v.to_string())),
            ("mixer", self.mixer.map(|v| v.to_string())),
            ("lambda", self.lambda.map(|v| v.to_string())),
            ("hidden", self.hidden.map(|v| v.to_string())),
            ("critic_lr", self.critic_lr.map(|v| v.to_string())),
            ("critic_batch", self.critic_batch.map(|v| v.to_string())),
            ("capacity", self.capacity.map(|v| v.to_string())),
            ("q_lr", self.q_lr.map(|v| v.to_string())),
            ("q_batch", self.q_batch.map(|v| v.to_string())),
            ("q_target", self.q_target.map(|v| format_target(v).to_string())),
            ("replay", self.replay.map(format_replay)),
            ("sync", self.sync.map(format_sync)),
            ("eps_q", self.eps_q.map(|v| v.to_string())),
            ("shrink", self.shrink.map(|v| v.to_string())),
            (
                "dueling_agg",
                s(self.dueling_agg.map(|a| match a {
                    Aggregation::Max => "max".to_string(),
                    Aggregation::Mean => "mean".to_string(),
                })),
            ),
        ]
    }

    /// Range checks plus field/algorithm applicability in both directions.
    pub fn validate(&self) -> Result<()> {
        let alg = self.algorithm;
        for (field, value) in self.optional_fields() {
            match (value.is_some(), applies(field, alg), required(field, alg)) {
                (true, false, _) => {
                    return Err(Error::config(field, format!("does not apply to algorithm `{alg}`")));
                }
                (false, _, true) => {
                    return Err(Error::config(field, format!("required by algorithm `{alg}`")));
                }
                _ => {}
            }
        }
        let positive = |field: &str, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(field, "must be positive"))
            }
        };
        let unit = |field: &str, v: Option<f64>| match v {
            Some(x) if !(0.0..=1.0).contains(&x) => Err(Error::config(field, format!("{x} outside [0, 1]"))),
            _ => Ok(()),
        };
        if self.vocab_size <= NUM_RESERVED {
            return Err(Error::config(
                "vocab_size",
                format!("needs at least {} tokens", NUM_RESERVED + 1),
            ));
        }
        positive("len_min", self.len_min > 0)?;
        if self.len_max < self.len_min {
            return Err(Error::config("len_max", "must be at least len_min"));
        }
        positive("n_train", self.n_train > 0 || self.train_data.is_some())?;
        positive("n_eval", self.n_eval > 0 || self.eval_data.is_some())?;
        positive("d", self.d > 0)?;
        positive("init_gain", self.init_gain > 0.0)?;
        positive("batch_size", self.batch_size > 0)?;
        positive("lr", self.lr > 0.0)?;
        positive("lr_decay", self.lr_decay.is_none_or(|v| v > 0.0))?;
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(Error::config("weight_decay", "must be non-negative"));
        }
        positive("clip", self.clip.is_none_or(|v| v > 0.0))?;
        positive("eval_every", self.eval_every > 0)?;
        if !alg.is_rl() && self.rl_steps > 0 {
            return Err(Error::config("rl_steps", format!("algorithm `{alg}` has no RL phase")));
        }
        positive("top_k", self.top_k.is_none_or(|k| k > 0))?;
        positive("rl_lr", self.rl_lr.is_none_or(|v| v > 0.0))?;
        positive("max_len", self.max_len.is_none_or(|v| v > 0))?;
        unit("gamma", self.gamma)?;
        unit("lambda", self.lambda)?;
        positive("hidden", self.hidden.is_none_or(|v| v > 0))?;
        positive("critic_lr", self.critic_lr.is_none_or(|v| v > 0.0))?;
        positive("critic_batch", self.critic_batch.is_none_or(|v| v > 0))?;
        positive("capacity", self.capacity.is_none_or(|v| v > 0))?;
        positive("q_lr", self.q_lr.is_none_or(|v| v > 0.0))?;
        positive("q_batch", self.q_batch.is_none_or(|v| v > 0))?;
        if let Some(m) = self.mixer {
            if !matches!(m.kind, ScheduleKind::Mixer { .. }) {
                return Err(Error::config("mixer", "expected a `mixer:n_ce:delta:steps` schedule"));
            }
        }
        if self.shrink.is_some_and(|v| v < 0.0) {
            return Err(Error::config("shrink", "must be non-negative"));
        }
        Ok(())
    }

    /// Number of content (non-reserved) tokens.
    pub fn n_content(&self) -> usize {
        self.vocab_size - NUM_RESERVED
    }

    /// Serializes every field that differs from `None`, one per line;
    /// `from_text(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let mut lines: Vec<(&str, Option<String>)> = vec![
            ("task", Some(self.task.to_string())),
            ("vocab_size", Some(self.vocab_size.to_string())),
            ("len_min", Some(self.len_min.to_string())),
            ("len_max", Some(self.len_max.to_string())),
            ("n_train", Some(self.n_train.to_string())),
            ("n_eval", Some(self.n_eval.to_string())),
            ("train_data", path(&self.train_data)),
            ("eval_data", path(&self.eval_data)),
            ("d", Some(self.d.to_string())),
            ("init_gain", Some(self.init_gain.to_string())),
            ("algorithm", Some(self.algorithm.to_string())),
            ("pretrain_steps", Some(self.pretrain_steps.to_string())),
            ("rl_steps", Some(self.rl_steps.to_string())),
            ("batch_size", Some(self.batch_size.to_string())),
            ("lr", Some(self.lr.to_string())),
            ("lr_decay", Some(self.lr_decay.map_or("none".into(), |v| v.to_string()))),
            ("weight_decay", Some(self.weight_decay.to_string())),
            ("clip", Some(self.clip.map_or("none".into(), |v| v.to_string()))),
            ("metric", Some(self.metric.to_string())),
            ("eval_every", Some(self.eval_every.to_string())),
            ("eval_decode", Some(self.eval_decode.to_string())),
            ("seed", Some(self.seed.to_string())),
            ("out_dir", path(&self.out_dir)),
            ("log_wall_clock", Some(self.log_wall_clock.to_string())),
            ("init_checkpoint", path(&self.init_checkpoint)),
        ];
        lines.extend(self.optional_fields());
        lines
            .into_iter()
            .filter_map(|(k, v)| v.map(|v| format!("{k} = {v}\n")))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let c = ExperimentConfig::from_text(
            "# experiment\nalgorithm = reinforce  # phase 2\nrl_steps=10\nbaseline = const:0.5\n\nlr = 0.1\n",
        )
        .unwrap();
        assert_eq!(c.algorithm, Algorithm::Reinforce);
        assert_eq!(c.rl_steps, 10);
        assert_eq!(c.baseline, Some(BaselineSetting::Constant(0.5)));
        assert_eq!(c.lr, 0.1);
        c.validate().unwrap();
    }

    #[test]
    fn parse_errors_name_the_field_or_line() {
        let e = ExperimentConfig::from_text("lr = fast\n").unwrap_err();
        assert!(matches!(e, Error::Config { ref field, .. } if field == "lr"));
        let e = ExperimentConfig::from_text("bogus = 1\n").unwrap_err();
        assert!(matches!(e, Error::Config { ref field, .. } if field == "bogus"));
        let e = ExperimentConfig::from_text("seed = 1\nnot an assignment\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }));
        let e = ExperimentConfig::from_text("seed = 1\nseed = 2\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn text_round_trip() {
        let mut c = ExperimentConfig::for_algorithm(Algorithm::Pgac);
        c.rl_steps = 7;
        c.hidden = Some(5);
        c.replay = Some(ReplayMode::Prioritized {
            direction: PriorityDirection::HighFirst,
            alpha: 0.6,
        });
        c.sync = Some(SyncMode::Polyak);
        c.eps_q = Some(Schedule::linear(1.0, 0.0, 100).unwrap());
        c.lr_decay = Some(5e4);
        c.clip = None;
        c.out_dir = Some(PathBuf::from("runs/a"));
        assert_eq!(ExperimentConfig::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn validation_matrix() {
        let field_examples: [(&str, &str); 21] = [
            ("epsilon", "linear:1:0:100"),
            ("top_k", "3"),
            ("rl_lr", "0.1"),
            ("max_len", "8"),
            ("gamma", "0.9"),
            ("baseline", "none"),
            ("eta", "linear:0:1:100"),
            ("mixer", "mixer:1:1:10"),
            ("lambda", "0.95"),
            ("hidden", "8"),
            ("critic_lr", "0.01"),
            ("critic_batch", "8"),
            ("capacity", "100"),
            ("q_lr", "0.01"),
            ("q_batch", "8"),
            ("q_target", "sarsa"),
            ("replay", "uniform"),
            ("sync", "hard:10"),
            ("eps_q", "const:0.5"),
            ("shrink", "0.1"),
            ("dueling_agg", "max"),
        ];
        for alg in Algorithm::ALL {
            let mut base = ExperimentConfig::for_algorithm(alg);
            for (f, v) in field_examples {
                if required(f, alg) {
                    base.set(f, v).unwrap();
                }
            }
            base.validate().unwrap_or_else(|e| panic!("{alg}: {e}"));
            for (f, v) in field_examples {
                let mut c = base.clone();
                c.set(f, v).unwrap();
                let r = c.validate();
                if applies(f, alg) {
                    r.unwrap_or_else(|e| panic!("{alg}/{f}: {e}"));
                } else {
                    assert!(
                        matches!(r, Err(Error::Config { ref field, .. }) if field == f),
                        "{alg}/{f}"
                    );
                }
                if required(f, alg) {
                    let mut c = base.clone();
                    c.set(f, "1").ok();
                    let mut missing = base.clone();
                    match f {
                        "top_k" => missing.top_k = None,
                        "eta" => missing.eta = None,
                        "mixer" => missing.mixer = None,
                        "lambda" => missing.lambda = None,
                        _ => unreachable!(),
                    }
                    assert!(matches!(missing.validate(), Err(Error::Config { ref field, .. }) if field == f));
                }
            }
        }
        let c = ExperimentConfig {
            rl_steps: 5,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::for_algorithm(Algorithm::Mixer);
        c.mixer = Some(Schedule::constant(1.0));
        assert!(c.validate().is_err());
    }
}
