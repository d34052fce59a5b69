//! Step-indexed scalar schedules (sampling probability, loss mixing weight,
//! MIXER boundary, Polyak coefficient).

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScheduleKind {
    Constant(f64),
    Linear {
        start: f64,
        end: f64,
        total_steps: u64,
    },
    /// Emits the MIXER `δ` for a step (not capped by the sequence length).
    Mixer {
        n_ce: u64,
        delta_step: u64,
        steps_per_phase: u64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub lo: f64,
    pub hi: f64,
}

impl Schedule {
    pub fn constant(v: f64) -> Self {
        Schedule {
            kind: ScheduleKind::Constant(v),
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        }
    }

    /// Linear ramp clamped to `[min(start, end), max(start, end)]`.
    pub fn linear(start: f64, end: f64, total_steps: u64) -> Result<Self> {
        if total_steps == 0 {
            return Err(Error::InvalidArgument("linear schedule needs total_steps > 0".into()));
        }
        Ok(Schedule {
            kind: ScheduleKind::Linear {
                start,
                end,
                total_steps,
            },
            lo: start.min(end),
            hi: start.max(end),
        })
    }

    pub fn mixer(n_ce: u64, delta_step: u64, steps_per_phase: u64) -> Result<Self> {
        if steps_per_phase == 0 {
            return Err(Error::InvalidArgument(
                "mixer schedule needs steps_per_phase > 0".into(),
            ));
        }
        Ok(Schedule {
            kind: ScheduleKind::Mixer {
                n_ce,
                delta_step,
                steps_per_phase,
            },
            lo: 0.0,
            hi: f64::INFINITY,
        })
    }

    pub fn with_bounds(mut self, lo: f64, hi: f64) -> Self {
        self.lo = lo;
        self.hi = hi;
        self
    }

    pub fn value_at(&self, step: u64) -> Result<f64> {
        let v = match self.kind {
            ScheduleKind::Constant(v) => v,
            ScheduleKind::Linear {
                start,
                end,
                total_steps,
            } => {
                if total_steps == 0 {
                    return Err(Error::InvalidArgument("linear schedule needs total_steps > 0".into()));
                }
                let frac = (step as f64 / total_steps as f64).min(1.0);
                start + (end - start) * frac
            }
            ScheduleKind::Mixer {
                n_ce,
                delta_step,
                steps_per_phase,
            } => {
                if steps_per_phase == 0 {
                    return Err(Error::InvalidArgument(
                        "mixer schedule needs steps_per_phase > 0".into(),
                    ));
                }
                mixer_delta(step, n_ce, delta_step, steps_per_phase) as f64
            }
        };
        Ok(v.clamp(self.lo, self.hi))
    }
}

fn mixer_delta(step: u64, n_ce: u64, delta_step: u64, steps_per_phase: u64) -> u64 {
    let phase = step / steps_per_phase;
    if phase < n_ce {
        0
    } else {
        (phase - n_ce + 1).saturating_mul(delta_step)
    }
}

/// Index splitting CE steps from REINFORCE steps: `T − δ`, where `δ` is zero
/// for the first `n_ce` phases and grows by `delta_step` per phase after.
pub fn mixer_boundary(step: u64, t_len: usize, n_ce: u64, delta_step: u64, steps_per_phase: u64) -> usize {
    let delta = mixer_delta(step, n_ce, delta_step, steps_per_phase.max(1));
    t_len - (delta.min(t_len as u64) as usize)
}

/// `τ = (1000 − step mod 1000) / 1000`.
pub fn polyak_tau(step: u64) -> f64 {
    (1000 - step % 1000) as f64 / 1000.0
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ScheduleKind::Constant(v) => write!(f, "const:{v}"),
            ScheduleKind::Linear {
                start,
                end,
                total_steps,
            } => write!(f, "linear:{start}:{end}:{total_steps}"),
            ScheduleKind::Mixer {
                n_ce,
                delta_step,
                steps_per_phase,
            } => write!(f, "mixer:{n_ce}:{delta_step}:{steps_per_phase}"),
        }
    }
}

/// Parses `const:v`, `linear:start:end:total` or `mixer:n_ce:delta:phase`.
impl FromStr for Schedule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let bad = || Error::InvalidArgument(format!("cannot parse schedule {s:?}"));
        let f = |x: &str| x.parse::<f64>().map_err(|_| bad());
        let u = |x: &str| x.parse::<u64>().map_err(|_| bad());
        match parts.as_slice() {
            ["const", v] => Ok(Schedule::constant(f(v)?)),
            ["linear", a, b, n] => Schedule::linear(f(a)?, f(b)?, u(n)?),
            ["mixer", a, b, c] => Schedule::mixer(u(a)?, u(b)?, u(c)?),
            _ => Err(bad()),
        }
    }
}
