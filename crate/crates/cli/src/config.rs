//! `key=value` run configuration. One pair per line, `#` starts a comment.

use std::fmt::Write as _;
use std::path::PathBuf;

use ulmv_core::arch::{ChannelShare, ModelConfig};
use ulmv_core::train::{Preset, Schedule, TrainConfig};
use ulmv_core::{Error, Result};

/// Name of the resolved-config echo written next to the run outputs.
pub const RUN_CONFIG_FILE: &str = "run_config.txt";

pub const KEYS: [&str; 26] = [
    "preset",
    "data",
    "out",
    "seed",
    "epochs",
    "batch_size",
    "momentum",
    "schedule",
    "lr",
    "max_lr",
    "pct_start",
    "div_factor",
    "final_div_factor",
    "swa",
    "swa_start",
    "threshold",
    "channels",
    "input_size",
    "branches",
    "d_state",
    "expand",
    "conv_k",
    "dt_rank",
    "head_hidden",
    "bidirectional",
    "scab_shared",
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScheduleKind {
    Constant,
    OneCycle,
}

/// Fully resolved settings of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub preset: String,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub model: ModelConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub momentum: f64,
    pub schedule: ScheduleKind,
    pub lr: f64,
    pub max_lr: f64,
    pub pct_start: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
    pub swa: bool,
    pub swa_start: f64,
    pub threshold: f64,
}

fn bad(key: &str, value: &str, why: &str) -> Error {
    Error::InvalidArgument(format!("config key {key}: cannot use {value:?} ({why})"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value, "not a number"))
}

fn list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| num(key, v.trim())).collect()
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(bad(key, value, "expected true or false")),
    }
}

/// Splits config text into `(key, value)` pairs, rejecting malformed lines.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or_default().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("config line {}: expected key=value, got {line:?}", i + 1)))?;
        let k = k.trim();
        if !KEYS.contains(&k) {
            return Err(Error::InvalidArgument(format!("config line {}: unknown key {k:?}", i + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    pub fn from_preset(name: &str) -> Result<Self> {
        let p = Preset::named(name)?;
        let t = p.train;
        let (schedule, lr) = match t.schedule {
            Schedule::Constant { lr } => (ScheduleKind::Constant, lr),
            Schedule::OneCycle { .. } => (ScheduleKind::OneCycle, 0.001),
        };
        let (max_lr, pct_start, div_factor, final_div_factor) = match t.schedule {
            Schedule::OneCycle { max_lr, pct_start, div_factor, final_div_factor } => (max_lr, pct_start, div_factor, final_div_factor),
            Schedule::Constant { .. } => (0.05, 0.3, 500.0, 500.0),
        };
        Ok(RunConfig {
            preset: p.name.to_string(),
            data: None,
            out: None,
            model: p.model,
            epochs: t.epochs,
            batch_size: t.batch_size,
            seed: t.seed,
            momentum: t.momentum,
            schedule,
            lr,
            max_lr,
            pct_start,
            div_factor,
            final_div_factor,
            swa: t.swa,
            swa_start: t.swa_start,
            threshold: t.threshold,
        })
    }

    /// Starts from `preset` (or the file's own `preset=` line, or
    /// `baseline100`) and applies every other pair in order.
    pub fn resolve(preset: Option<&str>, text: Option<&str>) -> Result<Self> {
        let pairs = match text {
            Some(t) => parse_pairs(t)?,
            None => Vec::new(),
        };
        let from_file = pairs.iter().rev().find(|(k, _)| k == "preset").map(|(_, v)| v.as_str());
        let mut cfg = RunConfig::from_preset(preset.or(from_file).unwrap_or("baseline100"))?;
        for (k, v) in &pairs {
            if k != "preset" {
                cfg.set(k, v)?;
            }
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        match key {
            "preset" => *self = RunConfig::from_preset(value)?,
            "data" => self.data = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            "seed" => self.seed = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "momentum" => self.momentum = num(key, value)?,
            "schedule" => {
                self.schedule = match value {
                    "constant" => ScheduleKind::Constant,
                    "onecycle" => ScheduleKind::OneCycle,
                    _ => return Err(bad(key, value, "expected constant or onecycle")),
                }
            }
            "lr" => self.lr = num(key, value)?,
            "max_lr" => self.max_lr = num(key, value)?,
            "pct_start" => self.pct_start = num(key, value)?,
            "div_factor" => self.div_factor = num(key, value)?,
            "final_div_factor" => self.final_div_factor = num(key, value)?,
            "swa" => self.swa = flag(key, value)?,
            "swa_start" => self.swa_start = num(key, value)?,
            "threshold" => self.threshold = num(key, value)?,
            "channels" => {
                m.channels = list(key, value)?.try_into().map_err(|_| bad(key, value, "expected 6 widths"))?;
            }
            "input_size" => {
                m.input_size = match list(key, value)?.as_slice() {
                    &[s] => [s, s],
                    &[h, w] => [h, w],
                    _ => return Err(bad(key, value, "expected SIZE or H,W")),
                }
            }
            "branches" => m.branches_per_pvm = num(key, value)?,
            "d_state" => m.d_state = num(key, value)?,
            "expand" => m.expand = num(key, value)?,
            "conv_k" => m.conv_k = num(key, value)?,
            "dt_rank" => m.dt_rank = if value == "auto" { None } else { Some(num(key, value)?) },
            "head_hidden" => m.head_hidden = num(key, value)?,
            "bidirectional" => m.bidirectional = flag(key, value)?,
            "scab_shared" => {
                m.scab_shared = match value {
                    "conv1d" => ChannelShare::Conv1d,
                    "linear" => ChannelShare::Linear,
                    _ => return Err(bad(key, value, "expected conv1d or linear")),
                }
            }
            _ => return Err(Error::InvalidArgument(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let schedule = match self.schedule {
            ScheduleKind::Constant => Schedule::Constant { lr: self.lr },
            ScheduleKind::OneCycle => Schedule::OneCycle {
                max_lr: self.max_lr,
                pct_start: self.pct_start,
                div_factor: self.div_factor,
                final_div_factor: self.final_div_factor,
            },
        };
        let t = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            momentum: self.momentum,
            schedule,
            swa: self.swa,
            swa_start: self.swa_start,
            threshold: self.threshold,
        };
        t.validate()?;
        Ok(t)
    }

    /// Every key with its resolved value, in [`KEYS`] order.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let values = [
            self.preset.clone(),
            path(&self.data),
            path(&self.out),
            self.seed.to_string(),
            self.epochs.to_string(),
            self.batch_size.to_string(),
            self.momentum.to_string(),
            match self.schedule {
                ScheduleKind::Constant => "constant".into(),
                ScheduleKind::OneCycle => "onecycle".into(),
            },
            self.lr.to_string(),
            self.max_lr.to_string(),
            self.pct_start.to_string(),
            self.div_factor.to_string(),
            self.final_div_factor.to_string(),
            self.swa.to_string(),
            self.swa_start.to_string(),
            self.threshold.to_string(),
            join(&m.channels),
            join(&m.input_size),
            m.branches_per_pvm.to_string(),
            m.d_state.to_string(),
            m.expand.to_string(),
            m.conv_k.to_string(),
            m.dt_rank.map_or("auto".into(), |r| r.to_string()),
            m.head_hidden.to_string(),
            m.bidirectional.to_string(),
            match m.scab_shared {
                ChannelShare::Conv1d => "conv1d".into(),
                ChannelShare::Linear => "linear".into(),
            },
        ];
        let mut s = String::new();
        for (k, v) in KEYS.iter().zip(values) {
            if (k == &"data" || k == &"out") && v.is_empty() {
                continue;
            }
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }
}
