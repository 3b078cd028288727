use super::run::TrainConfig;
use super::schedule::Schedule;
use crate::arch::ModelConfig;
use crate::error::{Error, Result};

pub const PRESETS: [&str; 3] = ["baseline100", "finetune300", "smoke"];

/// Named training recipe together with the model shape it expects.
#[derive(Clone, Debug, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub train: TrainConfig,
    pub model: ModelConfig,
}

const ONE_CYCLE: Schedule = Schedule::OneCycle { max_lr: 0.05, pct_start: 0.3, div_factor: 500.0, final_div_factor: 500.0 };

impl Preset {
    pub fn named(name: &str) -> Result<Preset> {
        let base = TrainConfig {
            epochs: 100,
            batch_size: 32,
            seed: 0,
            momentum: 0.9,
            schedule: Schedule::Constant { lr: 0.001 },
            swa: false,
            swa_start: 0.75,
            threshold: 0.5,
        };
        let preset = match name {
            "baseline100" => Preset { name: "baseline100", train: base, model: ModelConfig::default() },
            "finetune300" => Preset {
                name: "finetune300",
                train: TrainConfig { epochs: 300, schedule: ONE_CYCLE, swa: true, ..base },
                model: ModelConfig::default(),
            },
            "smoke" => Preset {
                name: "smoke",
                train: TrainConfig { epochs: 30, batch_size: 16, schedule: ONE_CYCLE, swa: true, ..base },
                model: ModelConfig { input_size: [64, 64], ..ModelConfig::default() },
            },
            other => {
                return Err(Error::InvalidArgument(format!("unknown preset {other:?} ({})", PRESETS.join(", "))));
            }
        };
        Ok(preset)
    }
}
