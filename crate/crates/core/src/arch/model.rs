use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ChannelShare, ModelConfig, STAGES};
use super::layers::{self, BnMode, CHANNEL_CONV_TAPS, SPATIAL_KERNEL};
use crate::autograd::{BatchStats, Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bindings, ParamStore};
use crate::ssm::{ScanMode, SsmParams};
use crate::tensor::Tensor;

/// Momentum of the batch-norm running averages.
pub const BN_MOMENTUM: f64 = 0.1;

/// Whether batch norm uses batch or running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Tape handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `[N]` probabilities of the positive class.
    pub probs: Var,
    /// `[N]` pre-sigmoid scores.
    pub logits: Var,
    /// Outputs of stages 1–6.
    pub stages: Vec<Var>,
    /// Attention-bridge outputs for stages 1–5.
    pub bridged: Vec<Var>,
    /// `[N, feature_width]` pooled features.
    pub features: Var,
    /// Batch statistics of the conv stages (training mode only).
    pub bn_stats: Vec<BatchStats>,
}

/// Classifier weights plus non-trainable batch-norm buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub buffers: ParamStore,
    pub scan_mode: ScanMode,
}

fn uniform(shape: Vec<usize>, fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::rand_uniform(shape, -bound, bound, rng)
}

/// Per-module parameter totals.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamBreakdown {
    pub rows: Vec<(String, usize)>,
    pub total: usize,
}

impl Model {
    /// Randomly initialized model; identical seeds give identical weights.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut buffers = ParamStore::new();
        let ch = config.channels;

        let mut cin = config.input_channels;
        for (i, &c) in ch[..3].iter().enumerate() {
            let s = format!("stage{}", i + 1);
            params.insert(format!("{s}.conv.weight"), uniform(vec![c, cin, 3, 3], cin * 9, &mut rng))?;
            params.insert(format!("{s}.conv.bias"), uniform(vec![c], cin * 9, &mut rng))?;
            params.insert(format!("{s}.bn.weight"), Tensor::ones(vec![c]))?;
            params.insert(format!("{s}.bn.bias"), Tensor::zeros(vec![c]))?;
            buffers.insert(format!("{s}.bn.running_mean"), Tensor::zeros(vec![c]))?;
            buffers.insert(format!("{s}.bn.running_var"), Tensor::ones(vec![c]))?;
            cin = c;
        }
        for stage in 4..=STAGES {
            let c = ch[stage - 1];
            let s = format!("stage{stage}");
            params.insert(format!("{s}.lift.weight"), uniform(vec![c, cin, 1, 1], cin, &mut rng))?;
            params.insert(format!("{s}.lift.bias"), uniform(vec![c], cin, &mut rng))?;
            params.insert(format!("{s}.norm_in.weight"), Tensor::ones(vec![c]))?;
            params.insert(format!("{s}.norm_in.bias"), Tensor::zeros(vec![c]))?;
            let ssm = config.ssm_config(stage)?;
            for b in 0..config.branches_per_pvm {
                let bp = format!("{s}.branch{b}");
                params.extend(SsmParams::init(ssm, &mut rng).named(&bp))?;
                if config.bidirectional {
                    params.extend(SsmParams::init(ssm, &mut rng).named(&format!("{bp}.reverse")))?;
                }
                params.insert(format!("{bp}.skip_scale"), Tensor::ones(vec![1]))?;
            }
            params.insert(format!("{s}.norm_out.weight"), Tensor::ones(vec![c]))?;
            params.insert(format!("{s}.norm_out.bias"), Tensor::zeros(vec![c]))?;
            params.insert(format!("{s}.proj.weight"), uniform(vec![c, c], c, &mut rng))?;
            params.insert(format!("{s}.proj.bias"), uniform(vec![c], c, &mut rng))?;
            cin = c;
        }

        let k = SPATIAL_KERNEL;
        params.insert("scab.spatial.conv.weight", uniform(vec![1, 2, k, k], 2 * k * k, &mut rng))?;
        params.insert("scab.spatial.conv.bias", uniform(vec![1], 2 * k * k, &mut rng))?;
        let bridge: Vec<usize> = config.scab_channels();
        let total: usize = bridge.iter().sum();
        match config.scab_shared {
            ChannelShare::Conv1d => {
                params.insert(
                    "scab.channel.shared.weight",
                    uniform(vec![1, 1, 1, CHANNEL_CONV_TAPS], CHANNEL_CONV_TAPS, &mut rng),
                )?;
            }
            ChannelShare::Linear => {
                params.insert("scab.channel.shared.weight", uniform(vec![total, total], total, &mut rng))?;
                params.insert("scab.channel.shared.bias", uniform(vec![total], total, &mut rng))?;
            }
        }
        for (i, &c) in bridge.iter().enumerate() {
            params.insert(format!("scab.channel.att{}.weight", i + 1), uniform(vec![c, total], total, &mut rng))?;
            params.insert(format!("scab.channel.att{}.bias", i + 1), uniform(vec![c], total, &mut rng))?;
        }

        let f = config.feature_width();
        if config.head_hidden == 0 {
            params.insert("head.fc.weight", uniform(vec![1, f], f, &mut rng))?;
            params.insert("head.fc.bias", uniform(vec![1], f, &mut rng))?;
        } else {
            let h = config.head_hidden;
            params.insert("head.fc1.weight", uniform(vec![h, f], f, &mut rng))?;
            params.insert("head.fc1.bias", uniform(vec![h], f, &mut rng))?;
            params.insert("head.fc2.weight", uniform(vec![1, h], h, &mut rng))?;
            params.insert("head.fc2.bias", uniform(vec![1], h, &mut rng))?;
        }
        Ok(Model { config, params, buffers, scan_mode: ScanMode::default() })
    }

    /// Sets every head tensor to zero, making every probability exactly 0.5.
    pub fn zero_head(&mut self) {
        for (name, t) in self.params.iter_mut() {
            if name.starts_with("head.") {
                t.data_mut().fill(0.0);
            }
        }
    }

    /// Runs the network on `input: [N, C, H, W]` using parameters bound on `tape`.
    pub fn forward(&self, tape: &mut Tape, bound: &Bindings, input: Var, mode: Mode) -> Result<ForwardOutput> {
        let cfg = &self.config;
        let want = [cfg.input_channels, cfg.input_size[0], cfg.input_size[1]];
        let shape = tape.shape(input);
        if shape.len() != 4 || shape[1..] != want {
            return Err(Error::shape("model_forward", format!("input {shape:?}, expected [N, {want:?}]")));
        }
        let mut x = input;
        let mut stages = Vec::with_capacity(STAGES);
        let mut bn_stats = Vec::new();
        for stage in 1..=3 {
            let s = format!("stage{stage}");
            let bn = match mode {
                Mode::Train => BnMode::Train,
                Mode::Eval => BnMode::Eval {
                    mean: self.buffer(&format!("{s}.bn.running_mean"))?,
                    var: self.buffer(&format!("{s}.bn.running_var"))?,
                },
            };
            let (y, stats) = layers::conv_block(tape, x, &bound.scope(s), bn)?;
            bn_stats.extend(stats);
            stages.push(y);
            x = y;
        }
        for stage in 4..=STAGES {
            let ssm = cfg.ssm_config(stage)?;
            let p = bound.scope(format!("stage{stage}"));
            x = layers::pvm_layer(tape, x, &p, &ssm, cfg.branches_per_pvm, cfg.bidirectional, self.scan_mode)?;
            stages.push(x);
        }
        let bridged = layers::scab(tape, &stages[..5], &bound.scope("scab"), cfg)?;
        let mut pooled = Vec::with_capacity(STAGES);
        for &f in bridged.iter().chain(std::iter::once(&stages[5])) {
            pooled.push(tape.global_avg_pool(f)?);
        }
        let features = tape.concat(&pooled, 1)?;
        let logits = layers::head(tape, features, &bound.scope("head"), cfg.head_hidden)?;
        let probs = tape.sigmoid(logits)?;
        Ok(ForwardOutput { probs, logits, stages, bridged, features, bn_stats })
    }

    /// Inference-mode probabilities for a batch.
    pub fn predict(&self, batch: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::inference();
        let bound = self.params.bind(&mut tape, false);
        let x = tape.constant(batch.clone());
        let out = self.forward(&mut tape, &bound, x, Mode::Eval)?;
        Ok(tape.value(out.probs).data().to_vec())
    }

    fn buffer(&self, name: &str) -> Result<&[f64]> {
        self.buffers
            .get(name)
            .map(Tensor::data)
            .ok_or_else(|| Error::InvalidArgument(format!("missing buffer {name}")))
    }

    /// Exponential-moving-average update of the running statistics from one
    /// training batch (variance stored unbiased).
    pub fn update_running_stats(&mut self, stats: &[BatchStats]) -> Result<()> {
        for (i, s) in stats.iter().enumerate() {
            let prefix = format!("stage{}.bn", i + 1);
            let unbias = if s.count > 1 { s.count as f64 / (s.count - 1) as f64 } else { 1.0 };
            let mean = self.buffers.get_mut(&format!("{prefix}.running_mean")).ok_or_else(|| Error::InvalidArgument(prefix.clone()))?;
            for (r, m) in mean.data_mut().iter_mut().zip(&s.mean) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
            }
            let var = self.buffers.get_mut(&format!("{prefix}.running_var")).ok_or_else(|| Error::InvalidArgument(prefix.clone()))?;
            for (r, v) in var.data_mut().iter_mut().zip(&s.var) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v * unbias;
            }
        }
        Ok(())
    }

    /// Replaces the running statistics with the given per-stage values.
    pub fn set_running_stats(&mut self, means: &[Vec<f64>], vars: &[Vec<f64>]) -> Result<()> {
        for (i, (m, v)) in means.iter().zip(vars).enumerate() {
            let prefix = format!("stage{}.bn", i + 1);
            for (suffix, src) in [("running_mean", m), ("running_var", v)] {
                let t = self
                    .buffers
                    .get_mut(&format!("{prefix}.{suffix}"))
                    .ok_or_else(|| Error::InvalidArgument(format!("missing buffer {prefix}.{suffix}")))?;
                if t.numel() != src.len() {
                    return Err(Error::shape("set_running_stats", format!("{prefix}.{suffix}")));
                }
                t.data_mut().copy_from_slice(src);
            }
        }
        Ok(())
    }

    /// Trainable parameter count, grouped by top-level module.
    pub fn count_parameters(&self) -> ParamBreakdown {
        count_parameters(&self.params)
    }
}

/// Groups a store's sizes by the first dotted name component.
pub fn count_parameters(store: &ParamStore) -> ParamBreakdown {
    let mut rows: Vec<(String, usize)> = Vec::new();
    for (name, t) in store.iter() {
        let module = name.split('.').next().unwrap_or(name);
        match rows.last_mut() {
            Some((m, n)) if m == module => *n += t.numel(),
            _ => rows.push((module.to_string(), t.numel())),
        }
    }
    let total = rows.iter().map(|(_, n)| n).sum();
    ParamBreakdown { rows, total }
}
