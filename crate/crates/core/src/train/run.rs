use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc::sync_channel;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{sgd_momentum_step, SgdState};
use super::schedule::Schedule;
use super::swa::SwaState;
use super::bce;
use crate::arch::{checkpoint, Mode, Model};
use crate::autograd::Tape;
use crate::data::{load_batch, InputSpec, Sample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const HISTORY_FILE: &str = "history.jsonl";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const SWA_CHECKPOINT: &str = "swa.ckpt";
/// Batches the loader thread may prepare ahead of the optimizer.
pub const PREFETCH: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub momentum: f64,
    pub schedule: Schedule,
    pub swa: bool,
    /// Fraction of the run after which SWA absorbs one snapshot per epoch.
    pub swa_start: f64,
    pub threshold: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.swa_start) {
            return Err(Error::InvalidArgument(format!("swa_start {} outside [0, 1)", self.swa_start)));
        }
        Ok(())
    }

    /// First 0-based epoch whose weights SWA absorbs.
    pub fn swa_start_epoch(&self) -> usize {
        (self.swa_start * self.epochs as f64).floor() as usize
    }
}

/// One line of the history file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// `None` when there is no validation split.
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
    /// Rate used for the first step of the epoch.
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    /// 1-based epoch with the lowest validation (or, without one, training) loss.
    pub best_epoch: usize,
    pub best: Model,
    pub swa: Option<Model>,
}

/// Training and validation inputs.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub spec: InputSpec,
}

fn with_batch(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::NonFinite { op, detail } => Error::NonFinite {
            op,
            detail: Some(match detail {
                Some(d) => format!("epoch {epoch}, batch {batch}: {d}"),
                None => format!("epoch {epoch}, batch {batch}"),
            }),
        },
        e => e,
    }
}

/// Mean BCE loss and accuracy of `model` in inference mode.
pub fn evaluate_loss(model: &Model, samples: &[Sample], spec: &InputSpec, batch_size: usize, threshold: f64) -> Result<(f64, f64)> {
    let (mut loss, mut correct) = (0.0, 0usize);
    for chunk in samples.chunks(batch_size) {
        let (x, y) = load_batch(chunk, spec)?;
        let p = model.predict(&x)?;
        loss += bce(&p, &y)? * chunk.len() as f64;
        correct += p.iter().zip(&y).filter(|(p, y)| ((**p >= threshold) as u8 as f64) == **y).count();
    }
    let n = samples.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Runs `f` on each batch of `order` while a helper thread decodes the next
/// ones. Batches arrive in order.
fn for_each_batch(
    samples: &[Sample],
    order: &[usize],
    batch_size: usize,
    spec: &InputSpec,
    mut f: impl FnMut(usize, Tensor, Vec<f64>) -> Result<()>,
) -> Result<()> {
    std::thread::scope(|s| {
        let (tx, rx) = sync_channel(PREFETCH);
        s.spawn(move || {
            for chunk in order.chunks(batch_size) {
                let batch: Vec<Sample> = chunk.iter().map(|&i| samples[i].clone()).collect();
                if tx.send(load_batch(&batch, spec)).is_err() {
                    break;
                }
            }
        });
        for (b, item) in rx.into_iter().enumerate() {
            let (x, y) = item?;
            f(b, x, y)?;
        }
        Ok(())
    })
}

/// Trains `model` in place.
///
/// When `out_dir` is given the history is appended there after every epoch
/// and the best, last and (if enabled) SWA checkpoints are written.
pub fn train_loop(model: &mut Model, data: &TrainData, cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let steps_per_epoch = data.train.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * steps_per_epoch;
    cfg.schedule.lr(0, total_steps)?;

    let mut history_file = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let p = dir.join(HISTORY_FILE);
            Some((BufWriter::new(File::create(&p).map_err(|e| Error::io(&p, e))?), p))
        }
        None => None,
    };
    let ckpt = |name: &str| -> Option<PathBuf> { out_dir.map(|d| d.join(name)) };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut opt = SgdState::new(&model.params, cfg.momentum, 0.0)?;
    let mut swa = cfg.swa.then(|| SwaState::new(cfg.swa_start_epoch()));
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Model)> = None;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let epoch_lr = cfg.schedule.lr(epoch * steps_per_epoch, total_steps)?;
        let mut loss_sum = 0.0;
        for_each_batch(&data.train, &order, cfg.batch_size, &data.spec, |b, x, y| {
            let step = epoch * steps_per_epoch + b;
            opt.lr = cfg.schedule.lr(step, total_steps)?;
            let n = y.len();
            let run = |model: &mut Model, opt: &mut SgdState| -> Result<f64> {
                let mut tape = Tape::new();
                let bound = model.params.bind(&mut tape, true);
                let input = tape.constant(x);
                let out = model.forward(&mut tape, &bound, input, Mode::Train)?;
                let loss = tape.bce_loss(out.probs, &y)?;
                let value = tape.value(loss).item()?;
                tape.backward(loss)?;
                let grads = bound.grads(&model.params, &tape)?;
                sgd_momentum_step(&mut model.params, &grads, opt)?;
                model.update_running_stats(&out.bn_stats)?;
                Ok(value)
            };
            let value = run(model, &mut opt).map_err(|e| with_batch(e, epoch + 1, b))?;
            loss_sum += value * n as f64;
            Ok(())
        })?;
        let train_loss = loss_sum / data.train.len() as f64;

        let (val_loss, val_acc) = if data.val.is_empty() {
            (None, None)
        } else {
            let (l, a) = evaluate_loss(model, &data.val, &data.spec, cfg.batch_size, cfg.threshold)?;
            (Some(l), Some(a))
        };
        let record = EpochRecord { epoch: epoch + 1, train_loss, val_loss, val_acc, lr: epoch_lr };
        if let Some((w, path)) = history_file.as_mut() {
            let line = serde_json::to_string(&record)?;
            writeln!(w, "{line}").and_then(|_| w.flush()).map_err(|e| Error::io(path.as_path(), e))?;
        }
        history.push(record);

        let score = val_loss.unwrap_or(train_loss);
        if best.as_ref().is_none_or(|(s, _, _)| score < *s) {
            if let Some(p) = ckpt(BEST_CHECKPOINT) {
                checkpoint::save(model, &p)?;
            }
            best = Some((score, epoch + 1, model.clone()));
        }
        if let Some(s) = swa.as_mut() {
            if epoch >= s.start_epoch {
                s.update(&model.params)?;
            }
        }
    }
    if let Some(p) = ckpt(LAST_CHECKPOINT) {
        checkpoint::save(model, &p)?;
    }
    let swa_model = match swa {
        Some(s) => {
            let batches = data
                .train
                .chunks(cfg.batch_size)
                .map(|c| load_batch(c, &data.spec).map(|(x, _)| x));
            let m = s.finalize(model, batches)?;
            if let Some(p) = ckpt(SWA_CHECKPOINT) {
                checkpoint::save(&m, &p)?;
            }
            Some(m)
        }
        None => None,
    };
    let (_, best_epoch, best) = best.expect("at least one epoch ran");
    Ok(TrainOutcome { history, best_epoch, best, swa: swa_model })
}
