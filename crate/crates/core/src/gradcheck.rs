//! Central finite-difference audit of the tape's backward rules.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::arch::{Mode, Model, ModelConfig};
use crate::autograd::{Backward, Tape, Var};
use crate::error::Result;
use crate::params::{Bindings, ParamStore};
use crate::ssm::{mamba_block, ScanMode, SsmConfig, SsmParams};
use crate::tensor::Tensor;

pub const OP_TOLERANCE: f64 = 1e-5;
pub const MODEL_TOLERANCE: f64 = 1e-4;
pub const STEP: f64 = 1e-5;
/// Smaller step for the full model, whose ReLU and max-pool kinks are dense.
pub const MODEL_STEP: f64 = 1e-6;
/// Entries whose one-sided slopes differ by more than `KINK_FLOOR` and by more
/// than `KINK_RATIO` of their magnitude straddle a kink and are skipped
/// (counted in `skipped`).
pub const KINK_RATIO: f64 = 1e-2;
pub const KINK_FLOOR: f64 = 1e-6;
/// Input extent of the reduced model in the end-to-end check.
pub const MODEL_INPUT: usize = 64;
/// Entries sampled per parameter tensor in the end-to-end check.
pub const MODEL_SAMPLES: usize = 2;

/// Outcome for one registered check.
#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub entries: usize,
    pub skipped: usize,
    pub max_abs_error: f64,
    /// `max |analytic − numeric|` over `max(|analytic|, |numeric|)`, both maxima
    /// taken over every checked entry.
    pub rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Projects a tensor onto fixed weights so any output can seed `backward`.
struct Probe {
    weights: Vec<f64>,
}

impl Backward for Probe {
    fn op(&self) -> &'static str {
        "probe"
    }

    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![Some(self.weights.iter().map(|w| w * g[0]).collect())]
    }
}

fn probe(tape: &mut Tape, v: Var, weights: &[f64]) -> Result<Var> {
    let s: f64 = tape.value(v).data().iter().zip(weights).map(|(a, b)| a * b).sum();
    tape.push(Tensor::scalar(s), &[v], Probe { weights: weights.to_vec() })
}

type Build = Box<dyn Fn(&mut Tape, &Bindings) -> Result<Var>>;

struct OpCase {
    name: &'static str,
    inputs: ParamStore,
    build: Build,
}

/// Compares analytic gradients of `build` against central differences.
///
/// `build` returns a tensor of any shape; it is reduced with fixed random
/// weights. `sample` limits how many entries of each input are perturbed and
/// enables the kink guard.
#[allow(clippy::too_many_arguments)]
fn check(
    name: &str,
    inputs: &ParamStore,
    build: &dyn Fn(&mut Tape, &Bindings) -> Result<Var>,
    tolerance: f64,
    step: f64,
    sample: Option<usize>,
    perturb: Option<(&str, f64)>,
    rng: &mut ChaCha8Rng,
) -> Result<CheckResult> {
    let mut tape = Tape::new();
    if let Some((op, f)) = perturb {
        tape.perturb_backward(op, f);
    }
    let bound = inputs.bind(&mut tape, true);
    let out = build(&mut tape, &bound)?;
    let weights: Vec<f64> = if tape.value(out).numel() == 1 {
        vec![1.0]
    } else {
        (0..tape.value(out).numel()).map(|_| rng.random_range(-1.0..1.0)).collect()
    };
    let loss = probe(&mut tape, out, &weights)?;
    tape.backward(loss)?;
    let grads = bound.grads(inputs, &tape)?;

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut t = Tape::inference();
        let b = store.bind(&mut t, false);
        let v = build(&mut t, &b)?;
        Ok(t.value(v).data().iter().zip(&weights).map(|(a, b)| a * b).sum())
    };

    let center = if sample.is_some() { Some(eval(inputs)?) } else { None };
    let mut work = inputs.clone();
    let (mut max_err, mut max_mag, mut entries, mut skipped) = (0.0f64, 0.0f64, 0, 0);
    let names: Vec<String> = inputs.names().map(str::to_string).collect();
    for name in &names {
        let n = inputs.get(name).expect("listed").numel();
        let picks: Vec<usize> = match sample {
            Some(k) if k < n => (0..k).map(|_| rng.random_range(0..n)).collect(),
            _ => (0..n).collect(),
        };
        for i in picks {
            let orig = inputs.get(name).expect("listed").data()[i];
            work.get_mut(name).expect("listed").data_mut()[i] = orig + step;
            let up = eval(&work)?;
            work.get_mut(name).expect("listed").data_mut()[i] = orig - step;
            let down = eval(&work)?;
            work.get_mut(name).expect("listed").data_mut()[i] = orig;
            if let Some(f0) = center {
                let (right, left) = ((up - f0) / step, (f0 - down) / step);
                let jump = (right - left).abs();
                if jump > KINK_FLOOR && jump > KINK_RATIO * right.abs().max(left.abs()) {
                    skipped += 1;
                    continue;
                }
            }
            let numeric = (up - down) / (2.0 * step);
            let analytic = grads.get(name).expect("listed").data()[i];
            max_err = max_err.max((analytic - numeric).abs());
            max_mag = max_mag.max(analytic.abs()).max(numeric.abs());
            entries += 1;
        }
    }
    let rel_error = if max_mag > 0.0 { max_err / max_mag } else { max_err };
    Ok(CheckResult {
        name: name.to_string(),
        entries,
        skipped,
        max_abs_error: max_err,
        rel_error,
        tolerance,
        passed: rel_error < tolerance,
    })
}

fn store(items: Vec<(&str, Tensor)>) -> ParamStore {
    let mut s = ParamStore::new();
    for (k, v) in items {
        s.insert(k, v).expect("unique names");
    }
    s
}

fn uni(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::rand_uniform(shape.to_vec(), lo, hi, rng)
}

/// Values bounded away from zero, for rules with a kink there.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = uni(shape, 0.1, 1.0, rng);
    for v in t.data_mut() {
        if rng.random_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

/// Distinct values in random order, so max-type rules have no ties.
fn distinct(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.1 - 0.05 * n as f64).collect();
    for i in (1..n).rev() {
        vals.swap(i, rng.random_range(0..=i));
    }
    Tensor::new(shape.to_vec(), vals).expect("consistent")
}

fn op_cases(rng: &mut ChaCha8Rng) -> Vec<OpCase> {
    let mut cases: Vec<OpCase> = Vec::new();
    macro_rules! case {
        ($name:expr, [$(($k:expr, $t:expr)),* $(,)?], $build:expr) => {
            cases.push(OpCase { name: $name, inputs: store(vec![$(($k, $t)),*]), build: Box::new($build) })
        };
    }
    let s = [2, 3, 4];
    case!("add", [("a", uni(&s, -1.0, 1.0, rng)), ("b", uni(&s, -1.0, 1.0, rng))], |t, b| t.add(b.get("a")?, b.get("b")?));
    case!("sub", [("a", uni(&s, -1.0, 1.0, rng)), ("b", uni(&s, -1.0, 1.0, rng))], |t, b| t.sub(b.get("a")?, b.get("b")?));
    case!("mul", [("a", uni(&s, -1.0, 1.0, rng)), ("b", uni(&s, -1.0, 1.0, rng))], |t, b| t.mul(b.get("a")?, b.get("b")?));
    case!("add_broadcast", [("a", uni(&s, -1.0, 1.0, rng)), ("b", uni(&[1, 3, 1], -1.0, 1.0, rng))], |t, b| {
        t.add_broadcast(b.get("a")?, b.get("b")?)
    });
    case!("mul_broadcast", [("a", uni(&s, -1.0, 1.0, rng)), ("b", uni(&[2, 1, 4], -1.0, 1.0, rng))], |t, b| {
        t.mul_broadcast(b.get("a")?, b.get("b")?)
    });
    case!("scale", [("a", uni(&s, -1.0, 1.0, rng))], |t, b| t.scale(b.get("a")?, -1.7));
    case!("exp", [("a", uni(&s, -1.0, 1.0, rng))], |t, b| t.exp(b.get("a")?));
    case!("sum", [("a", uni(&s, -1.0, 1.0, rng))], |t, b| t.sum(b.get("a")?));
    case!("mean", [("a", uni(&s, -1.0, 1.0, rng))], |t, b| t.mean(b.get("a")?));
    case!("sigmoid", [("a", uni(&s, -4.0, 4.0, rng))], |t, b| t.sigmoid(b.get("a")?));
    case!("silu", [("a", uni(&s, -4.0, 4.0, rng))], |t, b| t.silu(b.get("a")?));
    case!("softplus", [("a", uni(&s, -4.0, 4.0, rng))], |t, b| t.softplus(b.get("a")?));
    case!("relu", [("a", away_from_zero(&s, rng))], |t, b| t.relu(b.get("a")?));
    case!(
        "conv2d",
        [("x", uni(&[2, 2, 6, 5], -1.0, 1.0, rng)), ("w", uni(&[3, 2, 3, 3], -1.0, 1.0, rng)), ("b", uni(&[3], -1.0, 1.0, rng))],
        |t, b| t.conv2d(b.get("x")?, b.get("w")?, Some(b.get("b")?), 2, 2, 2)
    );
    case!(
        "conv1d_causal",
        [("x", uni(&[2, 3, 7], -1.0, 1.0, rng)), ("w", uni(&[3, 1, 3], -1.0, 1.0, rng)), ("b", uni(&[3], -1.0, 1.0, rng))],
        |t, b| t.conv1d_causal(b.get("x")?, b.get("w")?, b.get("b")?)
    );
    case!(
        "linear",
        [("x", uni(&[2, 3, 4], -1.0, 1.0, rng)), ("w", uni(&[5, 4], -1.0, 1.0, rng)), ("b", uni(&[5], -1.0, 1.0, rng))],
        |t, b| t.linear(b.get("x")?, b.get("w")?, Some(b.get("b")?))
    );
    case!(
        "layer_norm",
        [("x", uni(&[2, 3, 5], -1.0, 1.0, rng)), ("g", uni(&[5], 0.5, 1.5, rng)), ("b", uni(&[5], -0.5, 0.5, rng))],
        |t, b| t.layer_norm(b.get("x")?, b.get("g")?, b.get("b")?, 1e-5)
    );
    case!(
        "batch_norm2d",
        [("x", uni(&[3, 2, 3, 3], -1.0, 1.0, rng)), ("g", uni(&[2], 0.5, 1.5, rng)), ("b", uni(&[2], -0.5, 0.5, rng))],
        |t, b| Ok(t.batch_norm2d(b.get("x")?, b.get("g")?, b.get("b")?, 1e-5)?.0)
    );
    case!(
        "batch_norm2d_eval",
        [("x", uni(&[2, 2, 3, 3], -1.0, 1.0, rng)), ("g", uni(&[2], 0.5, 1.5, rng)), ("b", uni(&[2], -0.5, 0.5, rng))],
        |t, b| t.batch_norm2d_eval(b.get("x")?, b.get("g")?, b.get("b")?, &[0.1, -0.2], &[0.5, 2.0], 1e-5)
    );
    case!("max_pool2d", [("x", distinct(&[2, 2, 5, 4], rng))], |t, b| t.max_pool2d(b.get("x")?, 2));
    case!("adaptive_avg_pool2d", [("x", uni(&[2, 3, 3, 4], -1.0, 1.0, rng))], |t, b| t.adaptive_avg_pool2d(b.get("x")?));
    case!("global_avg_pool", [("x", uni(&[2, 3, 3, 4], -1.0, 1.0, rng))], |t, b| t.global_avg_pool(b.get("x")?));
    case!("channel_max", [("x", distinct(&[2, 3, 3, 4], rng))], |t, b| t.channel_max(b.get("x")?));
    case!("channel_mean", [("x", uni(&[2, 3, 3, 4], -1.0, 1.0, rng))], |t, b| t.channel_mean(b.get("x")?));
    case!("reshape", [("x", uni(&s, -1.0, 1.0, rng))], |t, b| t.reshape(b.get("x")?, vec![4, 6]));
    case!("permute", [("x", uni(&s, -1.0, 1.0, rng))], |t, b| t.permute(b.get("x")?, &[2, 0, 1]));
    case!("flip", [("x", uni(&s, -1.0, 1.0, rng))], |t, b| t.flip(b.get("x")?, 1));
    case!("split", [("x", uni(&[2, 6, 2], -1.0, 1.0, rng))], |t, b| {
        let parts = t.split_sizes(b.get("x")?, 1, &[1, 3, 2])?;
        let y = t.mul(parts[0], parts[0])?;
        let z = t.scale(parts[2], 3.0)?;
        t.concat(&[y, parts[1], z], 1)
    });
    case!("concat", [("a", uni(&[2, 1, 3], -1.0, 1.0, rng)), ("b", uni(&[2, 2, 3], -1.0, 1.0, rng))], |t, b| {
        t.concat(&[b.get("a")?, b.get("b")?], 1)
    });
    case!(
        "selective_scan",
        [
            ("x", uni(&[2, 6, 3], -1.0, 1.0, rng)),
            ("delta", uni(&[2, 6, 3], 0.1, 1.0, rng)),
            ("a", uni(&[3, 4], -2.0, -0.1, rng)),
            ("b", uni(&[2, 6, 4], -1.0, 1.0, rng)),
            ("c", uni(&[2, 6, 4], -1.0, 1.0, rng)),
            ("d", uni(&[3], -1.0, 1.0, rng)),
        ],
        |t, b| t.selective_scan(b.get("x")?, b.get("delta")?, b.get("a")?, b.get("b")?, b.get("c")?, b.get("d")?, ScanMode::Parallel)
    );
    case!("bce", [("p", uni(&[6], 0.1, 0.9, rng))], |t, b| t.bce_loss(b.get("p")?, &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0]));

    let cfg = SsmConfig::new(4, 3, 2, 3, None).expect("valid");
    let mut mamba = store(vec![("x", uni(&[1, 5, 4], -1.0, 1.0, rng))]);
    mamba.extend(SsmParams::init(cfg, rng).named("m")).expect("unique names");
    cases.push(OpCase {
        name: "mamba_block",
        inputs: mamba,
        build: Box::new(move |t, b| mamba_block(t, b.get("x")?, &b.scope("m"), &cfg, ScanMode::Parallel)),
    });
    cases
}

/// Names of every per-op check, in report order.
pub fn registered_ops() -> Vec<&'static str> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    op_cases(&mut rng).iter().map(|c| c.name).collect()
}

/// Runs every per-op check. `perturb` scales the backward output of the named
/// rule, for verifying that the audit detects a broken rule.
pub fn check_ops(seed: u64, perturb: Option<(&str, f64)>) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cases = op_cases(&mut rng);
    cases
        .iter()
        .map(|c| check(c.name, &c.inputs, &*c.build, OP_TOLERANCE, STEP, None, perturb, &mut rng))
        .collect()
}

/// Finite-difference check of the BCE loss of the full classifier at
/// `MODEL_INPUT`×`MODEL_INPUT`, with respect to sampled parameter entries.
pub fn check_model(seed: u64, perturb: Option<(&str, f64)>) -> Result<CheckResult> {
    let config = ModelConfig { input_size: [MODEL_INPUT, MODEL_INPUT], ..ModelConfig::default() };
    let model = Model::new(config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let x = Tensor::rand_uniform(vec![2, 3, MODEL_INPUT, MODEL_INPUT], -1.0, 1.0, &mut rng);
    let labels = [1.0, 0.0];
    let build = |t: &mut Tape, b: &Bindings| -> Result<Var> {
        let input = t.constant(x.clone());
        let out = model.forward(t, b, input, Mode::Train)?;
        t.bce_loss(out.probs, &labels)
    };
    check("model", &model.params, &build, MODEL_TOLERANCE, MODEL_STEP, Some(MODEL_SAMPLES), perturb, &mut rng)
}
