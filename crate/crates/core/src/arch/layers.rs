//! Building blocks of the classifier. Each function reads its weights from a
//! [`Scope`] so the same code serves training, inference and gradient checks.

use super::config::{ChannelShare, ModelConfig};
use crate::autograd::{BatchStats, Conv2dOptions, Tape, Var};
use crate::error::{Error, Result};
use crate::params::Scope;
use crate::ssm::{mamba_block, ScanMode, SsmConfig};

pub const BN_EPS: f64 = 1e-5;
pub const LN_EPS: f64 = 1e-5;

/// Kernel size, dilation and padding of the shared spatial-attention conv.
pub const SPATIAL_KERNEL: usize = 7;
pub const SPATIAL_DILATION: usize = 3;
pub const SPATIAL_PADDING: usize = 9;
/// Width of the shared 1-D conv over the pooled channel descriptor.
pub const CHANNEL_CONV_TAPS: usize = 3;

/// How batch norm obtains its statistics.
#[derive(Clone, Copy, Debug)]
pub enum BnMode<'a> {
    /// Normalize with the batch's own statistics.
    Train,
    /// Normalize with fixed running statistics.
    Eval { mean: &'a [f64], var: &'a [f64] },
}

/// 3×3 convolution (padding 1) → batch norm → ReLU → 2×2 max pool.
pub fn conv_block(tape: &mut Tape, x: Var, p: &Scope, bn: BnMode) -> Result<(Var, Option<BatchStats>)> {
    let y = tape.conv2d(x, p.get("conv.weight")?, Some(p.get("conv.bias")?), 1, 1, 1)?;
    let (gamma, beta) = (p.get("bn.weight")?, p.get("bn.bias")?);
    let (y, stats) = match bn {
        BnMode::Train => {
            let (y, s) = tape.batch_norm2d(y, gamma, beta, BN_EPS)?;
            (y, Some(s))
        }
        BnMode::Eval { mean, var } => (tape.batch_norm2d_eval(y, gamma, beta, mean, var, BN_EPS)?, None),
    };
    let y = tape.relu(y)?;
    Ok((tape.max_pool2d(y, 2)?, stats))
}

/// Parallel vision-Mamba layer.
///
/// `x: [N, C, H, W]` is max-pooled, lifted to `C'` channels by a 1×1 conv and
/// flattened row-major into a sequence `[N, H'·W', C']`. After layer norm the
/// channels are split into `branches` groups; each group goes through its own
/// Mamba block plus a learnable scaled residual. The groups are concatenated,
/// normalized again and projected, then folded back to `[N, C', H', W']`.
pub fn pvm_layer(tape: &mut Tape, x: Var, p: &Scope, ssm: &SsmConfig, branches: usize, bidirectional: bool, mode: ScanMode) -> Result<Var> {
    let x = tape.max_pool2d(x, 2)?;
    let x = tape.conv2d(x, p.get("lift.weight")?, Some(p.get("lift.bias")?), 1, 0, 1)?;
    let &[n, c, h, w] = tape.shape(x) else { unreachable!("conv2d output is rank 4") };
    if c % branches != 0 || c / branches != ssm.d_model {
        return Err(Error::shape(
            "pvm_layer",
            format!("{c} channels cannot feed {branches} branches of width {}", ssm.d_model),
        ));
    }
    let seq = tape.reshape(x, vec![n, c, h * w])?;
    let seq = tape.permute(seq, &[0, 2, 1])?;
    let seq = tape.layer_norm(seq, p.get("norm_in.weight")?, p.get("norm_in.bias")?, LN_EPS)?;
    let groups = tape.split(seq, 2, branches)?;
    let mut outs = Vec::with_capacity(branches);
    for (i, &g) in groups.iter().enumerate() {
        let bp = p.scope(&format!("branch{i}"));
        let mut y = mamba_block(tape, g, &bp, ssm, mode)?;
        if bidirectional {
            let rev = tape.flip(g, 1)?;
            let r = mamba_block(tape, rev, &bp.scope("reverse"), ssm, mode)?;
            let r = tape.flip(r, 1)?;
            y = tape.add(y, r)?;
        }
        let scale = tape.reshape(bp.get("skip_scale")?, vec![1, 1, 1])?;
        let skip = tape.mul_broadcast(g, scale)?;
        outs.push(tape.add(y, skip)?);
    }
    let y = tape.concat(&outs, 2)?;
    let y = tape.layer_norm(y, p.get("norm_out.weight")?, p.get("norm_out.bias")?, LN_EPS)?;
    let y = tape.linear(y, p.get("proj.weight")?, Some(p.get("proj.bias")?))?;
    let y = tape.permute(y, &[0, 2, 1])?;
    tape.reshape(y, vec![n, c, h, w])
}

/// Spatial and channel attention bridge over the first five stage outputs.
///
/// Spatial part, per map: `s = sigmoid(conv([mean_c(x), max_c(x)])) · x`
/// with one dilated conv shared by all maps, then `x1 = s + x`.
/// Channel part: the global-average-pooled `x1` of every map are concatenated,
/// passed through the shared stage and one linear layer per map, and
/// `out = sigmoid(att) · x1 + s`.
pub fn scab(tape: &mut Tape, feats: &[Var], p: &Scope, cfg: &ModelConfig) -> Result<Vec<Var>> {
    let expected = cfg.scab_channels();
    if feats.len() != expected.len() {
        return Err(Error::shape("scab", format!("expected {} feature maps, got {}", expected.len(), feats.len())));
    }
    for (i, (&f, &c)) in feats.iter().zip(&expected).enumerate() {
        let s = tape.shape(f);
        if s.len() != 4 || s[1] != c {
            return Err(Error::shape("scab", format!("map {i} has shape {s:?}, expected {c} channels")));
        }
    }
    let sp = p.scope("spatial");
    let (sw, sb) = (sp.get("conv.weight")?, sp.get("conv.bias")?);
    let mut attended = Vec::with_capacity(feats.len());
    let mut bridged = Vec::with_capacity(feats.len());
    for &x in feats {
        let mean = tape.channel_mean(x)?;
        let max = tape.channel_max(x)?;
        let desc = tape.concat(&[mean, max], 1)?;
        let att = tape.conv2d(desc, sw, Some(sb), 1, SPATIAL_PADDING, SPATIAL_DILATION)?;
        let att = tape.sigmoid(att)?;
        let s = tape.mul_broadcast(x, att)?;
        bridged.push(tape.add(s, x)?);
        attended.push(s);
    }

    let cp = p.scope("channel");
    let pooled = bridged.iter().map(|&x| tape.global_avg_pool(x)).collect::<Result<Vec<_>>>()?;
    let desc = tape.concat(&pooled, 1)?;
    let n = tape.shape(desc)[0];
    let total: usize = expected.iter().sum();
    let shared = match cfg.scab_shared {
        ChannelShare::Conv1d => {
            let d = tape.reshape(desc, vec![n, 1, 1, total])?;
            let opts = Conv2dOptions { stride: 1, padding: (0, CHANNEL_CONV_TAPS / 2), dilation: 1 };
            let d = tape.conv2d_with(d, cp.get("shared.weight")?, None, opts)?;
            tape.reshape(d, vec![n, total])?
        }
        ChannelShare::Linear => {
            let d = tape.linear(desc, cp.get("shared.weight")?, Some(cp.get("shared.bias")?))?;
            tape.relu(d)?
        }
    };
    let mut outs = Vec::with_capacity(feats.len());
    for (i, (&x1, &s)) in bridged.iter().zip(&attended).enumerate() {
        let ap = cp.scope(&format!("att{}", i + 1));
        let att = tape.linear(shared, ap.get("weight")?, Some(ap.get("bias")?))?;
        let att = tape.sigmoid(att)?;
        let att = tape.reshape(att, vec![n, expected[i], 1, 1])?;
        let y = tape.mul_broadcast(x1, att)?;
        outs.push(tape.add(y, s)?);
    }
    Ok(outs)
}

/// Dense head on the flattened `[N, F]` features; returns logits `[N]`.
pub fn head(tape: &mut Tape, features: Var, p: &Scope, hidden: usize) -> Result<Var> {
    let n = tape.shape(features)[0];
    let logits = if hidden == 0 {
        tape.linear(features, p.get("fc.weight")?, Some(p.get("fc.bias")?))?
    } else {
        let h = tape.linear(features, p.get("fc1.weight")?, Some(p.get("fc1.bias")?))?;
        let h = tape.relu(h)?;
        tape.linear(h, p.get("fc2.weight")?, Some(p.get("fc2.bias")?))?
    };
    tape.reshape(logits, vec![n])
}
