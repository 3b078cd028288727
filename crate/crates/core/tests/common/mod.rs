//! Straight-line reference implementations: plain loops over flat buffers,
//! no tape, no shared code with the library kernels.

#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ulmv_core::ssm::SsmParams;
use ulmv_core::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
    Tensor::rand_uniform(shape.to_vec(), -1.0, 1.0, &mut rng(seed))
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        (1.0 + x.exp()).ln()
    }
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    x: &[f64],
    [n, ci, h, w]: [usize; 4],
    wt: &[f64],
    [co, _, kh, kw]: [usize; 4],
    bias: Option<&[f64]>,
    stride: usize,
    pad: usize,
    dil: usize,
) -> (Vec<f64>, [usize; 4]) {
    let oh = (h + 2 * pad - dil * (kh - 1) - 1) / stride + 1;
    let ow = (w + 2 * pad - dil * (kw - 1) - 1) / stride + 1;
    let mut out = vec![0.0; n * co * oh * ow];
    for b in 0..n {
        for o in 0..co {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = bias.map_or(0.0, |b| b[o]);
                    for c in 0..ci {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (y * stride + ky * dil) as isize - pad as isize;
                                let ix = (xo * stride + kx * dil) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xi = ((b * ci + c) * h + iy as usize) * w + ix as usize;
                                let wi = ((o * ci + c) * kh + ky) * kw + kx;
                                acc += x[xi] * wt[wi];
                            }
                        }
                    }
                    out[((b * co + o) * oh + y) * ow + xo] = acc;
                }
            }
        }
    }
    (out, [n, co, oh, ow])
}

/// `y = x·Wᵀ + b` over rows of length `f_in`.
pub fn linear(x: &[f64], f_in: usize, w: &[f64], f_out: usize, b: Option<&[f64]>) -> Vec<f64> {
    let rows = x.len() / f_in;
    let mut out = vec![0.0; rows * f_out];
    for r in 0..rows {
        for o in 0..f_out {
            let mut acc = b.map_or(0.0, |b| b[o]);
            for i in 0..f_in {
                acc += x[r * f_in + i] * w[o * f_in + i];
            }
            out[r * f_out + o] = acc;
        }
    }
    out
}

pub fn layer_norm(x: &[f64], f: usize, gamma: &[f64], beta: &[f64], eps: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(f) {
        let mean = row.iter().sum::<f64>() / f as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / f as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for (i, v) in row.iter().enumerate() {
            out.push((v - mean) * inv * gamma[i] + beta[i]);
        }
    }
    out
}

/// Literal recurrence; returns `y` and every hidden state `h_t` (`[B, L, D, N]`).
pub fn scan_unrolled(
    x: &Tensor,
    delta: &Tensor,
    a: &Tensor,
    bm: &Tensor,
    cm: &Tensor,
    dskip: &Tensor,
) -> (Vec<f64>, Vec<f64>) {
    let &[batch, len, d] = x.shape() else { panic!("rank") };
    let n = a.shape()[1];
    let mut y = vec![0.0; batch * len * d];
    let mut hs = vec![0.0; batch * len * d * n];
    for b in 0..batch {
        let mut h = vec![0.0; d * n];
        for t in 0..len {
            for c in 0..d {
                let xi = (b * len + t) * d + c;
                let dt = delta.data()[xi];
                let mut acc = 0.0;
                for s in 0..n {
                    let abar = (dt * a.data()[c * n + s]).exp();
                    let bbar = dt * bm.data()[(b * len + t) * n + s];
                    h[c * n + s] = abar * h[c * n + s] + bbar * x.data()[xi];
                    acc += cm.data()[(b * len + t) * n + s] * h[c * n + s];
                    hs[((b * len + t) * d + c) * n + s] = h[c * n + s];
                }
                y[xi] = acc + dskip.data()[c] * x.data()[xi];
            }
        }
    }
    (y, hs)
}

/// Gated selective-SSM block on `x: [batch, len, d_model]`.
pub fn mamba(x: &[f64], batch: usize, len: usize, p: &SsmParams) -> Vec<f64> {
    let cfg = p.config;
    let (m, di, n, r, k) = (cfg.d_model, cfg.d_inner(), cfg.d_state, cfg.dt_rank, cfg.conv_k);
    let xz = linear(x, m, p.in_proj.data(), 2 * di, None);
    let mut out = vec![0.0; batch * len * m];
    for b in 0..batch {
        let at = |t: usize, j: usize| xz[(b * len + t) * 2 * di + j];
        let mut u = vec![0.0; len * di];
        for t in 0..len {
            for c in 0..di {
                let mut acc = p.conv_bias.data()[c];
                for j in 0..k {
                    let src = t as isize - (k - 1 - j) as isize;
                    if src >= 0 {
                        acc += p.conv_weight.data()[c * k + j] * at(src as usize, c);
                    }
                }
                u[t * di + c] = silu(acc);
            }
        }
        let dbc = linear(&u, di, p.x_proj.data(), r + 2 * n, None);
        let mut h = vec![0.0; di * n];
        for t in 0..len {
            let row = &dbc[t * (r + 2 * n)..(t + 1) * (r + 2 * n)];
            let (low, bv, cv) = (&row[..r], &row[r..r + n], &row[r + n..]);
            let mut gated = vec![0.0; di];
            for c in 0..di {
                let mut dt = p.dt_proj_bias.data()[c];
                for q in 0..r {
                    dt += p.dt_proj_weight.data()[c * r + q] * low[q];
                }
                let dt = softplus(dt);
                let uc = u[t * di + c];
                let mut y = p.d_skip.data()[c] * uc;
                for s in 0..n {
                    let a = -p.a_log.data()[c * n + s].exp();
                    h[c * n + s] = (dt * a).exp() * h[c * n + s] + dt * bv[s] * uc;
                    y += cv[s] * h[c * n + s];
                }
                gated[c] = y * silu(at(t, di + c));
            }
            let o = linear(&gated, di, p.out_proj.data(), m, None);
            out[(b * len + t) * m..(b * len + t + 1) * m].copy_from_slice(&o);
        }
    }
    out
}
