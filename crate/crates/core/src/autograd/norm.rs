use super::{Backward, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-channel batch statistics observed by a training-mode batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (1/count) variance.
    pub var: Vec<f64>,
    pub count: usize,
}

/// Saved standardized values and per-row reciprocal standard deviations.
struct NormBackward<'a> {
    xhat: &'a [f64],
    rstd: &'a [f64],
}

struct LayerNormRule {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
    features: usize,
}

impl Backward for LayerNormRule {
    fn op(&self) -> &'static str {
        "layer_norm"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let f = self.features;
        let gamma = inputs[1].data();
        let rows = g.len() / f;
        let nb = NormBackward { xhat: &self.xhat, rstd: &self.rstd };
        let gx = needs[0].then(|| {
            let mut gx = vec![0.0; g.len()];
            let mut dxhat = vec![0.0; f];
            for r in 0..rows {
                let span = r * f..(r + 1) * f;
                for (j, d) in dxhat.iter_mut().enumerate() {
                    *d = g[r * f + j] * gamma[j];
                }
                nb.input_grad(&dxhat, span.clone(), nb.rstd[r], &mut gx[span]);
            }
            gx
        });
        let mut ggamma = vec![0.0; f];
        let mut gbeta = vec![0.0; f];
        for r in 0..rows {
            for j in 0..f {
                let e = r * f + j;
                ggamma[j] += g[e] * self.xhat[e];
                gbeta[j] += g[e];
            }
        }
        vec![gx, needs[1].then_some(ggamma), needs[2].then_some(gbeta)]
    }
}

impl NormBackward<'_> {
    /// dx = rstd · (dxhat − mean(dxhat) − xhat · mean(dxhat · xhat)) over one group.
    fn input_grad(&self, dxhat: &[f64], span: std::ops::Range<usize>, rstd: f64, out: &mut [f64]) {
        let xhat = &self.xhat[span];
        let n = dxhat.len() as f64;
        let mean_d: f64 = dxhat.iter().sum::<f64>() / n;
        let mean_dx: f64 = dxhat.iter().zip(xhat).map(|(a, b)| a * b).sum::<f64>() / n;
        for ((o, d), xh) in out.iter_mut().zip(dxhat).zip(xhat) {
            *o = rstd * (d - mean_d - xh * mean_dx);
        }
    }
}

struct BatchNormTrainRule {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
    shape: [usize; 4],
}

impl Backward for BatchNormTrainRule {
    fn op(&self) -> &'static str {
        "batch_norm2d"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let [n, c, h, w] = self.shape;
        let plane = h * w;
        let gamma = inputs[1].data();
        let mut ggamma = vec![0.0; c];
        let mut gbeta = vec![0.0; c];
        for ni in 0..n {
            for ci in 0..c {
                let s = (ni * c + ci) * plane;
                for e in s..s + plane {
                    ggamma[ci] += g[e] * self.xhat[e];
                    gbeta[ci] += g[e];
                }
            }
        }
        let gx = needs[0].then(|| {
            let count = (n * plane) as f64;
            let mut gx = vec![0.0; g.len()];
            for ci in 0..c {
                // sums over the channel of dxhat and dxhat·xhat
                let mean_d = gbeta[ci] * gamma[ci] / count;
                let mean_dx = ggamma[ci] * gamma[ci] / count;
                for ni in 0..n {
                    let s = (ni * c + ci) * plane;
                    for e in s..s + plane {
                        let d = g[e] * gamma[ci];
                        gx[e] = self.rstd[ci] * (d - mean_d - self.xhat[e] * mean_dx);
                    }
                }
            }
            gx
        });
        vec![gx, needs[1].then_some(ggamma), needs[2].then_some(gbeta)]
    }
}

struct BatchNormEvalRule {
    scale: Vec<f64>,
    xhat: Vec<f64>,
    plane: usize,
}

impl Backward for BatchNormEvalRule {
    fn op(&self) -> &'static str {
        "batch_norm2d_eval"
    }

    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let c = self.scale.len();
        let mut gx = vec![0.0; g.len()];
        let mut ggamma = vec![0.0; c];
        let mut gbeta = vec![0.0; c];
        for (e, &gv) in g.iter().enumerate() {
            let ci = (e / self.plane) % c;
            gx[e] = gv * self.scale[ci];
            ggamma[ci] += gv * self.xhat[e];
            gbeta[ci] += gv;
        }
        vec![needs[0].then_some(gx), needs[1].then_some(ggamma), needs[2].then_some(gbeta)]
    }
}

fn check_affine(op: &'static str, len: usize, gamma: &[usize], beta: &[usize]) -> Result<()> {
    if gamma != [len] || beta != [len] {
        return Err(Error::shape(op, format!("gamma {gamma:?} / beta {beta:?} do not match {len} features")));
    }
    Ok(())
}

impl Tape {
    /// Normalizes each slice along the last axis with population variance.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let f = *shape.last().ok_or_else(|| Error::shape("layer_norm", "scalar input"))?;
        check_affine("layer_norm", f, self.shape(gamma), self.shape(beta))?;
        if eps <= 0.0 {
            return Err(Error::InvalidArgument(format!("layer_norm eps must be positive, got {eps}")));
        }
        let xd = self.value(x).data();
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();
        let rows = xd.len() / f;
        let mut xhat = vec![0.0; xd.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xd.len()];
        for r in 0..rows {
            let row = &xd[r * f..(r + 1) * f];
            let mean = row.iter().sum::<f64>() / f as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / f as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..f {
                let xh = (row[j] - mean) * rs;
                xhat[r * f + j] = xh;
                out[r * f + j] = xh * gd[j] + bd[j];
            }
        }
        self.push(Tensor::from_parts(shape, out), &[x, gamma, beta], LayerNormRule { xhat, rstd, features: f })
    }

    /// Training-mode batch norm over `[N, C, H, W]` using the batch's own
    /// statistics. Returns the statistics so callers can update running
    /// averages.
    pub fn batch_norm2d(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let shape = self.shape(x).to_vec();
        let [n, c, h, w] = shape[..] else {
            return Err(Error::shape("batch_norm2d", format!("expected NCHW, got {shape:?}")));
        };
        check_affine("batch_norm2d", c, self.shape(gamma), self.shape(beta))?;
        let plane = h * w;
        let count = n * plane;
        let xd = self.value(x).data();
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ci in 0..c {
            let mut s = 0.0;
            for ni in 0..n {
                let st = (ni * c + ci) * plane;
                s += xd[st..st + plane].iter().sum::<f64>();
            }
            let m = s / count as f64;
            let mut v = 0.0;
            for ni in 0..n {
                let st = (ni * c + ci) * plane;
                v += xd[st..st + plane].iter().map(|x| (x - m) * (x - m)).sum::<f64>();
            }
            mean[ci] = m;
            var[ci] = v / count as f64;
        }
        let rstd: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for (e, (&xv, (xh, o))) in xd.iter().zip(xhat.iter_mut().zip(out.iter_mut())).enumerate() {
            let ci = (e / plane) % c;
            *xh = (xv - mean[ci]) * rstd[ci];
            *o = *xh * gd[ci] + bd[ci];
        }
        let stats = BatchStats { mean, var, count };
        let rule = BatchNormTrainRule { xhat, rstd, shape: [n, c, h, w] };
        let y = self.push(Tensor::from_parts(shape, out), &[x, gamma, beta], rule)?;
        Ok((y, stats))
    }

    /// Inference-mode batch norm with fixed running statistics.
    pub fn batch_norm2d_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let [_, c, h, w] = shape[..] else {
            return Err(Error::shape("batch_norm2d", format!("expected NCHW, got {shape:?}")));
        };
        check_affine("batch_norm2d", c, self.shape(gamma), self.shape(beta))?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::shape("batch_norm2d", "running statistics do not match channel count"));
        }
        let plane = h * w;
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();
        let rstd: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let scale: Vec<f64> = rstd.iter().zip(gd).map(|(r, g)| r * g).collect();
        let xd = self.value(x).data();
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for (e, &xv) in xd.iter().enumerate() {
            let ci = (e / plane) % c;
            xhat[e] = (xv - running_mean[ci]) * rstd[ci];
            out[e] = xhat[e] * gd[ci] + bd[ci];
        }
        self.push(Tensor::from_parts(shape, out), &[x, gamma, beta], BatchNormEvalRule { scale, xhat, plane })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ln(x: Tensor, eps: f64) -> Tensor {
        let f = *x.shape().last().unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let g = tape.constant(Tensor::ones(vec![f]));
        let b = tape.constant(Tensor::zeros(vec![f]));
        let y = tape.layer_norm(xv, g, b, eps).unwrap();
        tape.value(y).clone()
    }

    #[test]
    fn constant_slice_normalizes_to_zero() {
        let y = ln(Tensor::full(vec![2, 5], 3.25), 1e-5);
        assert!(y.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn already_normalized_slice() {
        let y = ln(Tensor::new(vec![2], vec![1.0, -1.0]).unwrap(), 1e-12);
        assert!((y.data()[0] - 1.0).abs() < 1e-6 && (y.data()[1] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn moments_after_normalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y = ln(Tensor::rand_uniform(vec![3, 17], -4.0, 9.0, &mut rng), 1e-12);
        for row in y.data().chunks(17) {
            let m = row.iter().sum::<f64>() / 17.0;
            let v = row.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 17.0;
            assert!(m.abs() < 1e-6);
            assert!((v - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn batch_norm_eval_matches_train_with_same_stats() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let xt = Tensor::rand_uniform(vec![2, 3, 4, 4], -1.0, 2.0, &mut rng);
        let gt = Tensor::rand_uniform(vec![3], 0.5, 1.5, &mut rng);
        let bt = Tensor::rand_uniform(vec![3], -0.5, 0.5, &mut rng);
        let mut tape = Tape::new();
        let x = tape.constant(xt);
        let g = tape.constant(gt);
        let b = tape.constant(bt);
        let (y_train, stats) = tape.batch_norm2d(x, g, b, 1e-5).unwrap();
        let y_eval = tape.batch_norm2d_eval(x, g, b, &stats.mean, &stats.var, 1e-5).unwrap();
        assert!(tape.value(y_train).max_abs_diff(tape.value(y_eval)) < 1e-12);
        assert_eq!(stats.count, 32);
    }
}
