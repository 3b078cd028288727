use super::{Backward, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn nchw(op: &'static str, shape: &[usize]) -> Result<[usize; 4]> {
    match shape {
        &[n, c, h, w] => Ok([n, c, h, w]),
        _ => Err(Error::shape(op, format!("expected NCHW, got {shape:?}"))),
    }
}

/// Routes each output gradient to one saved input position.
struct GatherRule {
    op: &'static str,
    source: Vec<usize>,
}

impl Backward for GatherRule {
    fn op(&self) -> &'static str {
        self.op
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let mut gx = vec![0.0; inputs[0].numel()];
        for (gv, &src) in g.iter().zip(&self.source) {
            gx[src] += gv;
        }
        vec![Some(gx)]
    }
}

/// Mean over contiguous planes of `plane` elements, one output per plane.
struct PlaneMeanRule {
    op: &'static str,
    plane: usize,
}

impl Backward for PlaneMeanRule {
    fn op(&self) -> &'static str {
        self.op
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let mut gx = vec![0.0; inputs[0].numel()];
        let inv = 1.0 / self.plane as f64;
        for (chunk, gv) in gx.chunks_mut(self.plane).zip(g) {
            chunk.fill(gv * inv);
        }
        vec![Some(gx)]
    }
}

struct ChannelMeanRule {
    c: usize,
    plane: usize,
}

impl Backward for ChannelMeanRule {
    fn op(&self) -> &'static str {
        "channel_mean"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let mut gx = vec![0.0; inputs[0].numel()];
        let inv = 1.0 / self.c as f64;
        for (ni, gs) in g.chunks(self.plane).enumerate() {
            for ci in 0..self.c {
                let s = (ni * self.c + ci) * self.plane;
                gx[s..s + self.plane].iter_mut().zip(gs).for_each(|(a, b)| *a = b * inv);
            }
        }
        vec![Some(gx)]
    }
}

impl Tape {
    /// Max pooling with a `size`×`size` window and stride `size`; trailing
    /// rows/columns that do not fill a window are dropped.
    pub fn max_pool2d(&mut self, x: Var, size: usize) -> Result<Var> {
        let [n, c, h, w] = nchw("max_pool2d", self.shape(x))?;
        if size == 0 || h < size || w < size {
            return Err(Error::shape("max_pool2d", format!("window {size} does not fit {h}x{w}")));
        }
        let (oh, ow) = (h / size, w / size);
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut source = Vec::with_capacity(n * c * oh * ow);
        for nc in 0..n * c {
            let base = nc * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * size * w + ox * size;
                    for dy in 0..size {
                        for dx in 0..size {
                            let i = base + (oy * size + dy) * w + ox * size + dx;
                            if xd[i] > xd[best] {
                                best = i;
                            }
                        }
                    }
                    out.push(xd[best]);
                    source.push(best);
                }
            }
        }
        let t = Tensor::from_parts(vec![n, c, oh, ow], out);
        self.push(t, &[x], GatherRule { op: "max_pool2d", source })
    }

    /// Mean over all spatial positions: `[N, C, H, W] -> [N, C, 1, 1]`.
    pub fn adaptive_avg_pool2d(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = nchw("adaptive_avg_pool2d", self.shape(x))?;
        let plane = h * w;
        let out = self.value(x).data().chunks(plane).map(|p| p.iter().sum::<f64>() / plane as f64).collect();
        self.push(Tensor::from_parts(vec![n, c, 1, 1], out), &[x], PlaneMeanRule { op: "adaptive_avg_pool2d", plane })
    }

    /// Global average pooling: `[N, C, H, W] -> [N, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = nchw("global_avg_pool", self.shape(x))?;
        let plane = h * w;
        let out = self.value(x).data().chunks(plane).map(|p| p.iter().sum::<f64>() / plane as f64).collect();
        self.push(Tensor::from_parts(vec![n, c], out), &[x], PlaneMeanRule { op: "global_avg_pool", plane })
    }

    /// Maximum over channels: `[N, C, H, W] -> [N, 1, H, W]`.
    pub fn channel_max(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = nchw("channel_max", self.shape(x))?;
        let plane = h * w;
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(n * plane);
        let mut source = Vec::with_capacity(n * plane);
        for ni in 0..n {
            for p in 0..plane {
                let mut best = ni * c * plane + p;
                for ci in 1..c {
                    let i = (ni * c + ci) * plane + p;
                    if xd[i] > xd[best] {
                        best = i;
                    }
                }
                out.push(xd[best]);
                source.push(best);
            }
        }
        self.push(Tensor::from_parts(vec![n, 1, h, w], out), &[x], GatherRule { op: "channel_max", source })
    }

    /// Mean over channels: `[N, C, H, W] -> [N, 1, H, W]`.
    pub fn channel_mean(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = nchw("channel_mean", self.shape(x))?;
        let plane = h * w;
        let xd = self.value(x).data();
        let mut out = vec![0.0; n * plane];
        for ni in 0..n {
            let o = &mut out[ni * plane..(ni + 1) * plane];
            for ci in 0..c {
                let s = (ni * c + ci) * plane;
                o.iter_mut().zip(&xd[s..s + plane]).for_each(|(a, b)| *a += b);
            }
            o.iter_mut().for_each(|v| *v /= c as f64);
        }
        self.push(Tensor::from_parts(vec![n, 1, h, w], out), &[x], ChannelMeanRule { c, plane })
    }
}
