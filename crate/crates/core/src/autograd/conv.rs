use super::{Backward, Tape, Var};
use crate::error::{Error, Result};
use crate::parallel;
use crate::tensor::Tensor;

/// Stride, zero padding (rows, cols) and dilation of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dOptions {
    pub stride: usize,
    pub padding: (usize, usize),
    pub dilation: usize,
}

impl Conv2dOptions {
    pub fn new(stride: usize, padding: usize, dilation: usize) -> Self {
        Conv2dOptions { stride, padding: (padding, padding), dilation }
    }
}

impl Default for Conv2dOptions {
    fn default() -> Self {
        Self::new(1, 0, 1)
    }
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    opts: Conv2dOptions,
}

/// Output extent of a convolution along one axis.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, padding: usize, dilation: usize) -> Option<usize> {
    let span = dilation * (kernel - 1) + 1;
    (input + 2 * padding >= span && stride >= 1).then(|| (input + 2 * padding - span) / stride + 1)
}

/// Range of output positions whose input tap `k` lands inside `[0, len)`.
fn valid_range(len: usize, out_len: usize, k: usize, g: &Geometry, pad: usize) -> (usize, usize) {
    let s = g.opts.stride as i64;
    let off = (k * g.opts.dilation) as i64 - pad as i64;
    // need 0 <= o*s + off < len
    let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
    let hi_incl = (len as i64 - 1 - off).div_euclid(s);
    let hi = (hi_incl + 1).clamp(0, out_len as i64);
    let lo = lo.min(hi);
    (lo as usize, hi as usize)
}

impl Geometry {
    fn resolve(x: &[usize], wt: &[usize], opts: Conv2dOptions) -> Result<Self> {
        if x.len() != 4 || wt.len() != 4 {
            return Err(Error::shape("conv2d", format!("expected NCHW input and OIHW weight, got {x:?} and {wt:?}")));
        }
        if x[1] != wt[1] {
            return Err(Error::shape(
                "conv2d",
                format!("input has {} channels but weight expects {}", x[1], wt[1]),
            ));
        }
        if opts.stride == 0 || opts.dilation == 0 {
            return Err(Error::shape("conv2d", "stride and dilation must be positive"));
        }
        let oh = conv_out_extent(x[2], wt[2], opts.stride, opts.padding.0, opts.dilation);
        let ow = conv_out_extent(x[3], wt[3], opts.stride, opts.padding.1, opts.dilation);
        let (Some(oh), Some(ow)) = (oh, ow) else {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {}x{} (dilation {}) exceeds padded input {:?}", wt[2], wt[3], opts.dilation, &x[2..]),
            ));
        };
        Ok(Geometry { n: x[0], cin: x[1], h: x[2], w: x[3], cout: wt[0], kh: wt[2], kw: wt[3], oh, ow, opts })
    }

    /// Visits every (output row, input row, output col range, input col offset)
    /// tap pairing for kernel position (ky, kx).
    #[inline]
    fn for_taps(&self, ky: usize, kx: usize, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
        let (oy0, oy1) = valid_range(self.h, self.oh, ky, self, self.opts.padding.0);
        let (ox0, ox1) = valid_range(self.w, self.ow, kx, self, self.opts.padding.1);
        if ox0 >= ox1 {
            return;
        }
        let s = self.opts.stride;
        for oy in oy0..oy1 {
            let iy = oy * s + ky * self.opts.dilation - self.opts.padding.0;
            let ix0 = ox0 * s + kx * self.opts.dilation - self.opts.padding.1;
            f(oy, iy, ox0, ox1, ix0);
        }
    }
}

fn forward_sample(g: &Geometry, x: &[f64], wt: &[f64], bias: Option<&[f64]>, out: &mut [f64]) {
    let (plane_in, plane_out) = (g.h * g.w, g.oh * g.ow);
    let s = g.opts.stride;
    for co in 0..g.cout {
        let o = &mut out[co * plane_out..(co + 1) * plane_out];
        o.fill(bias.map_or(0.0, |b| b[co]));
        for ci in 0..g.cin {
            let xin = &x[ci * plane_in..(ci + 1) * plane_in];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let wv = wt[((co * g.cin + ci) * g.kh + ky) * g.kw + kx];
                    g.for_taps(ky, kx, |oy, iy, ox0, ox1, ix0| {
                        let orow = &mut o[oy * g.ow + ox0..oy * g.ow + ox1];
                        let xrow = &xin[iy * g.w..(iy + 1) * g.w];
                        if s == 1 {
                            let xs = &xrow[ix0..ix0 + orow.len()];
                            orow.iter_mut().zip(xs).for_each(|(o, x)| *o += wv * x);
                        } else {
                            for (j, o) in orow.iter_mut().enumerate() {
                                *o += wv * xrow[ix0 + j * s];
                            }
                        }
                    });
                }
            }
        }
    }
}

fn input_grad_sample(g: &Geometry, gout: &[f64], wt: &[f64], gx: &mut [f64]) {
    let (plane_in, plane_out) = (g.h * g.w, g.oh * g.ow);
    let s = g.opts.stride;
    gx.fill(0.0);
    for ci in 0..g.cin {
        let gxi = &mut gx[ci * plane_in..(ci + 1) * plane_in];
        for co in 0..g.cout {
            let go = &gout[co * plane_out..(co + 1) * plane_out];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let wv = wt[((co * g.cin + ci) * g.kh + ky) * g.kw + kx];
                    g.for_taps(ky, kx, |oy, iy, ox0, ox1, ix0| {
                        let grow = &go[oy * g.ow + ox0..oy * g.ow + ox1];
                        let xrow = &mut gxi[iy * g.w..(iy + 1) * g.w];
                        if s == 1 {
                            let xs = &mut xrow[ix0..ix0 + grow.len()];
                            xs.iter_mut().zip(grow).for_each(|(x, gv)| *x += wv * gv);
                        } else {
                            for (j, gv) in grow.iter().enumerate() {
                                xrow[ix0 + j * s] += wv * gv;
                            }
                        }
                    });
                }
            }
        }
    }
}

fn weight_grad_sample(g: &Geometry, gout: &[f64], x: &[f64]) -> Vec<f64> {
    let (plane_in, plane_out) = (g.h * g.w, g.oh * g.ow);
    let s = g.opts.stride;
    let mut gw = vec![0.0; g.cout * g.cin * g.kh * g.kw];
    for co in 0..g.cout {
        let go = &gout[co * plane_out..(co + 1) * plane_out];
        for ci in 0..g.cin {
            let xin = &x[ci * plane_in..(ci + 1) * plane_in];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let mut acc = 0.0;
                    g.for_taps(ky, kx, |oy, iy, ox0, ox1, ix0| {
                        let grow = &go[oy * g.ow + ox0..oy * g.ow + ox1];
                        let xrow = &xin[iy * g.w..(iy + 1) * g.w];
                        if s == 1 {
                            acc += grow.iter().zip(&xrow[ix0..ix0 + grow.len()]).map(|(a, b)| a * b).sum::<f64>();
                        } else {
                            acc += grow.iter().enumerate().map(|(j, gv)| gv * xrow[ix0 + j * s]).sum::<f64>();
                        }
                    });
                    gw[((co * g.cin + ci) * g.kh + ky) * g.kw + kx] = acc;
                }
            }
        }
    }
    gw
}

struct Conv2dRule {
    geom: Geometry,
}

impl Backward for Conv2dRule {
    fn op(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, gout: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let g = &self.geom;
        let (x, wt) = (inputs[0].data(), inputs[1].data());
        let (in_len, out_len) = (g.cin * g.h * g.w, g.cout * g.oh * g.ow);
        let gx = needs[0].then(|| {
            let mut gx = vec![0.0; x.len()];
            parallel::for_each_chunk(&mut gx, in_len, |n, chunk| {
                input_grad_sample(g, &gout[n * out_len..(n + 1) * out_len], wt, chunk)
            });
            gx
        });
        let gw = needs[1].then(|| {
            let parts = parallel::map_range(g.n, |n| {
                weight_grad_sample(g, &gout[n * out_len..(n + 1) * out_len], &x[n * in_len..(n + 1) * in_len])
            });
            parallel::sum_in_order(parts, wt.len())
        });
        let mut grads = vec![gx, gw];
        if inputs.len() == 3 {
            grads.push(needs[2].then(|| {
                let plane = g.oh * g.ow;
                let mut gb = vec![0.0; g.cout];
                for n in 0..g.n {
                    for (co, b) in gb.iter_mut().enumerate() {
                        let start = n * out_len + co * plane;
                        *b += gout[start..start + plane].iter().sum::<f64>();
                    }
                }
                gb
            }));
        }
        grads
    }
}

struct CausalConv1dRule {
    k: usize,
}

impl Backward for CausalConv1dRule {
    fn op(&self) -> &'static str {
        "conv1d_causal"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, gout: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (x, wt) = (inputs[0], inputs[1].data());
        let (b, d, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let k = self.k;
        let mut gx = vec![0.0; x.numel()];
        let mut gw = vec![0.0; wt.len()];
        let mut gb = vec![0.0; d];
        for bi in 0..b {
            for di in 0..d {
                let row = (bi * d + di) * l;
                let xs = &x.data()[row..row + l];
                let gs = &gout[row..row + l];
                for t in 0..l {
                    let gv = gs[t];
                    gb[di] += gv;
                    for j in 0..k {
                        // output t reads input t + j - (k - 1)
                        if let Some(src) = (t + j).checked_sub(k - 1) {
                            gw[di * k + j] += gv * xs[src];
                            gx[row + src] += gv * wt[di * k + j];
                        }
                    }
                }
            }
        }
        vec![needs[0].then_some(gx), needs[1].then_some(gw), needs[2].then_some(gb)]
    }
}

impl Tape {
    /// Cross-correlation of `x: [N, C_in, H, W]` with `weight: [C_out, C_in, k, k]`
    /// and symmetric zero padding.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize, dilation: usize) -> Result<Var> {
        self.conv2d_with(x, weight, bias, Conv2dOptions::new(stride, padding, dilation))
    }

    /// General form of [`Tape::conv2d`]: rectangular kernels and per-axis padding.
    pub fn conv2d_with(&mut self, x: Var, weight: Var, bias: Option<Var>, opts: Conv2dOptions) -> Result<Var> {
        let g = Geometry::resolve(self.shape(x), self.shape(weight), opts)?;
        if let Some(b) = bias {
            if self.shape(b) != [g.cout] {
                return Err(Error::shape("conv2d", format!("bias shape {:?}, expected [{}]", self.shape(b), g.cout)));
            }
        }
        let (in_len, out_len) = (g.cin * g.h * g.w, g.cout * g.oh * g.ow);
        let mut out = vec![0.0; g.n * out_len];
        {
            let xd = self.value(x).data();
            let wd = self.value(weight).data();
            let bd = bias.map(|b| self.value(b).data());
            parallel::for_each_chunk(&mut out, out_len, |n, chunk| {
                forward_sample(&g, &xd[n * in_len..(n + 1) * in_len], wd, bd, chunk)
            });
        }
        let t = Tensor::from_parts(vec![g.n, g.cout, g.oh, g.ow], out);
        let mut parents = vec![x, weight];
        parents.extend(bias);
        self.push(t, &parents, Conv2dRule { geom: g })
    }

    /// Depthwise causal convolution of `x: [B, D, L]` with `weight: [D, 1, k]`:
    /// output position `t` sees inputs `t-k+1 ..= t` (zeros before the start).
    pub fn conv1d_causal(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(weight).to_vec();
        if xs.len() != 3 {
            return Err(Error::shape("conv1d_causal", format!("expected [B, D, L], got {xs:?}")));
        }
        if ws.len() != 3 || ws[0] != xs[1] || ws[1] != 1 {
            return Err(Error::shape("conv1d_causal", format!("weight {ws:?} incompatible with input {xs:?}")));
        }
        if self.shape(bias) != [xs[1]] {
            return Err(Error::shape("conv1d_causal", format!("bias shape {:?}", self.shape(bias))));
        }
        let k = ws[2];
        if k == 0 {
            return Err(Error::shape("conv1d_causal", "kernel width must be at least 1"));
        }
        let (b, d, l) = (xs[0], xs[1], xs[2]);
        let xd = self.value(x).data();
        let wd = self.value(weight).data();
        let bd = self.value(bias).data();
        let mut out = vec![0.0; xd.len()];
        for bi in 0..b {
            for di in 0..d {
                let row = (bi * d + di) * l;
                for t in 0..l {
                    let mut acc = bd[di];
                    for j in 0..k {
                        if let Some(src) = (t + j).checked_sub(k - 1) {
                            acc += wd[di * k + j] * xd[row + src];
                        }
                    }
                    out[row + t] = acc;
                }
            }
        }
        self.push(Tensor::from_parts(xs, out), &[x, weight, bias], CausalConv1dRule { k })
    }
}
