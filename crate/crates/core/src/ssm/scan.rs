//! Selective state-space scans.
//!
//! For every batch element `b`, channel `d` and state index `n` the recurrence
//!
//! ```text
//! h[t] = exp(Δ[t,d]·A[d,n]) · h[t-1] + Δ[t,d]·B[t,n]·x[t,d],   h[-1] = 0
//! y[t,d] = Σ_n C[t,n]·h[t,n] + D[d]·x[t,d]
//! ```
//!
//! is evaluated either step by step or as a chunked Blelloch scan over the
//! affine maps `h ↦ a·h + b`.

use crate::autograd::{Backward, Tape, Var};
use crate::error::{Error, Result};
use crate::parallel;
use crate::tensor::Tensor;

/// Sequence length handled by one Blelloch tree; chunks are chained
/// sequentially through their final state.
pub const SCAN_CHUNK: usize = 64;

/// Which evaluation strategy the scan uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ScanMode {
    Sequential,
    #[default]
    Parallel,
}

/// Per-timestep inputs of a selective scan.
#[derive(Clone, Debug)]
pub struct ScanInputs {
    /// `[B, L, D]`
    pub x: Tensor,
    /// `[B, L, D]`, strictly positive.
    pub delta: Tensor,
    /// `[B, L, N]`
    pub b: Tensor,
    /// `[B, L, N]`
    pub c: Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Dims {
    batch: usize,
    len: usize,
    d: usize,
    n: usize,
}

fn dims(x: &[usize], delta: &[usize], a: &[usize], b: &[usize], c: &[usize], dskip: &[usize]) -> Result<Dims> {
    let err = |m: String| Err(Error::shape("selective_scan", m));
    let &[batch, len, d] = x else { return err(format!("x must be [B, L, D], got {x:?}")) };
    if delta != x {
        return err(format!("delta {delta:?} must match x {x:?}"));
    }
    let &[ad, n] = a else { return err(format!("A must be [D, N], got {a:?}")) };
    if ad != d {
        return err(format!("A has {ad} channels, x has {d}"));
    }
    if b != [batch, len, n] || c != [batch, len, n] {
        return err(format!("B {b:?} and C {c:?} must be [{batch}, {len}, {n}]"));
    }
    if dskip != [d] {
        return err(format!("D must be [{d}], got {dskip:?}"));
    }
    Ok(Dims { batch, len, d, n })
}

fn check_delta(delta: &[f64]) -> Result<()> {
    if let Some(bad) = delta.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::InvalidArgument(format!("step sizes must be positive, found {bad}")));
    }
    Ok(())
}

fn check_output(y: &[f64]) -> Result<()> {
    match y.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::NonFinite { op: "selective_scan", detail: Some(format!("output element {i}")) }),
    }
}

/// Zero-order-hold discretization of `A` and Euler discretization of `B`:
/// `A_bar = exp(Δ·A)` and `B_bar = Δ·B`, both shaped `[B, L, D, N]`.
pub fn discretize(delta: &Tensor, a: &Tensor, b: &Tensor) -> Result<(Tensor, Tensor)> {
    let ds = delta.shape();
    let (&[batch, len, d], &[ad, n]) = (ds, a.shape()) else {
        return Err(Error::shape("discretize", format!("delta {ds:?}, A {:?}", a.shape())));
    };
    if ad != d || b.shape() != [batch, len, n] {
        return Err(Error::shape("discretize", format!("delta {ds:?}, A {:?}, B {:?}", a.shape(), b.shape())));
    }
    check_delta(delta.data())?;
    let mut a_bar = Vec::with_capacity(batch * len * d * n);
    let mut b_bar = Vec::with_capacity(batch * len * d * n);
    for bt in 0..batch * len {
        for di in 0..d {
            let dt = delta.data()[bt * d + di];
            for ni in 0..n {
                a_bar.push((dt * a.data()[di * n + ni]).exp());
                b_bar.push(dt * b.data()[bt * n + ni]);
            }
        }
    }
    let shape = vec![batch, len, d, n];
    Ok((Tensor::from_parts(shape.clone(), a_bar), Tensor::from_parts(shape, b_bar)))
}

fn scan_sequential_raw(k: Dims, x: &[f64], delta: &[f64], a: &[f64], b: &[f64], c: &[f64], dskip: &[f64]) -> Vec<f64> {
    let Dims { batch, len, d, n } = k;
    let mut y = vec![0.0; batch * len * d];
    let mut h = vec![0.0; d * n];
    for bi in 0..batch {
        h.fill(0.0);
        for t in 0..len {
            let row = (bi * len + t) * d;
            let bc = (bi * len + t) * n;
            for di in 0..d {
                let (xv, dt) = (x[row + di], delta[row + di]);
                let mut acc = 0.0;
                for ni in 0..n {
                    let a_bar = (dt * a[di * n + ni]).exp();
                    let hv = &mut h[di * n + ni];
                    *hv = a_bar * *hv + dt * b[bc + ni] * xv;
                    acc += c[bc + ni] * *hv;
                }
                y[row + di] = acc + dskip[di] * xv;
            }
        }
    }
    y
}

/// Affine map `h ↦ a·h + b`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Affine {
    a: f64,
    b: f64,
}

impl Affine {
    const IDENTITY: Affine = Affine { a: 1.0, b: 0.0 };

    /// Composition applying `self` first, then `later`.
    #[inline]
    fn then(self, later: Affine) -> Affine {
        Affine { a: later.a * self.a, b: later.a * self.b + later.b }
    }
}

/// In-place exclusive Blelloch scan; `buf.len()` must be a power of two.
fn blelloch_exclusive(buf: &mut [Affine]) {
    let size = buf.len();
    let mut stride = 1;
    while stride < size {
        for right in (2 * stride - 1..size).step_by(2 * stride) {
            buf[right] = buf[right - stride].then(buf[right]);
        }
        stride *= 2;
    }
    buf[size - 1] = Affine::IDENTITY;
    stride = size / 2;
    while stride >= 1 {
        for right in (2 * stride - 1..size).step_by(2 * stride) {
            let left = right - stride;
            let left_sum = buf[left];
            buf[left] = buf[right];
            buf[right] = buf[right].then(left_sum);
        }
        stride /= 2;
    }
}

/// Outputs of one (batch, channel) lane, computed chunk by chunk.
#[allow(clippy::too_many_arguments)]
fn scan_lane_parallel(k: Dims, bi: usize, di: usize, x: &[f64], delta: &[f64], a: &[f64], b: &[f64], c: &[f64], dskip: f64) -> Vec<f64> {
    let Dims { len, d, n, .. } = k;
    let mut y = vec![0.0; len];
    let mut carry = vec![0.0; n];
    let mut tree = vec![Affine::IDENTITY; SCAN_CHUNK];
    let mut elems = vec![Affine::IDENTITY; SCAN_CHUNK];
    for start in (0..len).step_by(SCAN_CHUNK) {
        let width = SCAN_CHUNK.min(len - start);
        let padded = width.next_power_of_two();
        for ni in 0..n {
            for i in 0..width {
                let t = start + i;
                let row = (bi * len + t) * d + di;
                let dt = delta[row];
                elems[i] = Affine { a: (dt * a[di * n + ni]).exp(), b: dt * b[(bi * len + t) * n + ni] * x[row] };
            }
            tree[..width].copy_from_slice(&elems[..width]);
            tree[width..padded].fill(Affine::IDENTITY);
            blelloch_exclusive(&mut tree[..padded]);
            for i in 0..width {
                let t = start + i;
                let prefix = tree[i].then(elems[i]);
                let h = prefix.a * carry[ni] + prefix.b;
                y[t] += c[(bi * len + t) * n + ni] * h;
                if i + 1 == width {
                    carry[ni] = h;
                }
            }
        }
    }
    for (t, yv) in y.iter_mut().enumerate() {
        *yv += dskip * x[(bi * len + t) * d + di];
    }
    y
}

fn scan_parallel_raw(k: Dims, x: &[f64], delta: &[f64], a: &[f64], b: &[f64], c: &[f64], dskip: &[f64]) -> Vec<f64> {
    let Dims { batch, len, d, .. } = k;
    let lanes = parallel::map_range(batch * d, |lane| {
        let (bi, di) = (lane / d, lane % d);
        scan_lane_parallel(k, bi, di, x, delta, a, b, c, dskip[di])
    });
    let mut y = vec![0.0; batch * len * d];
    for (lane, ys) in lanes.into_iter().enumerate() {
        let (bi, di) = (lane / d, lane % d);
        for (t, v) in ys.into_iter().enumerate() {
            y[(bi * len + t) * d + di] = v;
        }
    }
    y
}

fn run_scan(mode: ScanMode, inputs: &ScanInputs, a: &Tensor, dskip: &Tensor) -> Result<Tensor> {
    let k = dims(inputs.x.shape(), inputs.delta.shape(), a.shape(), inputs.b.shape(), inputs.c.shape(), dskip.shape())?;
    check_delta(inputs.delta.data())?;
    let args = (inputs.x.data(), inputs.delta.data(), a.data(), inputs.b.data(), inputs.c.data(), dskip.data());
    let y = match mode {
        ScanMode::Sequential => scan_sequential_raw(k, args.0, args.1, args.2, args.3, args.4, args.5),
        ScanMode::Parallel => scan_parallel_raw(k, args.0, args.1, args.2, args.3, args.4, args.5),
    };
    check_output(&y)?;
    Ok(Tensor::from_parts(inputs.x.shape().to_vec(), y))
}

/// Step-by-step evaluation with `O(D·N)` working state.
pub fn selective_scan_sequential(inputs: &ScanInputs, a: &Tensor, dskip: &Tensor) -> Result<Tensor> {
    run_scan(ScanMode::Sequential, inputs, a, dskip)
}

/// Chunked Blelloch evaluation; agrees with the sequential scan up to
/// floating-point reassociation.
pub fn selective_scan_parallel(inputs: &ScanInputs, a: &Tensor, dskip: &Tensor) -> Result<Tensor> {
    run_scan(ScanMode::Parallel, inputs, a, dskip)
}

struct ScanRule {
    dims: Dims,
}

impl Backward for ScanRule {
    fn op(&self) -> &'static str {
        "selective_scan"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, gy: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let Dims { batch, len, d, n } = self.dims;
        let [x, delta, a, b, c, dskip] = [0, 1, 2, 3, 4, 5].map(|i| inputs[i].data());
        let mut gx = vec![0.0; x.len()];
        let mut gdelta = vec![0.0; x.len()];
        let mut ga = vec![0.0; a.len()];
        let mut gb = vec![0.0; b.len()];
        let mut gc = vec![0.0; c.len()];
        let mut gdskip = vec![0.0; d];
        // states of one lane, recomputed forward before the reverse sweep
        let mut hs = vec![0.0; len * n];
        let mut dh = vec![0.0; n];
        for bi in 0..batch {
            for di in 0..d {
                let mut prev = vec![0.0; n];
                for t in 0..len {
                    let row = (bi * len + t) * d + di;
                    let bc = (bi * len + t) * n;
                    for ni in 0..n {
                        let a_bar = (delta[row] * a[di * n + ni]).exp();
                        let h = a_bar * prev[ni] + delta[row] * b[bc + ni] * x[row];
                        hs[t * n + ni] = h;
                        prev[ni] = h;
                    }
                }
                dh.fill(0.0);
                for t in (0..len).rev() {
                    let row = (bi * len + t) * d + di;
                    let bc = (bi * len + t) * n;
                    let (g, xv, dt) = (gy[row], x[row], delta[row]);
                    gdskip[di] += g * xv;
                    gx[row] += g * dskip[di];
                    for ni in 0..n {
                        let av = a[di * n + ni];
                        let a_bar = (dt * av).exp();
                        let h = hs[t * n + ni];
                        let h_prev = if t > 0 { hs[(t - 1) * n + ni] } else { 0.0 };
                        gc[bc + ni] += g * h;
                        dh[ni] += c[bc + ni] * g;
                        let dhv = dh[ni];
                        gdelta[row] += dhv * (av * a_bar * h_prev + b[bc + ni] * xv);
                        ga[di * n + ni] += dhv * dt * a_bar * h_prev;
                        gb[bc + ni] += dhv * dt * xv;
                        gx[row] += dhv * dt * b[bc + ni];
                        dh[ni] = dhv * a_bar;
                    }
                }
            }
        }
        [gx, gdelta, ga, gb, gc, gdskip]
            .into_iter()
            .zip(needs)
            .map(|(g, &need)| need.then_some(g))
            .collect()
    }
}

impl Tape {
    /// Differentiable selective scan.
    ///
    /// Shapes: `x, delta: [B, L, D]`, `a: [D, N]`, `b, c: [B, L, N]`,
    /// `dskip: [D]`. The backward pass recomputes hidden states rather than
    /// storing them.
    #[allow(clippy::too_many_arguments)]
    pub fn selective_scan(&mut self, x: Var, delta: Var, a: Var, b: Var, c: Var, dskip: Var, mode: ScanMode) -> Result<Var> {
        let inputs = ScanInputs {
            x: self.value(x).clone(),
            delta: self.value(delta).clone(),
            b: self.value(b).clone(),
            c: self.value(c).clone(),
        };
        let k = dims(
            inputs.x.shape(),
            inputs.delta.shape(),
            self.shape(a),
            inputs.b.shape(),
            inputs.c.shape(),
            self.shape(dskip),
        )?;
        let y = run_scan(mode, &inputs, self.value(a), self.value(dskip))?;
        self.push(y, &[x, delta, a, b, c, dskip], ScanRule { dims: k })
    }
}
