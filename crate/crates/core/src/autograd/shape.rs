use super::{Backward, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{strides, Tensor};

struct ReshapeRule;

impl Backward for ReshapeRule {
    fn op(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![Some(g.to_vec())]
    }
}

fn permute_data(data: &[f64], shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let gather: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let rank = shape.len();
    let mut out = Vec::with_capacity(data.len());
    let mut counter = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..data.len() {
        out.push(data[offset]);
        for ax in (0..rank).rev() {
            counter[ax] += 1;
            offset += gather[ax];
            if counter[ax] < out_shape[ax] {
                break;
            }
            offset -= gather[ax] * counter[ax];
            counter[ax] = 0;
        }
    }
    (out_shape, out)
}

struct PermuteRule {
    inverse: Vec<usize>,
}

impl Backward for PermuteRule {
    fn op(&self) -> &'static str {
        "permute"
    }

    fn backward(&self, _: &[&Tensor], out: &Tensor, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![Some(permute_data(g, out.shape(), &self.inverse).1)]
    }
}

/// (outer, extent, inner) decomposition of a shape around `axis`.
fn around(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn flip_data(data: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, n, inner) = around(shape, axis);
    let mut out = vec![0.0; data.len()];
    for o in 0..outer {
        for i in 0..n {
            let src = (o * n + i) * inner;
            let dst = (o * n + (n - 1 - i)) * inner;
            out[dst..dst + inner].copy_from_slice(&data[src..src + inner]);
        }
    }
    out
}

struct FlipRule {
    axis: usize,
}

impl Backward for FlipRule {
    fn op(&self) -> &'static str {
        "flip"
    }

    fn backward(&self, _: &[&Tensor], out: &Tensor, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![Some(flip_data(g, out.shape(), self.axis))]
    }
}

struct SliceRule {
    axis: usize,
    start: usize,
}

impl Backward for SliceRule {
    fn op(&self) -> &'static str {
        "split"
    }

    fn backward(&self, inputs: &[&Tensor], out: &Tensor, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (outer, n, inner) = around(inputs[0].shape(), self.axis);
        let width = out.shape()[self.axis] * inner;
        let mut full = vec![0.0; inputs[0].numel()];
        for o in 0..outer {
            let dst = (o * n + self.start) * inner;
            full[dst..dst + width].copy_from_slice(&g[o * width..(o + 1) * width]);
        }
        vec![Some(full)]
    }
}

struct ConcatRule {
    axis: usize,
}

impl Backward for ConcatRule {
    fn op(&self) -> &'static str {
        "concat"
    }

    fn backward(&self, inputs: &[&Tensor], out: &Tensor, g: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (outer, n, inner) = around(out.shape(), self.axis);
        let mut start = 0;
        let mut grads = Vec::with_capacity(inputs.len());
        for (t, &need) in inputs.iter().zip(needs) {
            let width = t.shape()[self.axis] * inner;
            if need {
                let mut piece = Vec::with_capacity(t.numel());
                for o in 0..outer {
                    let src = (o * n + start) * inner;
                    piece.extend_from_slice(&g[src..src + width]);
                }
                grads.push(Some(piece));
            } else {
                grads.push(None);
            }
            start += t.shape()[self.axis];
        }
        grads
    }
}

impl Tape {
    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        let v = self.value(a);
        if shape.iter().product::<usize>() != v.numel() {
            return Err(Error::shape("reshape", format!("cannot view {:?} as {shape:?}", v.shape())));
        }
        let t = Tensor::from_parts(shape, v.data().to_vec());
        self.push(t, &[a], ReshapeRule)
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let v = self.value(a);
        let rank = v.rank();
        let mut seen = vec![false; rank];
        let valid = axes.len() == rank && axes.iter().all(|&ax| ax < rank && !std::mem::replace(&mut seen[ax], true));
        if !valid {
            return Err(Error::shape("permute", format!("{axes:?} is not a permutation of rank {rank}")));
        }
        let (shape, data) = permute_data(v.data(), v.shape(), axes);
        let mut inverse = vec![0; rank];
        for (i, &ax) in axes.iter().enumerate() {
            inverse[ax] = i;
        }
        self.push(Tensor::from_parts(shape, data), &[a], PermuteRule { inverse })
    }

    /// Reverses the order of elements along `axis`.
    pub fn flip(&mut self, a: Var, axis: usize) -> Result<Var> {
        let v = self.value(a);
        if axis >= v.rank() {
            return Err(Error::shape("flip", format!("axis {axis} out of range for {:?}", v.shape())));
        }
        let t = Tensor::from_parts(v.shape().to_vec(), flip_data(v.data(), v.shape(), axis));
        self.push(t, &[a], FlipRule { axis })
    }

    /// Splits along `axis` into consecutive pieces of the given sizes.
    pub fn split_sizes(&mut self, a: Var, axis: usize, sizes: &[usize]) -> Result<Vec<Var>> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("split", format!("axis {axis} out of range for {shape:?}")));
        }
        if sizes.iter().sum::<usize>() != shape[axis] || sizes.contains(&0) {
            return Err(Error::shape("split", format!("sizes {sizes:?} do not partition extent {}", shape[axis])));
        }
        let (outer, n, inner) = around(&shape, axis);
        let mut pieces = Vec::with_capacity(sizes.len());
        let mut start = 0;
        for &size in sizes {
            let width = size * inner;
            let data = self.value(a).data();
            let mut buf = Vec::with_capacity(outer * width);
            for o in 0..outer {
                let src = (o * n + start) * inner;
                buf.extend_from_slice(&data[src..src + width]);
            }
            let mut piece_shape = shape.clone();
            piece_shape[axis] = size;
            pieces.push(self.push(Tensor::from_parts(piece_shape, buf), &[a], SliceRule { axis, start })?);
            start += size;
        }
        Ok(pieces)
    }

    /// Splits along `axis` into `parts` equal pieces.
    pub fn split(&mut self, a: Var, axis: usize, parts: usize) -> Result<Vec<Var>> {
        let shape = self.shape(a);
        if axis >= shape.len() || parts == 0 || shape[axis] % parts != 0 {
            return Err(Error::shape(
                "split",
                format!("cannot split {shape:?} into {parts} equal parts along axis {axis}"),
            ));
        }
        let size = shape[axis] / parts;
        self.split_sizes(a, axis, &vec![size; parts])
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::shape("concat", "no inputs"));
        };
        let mut shape = self.shape(first).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("concat", format!("axis {axis} out of range for {shape:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == shape.len()
                && s.iter().zip(&shape).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", format!("{s:?} incompatible with {shape:?} on axis {axis}")));
            }
            total += s[axis];
        }
        shape[axis] = total;
        let (outer, _, inner) = around(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let v = self.value(p);
                let width = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * width..(o + 1) * width]);
            }
        }
        self.push(Tensor::from_parts(shape, data), parts, ConcatRule { axis })
    }

    /// `[N, C, H, W]` split into `parts` channel groups.
    pub fn split_channels(&mut self, x: Var, parts: usize) -> Result<Vec<Var>> {
        if self.shape(x).len() != 4 {
            return Err(Error::shape("split_channels", format!("expected NCHW, got {:?}", self.shape(x))));
        }
        self.split(x, 1, parts)
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        self.concat(parts, 1)
    }
}
