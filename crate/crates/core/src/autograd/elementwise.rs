use super::{check_same_shape, Backward, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{strides, Tensor};

/// Walks the elements of `out_shape` in row-major order and yields the linear
/// index of the matching element in a tensor of `small_shape`, where each
/// extent of `small_shape` equals the output extent or 1.
struct BroadcastIndex {
    out_shape: Vec<usize>,
    small_strides: Vec<usize>,
    counter: Vec<usize>,
    offset: usize,
    remaining: usize,
}

impl BroadcastIndex {
    fn new(out_shape: &[usize], small_shape: &[usize]) -> Self {
        let st = strides(small_shape);
        let small_strides = small_shape
            .iter()
            .zip(st)
            .map(|(&d, s)| if d == 1 { 0 } else { s })
            .collect();
        BroadcastIndex {
            out_shape: out_shape.to_vec(),
            small_strides,
            counter: vec![0; out_shape.len()],
            offset: 0,
            remaining: out_shape.iter().product(),
        }
    }
}

impl Iterator for BroadcastIndex {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let current = self.offset;
        for axis in (0..self.out_shape.len()).rev() {
            self.counter[axis] += 1;
            self.offset += self.small_strides[axis];
            if self.counter[axis] < self.out_shape[axis] {
                break;
            }
            self.offset -= self.small_strides[axis] * self.counter[axis];
            self.counter[axis] = 0;
        }
        Some(current)
    }
}

fn check_broadcast(op: &'static str, big: &[usize], small: &[usize]) -> Result<()> {
    let ok = big.len() == small.len() && big.iter().zip(small).all(|(&b, &s)| s == b || s == 1);
    if !ok {
        return Err(Error::shape(op, format!("cannot broadcast {small:?} onto {big:?}")));
    }
    Ok(())
}

/// Sums `grad` (shaped `big`) down to the broadcast operand's shape.
fn reduce_to(grad: &[f64], big: &[usize], small: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; small.iter().product()];
    for (g, j) in grad.iter().zip(BroadcastIndex::new(big, small)) {
        out[j] += g;
    }
    out
}

struct AddRule;

impl Backward for AddRule {
    fn op(&self) -> &'static str {
        "add"
    }

    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        needs.iter().map(|&n| n.then(|| g.to_vec())).collect()
    }
}

struct SubRule;

impl Backward for SubRule {
    fn op(&self) -> &'static str {
        "sub"
    }

    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![
            needs[0].then(|| g.to_vec()),
            needs[1].then(|| g.iter().map(|v| -v).collect()),
        ]
    }
}

struct MulRule;

impl Backward for MulRule {
    fn op(&self) -> &'static str {
        "mul"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (a, b) = (inputs[0].data(), inputs[1].data());
        vec![
            needs[0].then(|| g.iter().zip(b).map(|(g, b)| g * b).collect()),
            needs[1].then(|| g.iter().zip(a).map(|(g, a)| g * a).collect()),
        ]
    }
}

struct AddBroadcastRule;

impl Backward for AddBroadcastRule {
    fn op(&self) -> &'static str {
        "add_broadcast"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![
            needs[0].then(|| g.to_vec()),
            needs[1].then(|| reduce_to(g, inputs[0].shape(), inputs[1].shape())),
        ]
    }
}

struct MulBroadcastRule;

impl Backward for MulBroadcastRule {
    fn op(&self) -> &'static str {
        "mul_broadcast"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (a, b) = (inputs[0], inputs[1]);
        let ga = needs[0].then(|| {
            g.iter()
                .zip(BroadcastIndex::new(a.shape(), b.shape()))
                .map(|(g, j)| g * b.data()[j])
                .collect()
        });
        let gb = needs[1].then(|| {
            let mut out = vec![0.0; b.numel()];
            for ((g, x), j) in g.iter().zip(a.data()).zip(BroadcastIndex::new(a.shape(), b.shape())) {
                out[j] += g * x;
            }
            out
        });
        vec![ga, gb]
    }
}

struct ScaleRule(f64);

impl Backward for ScaleRule {
    fn op(&self) -> &'static str {
        "scale"
    }

    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![Some(g.iter().map(|v| v * self.0).collect())]
    }
}

struct ExpRule;

impl Backward for ExpRule {
    fn op(&self) -> &'static str {
        "exp"
    }

    fn backward(&self, _: &[&Tensor], out: &Tensor, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![Some(g.iter().zip(out.data()).map(|(g, y)| g * y).collect())]
    }
}

struct SumRule {
    scale: f64,
}

impl Backward for SumRule {
    fn op(&self) -> &'static str {
        if self.scale == 1.0 {
            "sum"
        } else {
            "mean"
        }
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![Some(vec![g[0] * self.scale; inputs[0].numel()])]
    }
}

impl Tape {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same_shape("add", self.shape(a), self.shape(b))?;
        let out: Vec<f64> = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        let t = Tensor::from_parts(self.shape(a).to_vec(), out);
        self.push(t, &[a, b], AddRule)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same_shape("sub", self.shape(a), self.shape(b))?;
        let out: Vec<f64> = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x - y).collect();
        let t = Tensor::from_parts(self.shape(a).to_vec(), out);
        self.push(t, &[a, b], SubRule)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same_shape("mul", self.shape(a), self.shape(b))?;
        let out: Vec<f64> = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        let t = Tensor::from_parts(self.shape(a).to_vec(), out);
        self.push(t, &[a, b], MulRule)
    }

    /// `a + b` where `b` has the same rank as `a` and extents equal or 1.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        check_broadcast("add_broadcast", self.shape(a), self.shape(b))?;
        let (av, bv) = (self.value(a), self.value(b));
        let out = av
            .data()
            .iter()
            .zip(BroadcastIndex::new(av.shape(), bv.shape()))
            .map(|(x, j)| x + bv.data()[j])
            .collect();
        let t = Tensor::from_parts(av.shape().to_vec(), out);
        self.push(t, &[a, b], AddBroadcastRule)
    }

    /// `a * b` where `b` has the same rank as `a` and extents equal or 1.
    pub fn mul_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        check_broadcast("mul_broadcast", self.shape(a), self.shape(b))?;
        let (av, bv) = (self.value(a), self.value(b));
        let out = av
            .data()
            .iter()
            .zip(BroadcastIndex::new(av.shape(), bv.shape()))
            .map(|(x, j)| x * bv.data()[j])
            .collect();
        let t = Tensor::from_parts(av.shape().to_vec(), out);
        self.push(t, &[a, b], MulBroadcastRule)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let v = self.value(a);
        let t = Tensor::from_parts(v.shape().to_vec(), v.data().iter().map(|x| x * factor).collect());
        self.push(t, &[a], ScaleRule(factor))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let t = Tensor::from_parts(v.shape().to_vec(), v.data().iter().map(|x| x.exp()).collect());
        self.push(t, &[a], ExpRule)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), &[a], SumRule { scale: 1.0 })
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let n = v.numel() as f64;
        let s: f64 = v.data().iter().sum::<f64>() / n;
        self.push(Tensor::scalar(s), &[a], SumRule { scale: 1.0 / n })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_index_walks_per_channel() {
        let idx: Vec<usize> = BroadcastIndex::new(&[2, 3, 2], &[1, 3, 1]).collect();
        assert_eq!(idx, vec![0, 0, 1, 1, 2, 2, 0, 0, 1, 1, 2, 2]);
        let idx: Vec<usize> = BroadcastIndex::new(&[2, 2, 2], &[2, 1, 2]).collect();
        assert_eq!(idx, vec![0, 1, 0, 1, 2, 3, 2, 3]);
    }

    #[test]
    fn mul_broadcast_reduces_gradient() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = tape.param(Tensor::new(vec![1, 2, 1], vec![10.0, 100.0]).unwrap());
        let y = tape.mul_broadcast(a, b).unwrap();
        assert_eq!(tape.value(y).data(), &[10.0, 20.0, 300.0, 400.0]);
        let l = tape.sum(y).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(b).unwrap().data(), &[3.0, 7.0]);
        assert_eq!(tape.grad(a).unwrap().data(), &[10.0, 10.0, 100.0, 100.0]);
    }

    #[test]
    fn broadcast_shape_mismatch_rejected() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::zeros(vec![2, 3]));
        let b = tape.param(Tensor::zeros(vec![2, 2]));
        assert!(tape.add_broadcast(a, b).is_err());
        assert!(tape.add(a, b).is_err());
    }
}
