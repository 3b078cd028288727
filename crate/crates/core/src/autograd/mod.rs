//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every differentiable operation is a method on [`Tape`] that computes its
//! forward value eagerly and records a [`Backward`] rule. Nodes are appended in
//! execution order, so the tape is topologically sorted by construction and
//! [`Tape::backward`] walks it once in reverse.

pub mod activation;
mod conv;
mod elementwise;
mod linear;
mod loss;
mod norm;
mod pool;
mod shape;

pub use conv::{conv_out_extent, Conv2dOptions};
pub use loss::BCE_CLAMP;
pub use norm::BatchStats;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Gradient rule for one recorded operation.
pub trait Backward {
    /// Stable operation tag, used in reports and by the perturbation hook.
    fn op(&self) -> &'static str;

    /// Returns one gradient buffer per parent, in parent order. Parents whose
    /// `needs` flag is false may be answered with `None`.
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad_out: &[f64],
        needs: &[bool],
    ) -> Vec<Option<Vec<f64>>>;
}

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    rule: Option<Box<dyn Backward>>,
    requires_grad: bool,
    leaf: bool,
    grad: Option<Vec<f64>>,
}

/// Wengert list of tensor operations.
pub struct Tape {
    nodes: Vec<Node>,
    grad_enabled: bool,
    perturb: Option<(String, f64)>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), grad_enabled: true, perturb: None }
    }

    /// A tape that records values only; no backward rules are kept.
    pub fn inference() -> Self {
        Tape { nodes: Vec::new(), grad_enabled: false, perturb: None }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Test hook: scales every gradient emitted by operations tagged `op`.
    pub fn perturb_backward(&mut self, op: &str, factor: f64) {
        self.perturb = Some((op.to_string(), factor));
    }

    /// Registers a leaf. Leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        let requires_grad = requires_grad && self.grad_enabled;
        self.nodes.push(Node {
            value,
            parents: Vec::new(),
            rule: None,
            requires_grad,
            leaf: true,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, shaped like its value.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::from_parts(node.value.shape().to_vec(), g.clone()))
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// Appends an operation result. Rejects non-finite outputs.
    pub(crate) fn push(&mut self, value: Tensor, parents: &[Var], rule: impl Backward + 'static) -> Result<Var> {
        if !value.is_finite() {
            let bad = value.data().iter().position(|v| !v.is_finite()).unwrap_or(0);
            return Err(Error::NonFinite {
                op: rule.op(),
                detail: Some(format!("element {bad} of shape {:?}", value.shape())),
            });
        }
        let requires_grad = self.grad_enabled && parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            parents: parents.iter().map(|p| p.0).collect(),
            rule: if requires_grad { Some(Box::new(rule)) } else { None },
            requires_grad,
            leaf: false,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Propagates d(loss)/d(leaf) into every `requires_grad` leaf, adding to
    /// any gradient already present. Leaves the loss does not depend on end up
    /// with a zero gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be a scalar, got shape {:?}", self.nodes[loss.0].value.shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(rule) = node.rule.as_ref() else { continue };
            let Some(g) = grads[i].take() else { continue };
            let inputs: Vec<&Tensor> = node.parents.iter().map(|&p| &self.nodes[p].value).collect();
            let needs: Vec<bool> = node.parents.iter().map(|&p| self.nodes[p].requires_grad).collect();
            let mut parent_grads = rule.backward(&inputs, &node.value, &g, &needs);
            if let Some((op, factor)) = &self.perturb {
                if op == rule.op() {
                    for pg in parent_grads.iter_mut().flatten() {
                        pg.iter_mut().for_each(|v| *v *= factor);
                    }
                }
            }
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !self.nodes[p].requires_grad {
                    continue;
                }
                match &mut grads[p] {
                    Some(acc) => add_assign(acc, &pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }

        for (i, node) in self.nodes.iter_mut().enumerate() {
            if !(node.leaf && node.requires_grad) {
                continue;
            }
            let n = node.value.numel();
            let acc = node.grad.get_or_insert_with(|| vec![0.0; n]);
            if let Some(Some(g)) = grads.get(i) {
                add_assign(acc, g);
            }
        }
        Ok(())
    }
}

pub(crate) fn add_assign(acc: &mut [f64], g: &[f64]) {
    debug_assert_eq!(acc.len(), g.len());
    acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
}

pub(crate) fn check_same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, format!("operands have shapes {a:?} and {b:?}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient_is_twice_input() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::ones(vec![2]));
        let unused = tape.param(Tensor::ones(vec![4]));
        let loss = tape.sum(x).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(unused).unwrap().data(), &[0.0; 4]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::ones(vec![2]));
        let y = tape.scale(x, 2.0).unwrap();
        assert!(matches!(tape.backward(y), Err(Error::Shape { .. })));
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::new(vec![2], vec![0.3, -1.2]).unwrap());
        let s = tape.sigmoid(x).unwrap();
        let p = tape.mul(s, x).unwrap();
        let loss = tape.sum(p).unwrap();
        tape.backward(loss).unwrap();
        let once = tape.grad(x).unwrap();
        tape.backward(loss).unwrap();
        let twice = tape.grad(x).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert_eq!(2.0 * a, *b);
        }
        tape.zero_grad();
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn leaf_used_twice_accumulates_both_paths() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::new(vec![1], vec![3.0]).unwrap());
        let a = tape.scale(x, 2.0).unwrap();
        let b = tape.scale(x, 5.0).unwrap();
        let s = tape.add(a, b).unwrap();
        let loss = tape.sum(s).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[7.0]);
    }

    #[test]
    fn inference_tape_records_no_gradients() {
        let mut tape = Tape::inference();
        let x = tape.param(Tensor::ones(vec![2]));
        assert!(!tape.requires_grad(x));
        let y = tape.exp(x).unwrap();
        assert!(!tape.requires_grad(y));
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(vec![1], 800.0));
        assert!(matches!(tape.exp(x), Err(Error::NonFinite { op: "exp", .. })));
    }
}
