use super::{Backward, Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Above this input softplus returns its argument; the neglected term
/// `ln(1 + e^-x)` is below 1e-13.
pub const SOFTPLUS_LINEAR_ABOVE: f64 = 30.0;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn softplus(x: f64) -> f64 {
    if x > SOFTPLUS_LINEAR_ABOVE {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Activation {
    Sigmoid,
    Silu,
    Softplus,
    Relu,
}

impl Activation {
    fn forward(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Silu => silu(x),
            Activation::Softplus => softplus(x),
            Activation::Relu => relu(x),
        }
    }

    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Softplus => {
                if x > SOFTPLUS_LINEAR_ABOVE {
                    1.0
                } else {
                    sigmoid(x)
                }
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

struct ActivationRule(Activation);

impl Backward for ActivationRule {
    fn op(&self) -> &'static str {
        match self.0 {
            Activation::Sigmoid => "sigmoid",
            Activation::Silu => "silu",
            Activation::Softplus => "softplus",
            Activation::Relu => "relu",
        }
    }

    fn backward(&self, inputs: &[&Tensor], out: &Tensor, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let grad = g
            .iter()
            .zip(inputs[0].data())
            .zip(out.data())
            .map(|((g, &x), &y)| g * self.0.derivative(x, y))
            .collect();
        vec![Some(grad)]
    }
}

impl Tape {
    fn activation(&mut self, a: Var, act: Activation) -> Result<Var> {
        let v = self.value(a);
        let out = v.data().iter().map(|&x| act.forward(x)).collect();
        let t = Tensor::from_parts(v.shape().to_vec(), out);
        self.push(t, &[a], ActivationRule(act))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Sigmoid)
    }

    pub fn silu(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Silu)
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Softplus)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Relu)
    }
}
