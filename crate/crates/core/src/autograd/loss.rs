use super::{Backward, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const BCE_CLAMP: f64 = 1e-7;

struct BceRule {
    labels: Vec<f64>,
}

impl Backward for BceRule {
    fn op(&self) -> &'static str {
        "bce"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let n = self.labels.len() as f64;
        let grad = inputs[0]
            .data()
            .iter()
            .zip(&self.labels)
            .map(|(&p, &y)| {
                if p < BCE_CLAMP || p > 1.0 - BCE_CLAMP {
                    0.0
                } else {
                    g[0] * (p - y) / (p * (1.0 - p)) / n
                }
            })
            .collect();
        vec![Some(grad)]
    }
}

impl Tape {
    /// Mean binary cross-entropy of `probs: [N]` against 0/1 `labels`.
    pub fn bce_loss(&mut self, probs: Var, labels: &[f64]) -> Result<Var> {
        let p = self.value(probs);
        if p.numel() != labels.len() {
            return Err(Error::shape("bce", format!("{} probabilities vs {} labels", p.numel(), labels.len())));
        }
        if let Some(bad) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(Error::InvalidArgument(format!("label {bad} is not 0 or 1")));
        }
        let n = labels.len() as f64;
        let loss = p
            .data()
            .iter()
            .zip(labels)
            .map(|(&p, &y)| {
                let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum::<f64>()
            / n;
        self.push(Tensor::scalar(loss), &[probs], BceRule { labels: labels.to_vec() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_probability_costs_ln2() {
        for y in [0.0, 1.0] {
            let mut tape = Tape::new();
            let p = tape.constant(Tensor::new(vec![1], vec![0.5]).unwrap());
            let l = tape.bce_loss(p, &[y]).unwrap();
            assert!((tape.value(l).item().unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn exact_predictions_cost_almost_nothing() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::new(vec![2], vec![1.0, 0.0]).unwrap());
        let l = tape.bce_loss(p, &[1.0, 0.0]).unwrap();
        let v = tape.value(l).item().unwrap();
        assert!(v >= 0.0 && v < 2e-7, "{v}");
    }

    #[test]
    fn rejects_bad_labels() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::new(vec![1], vec![0.5]).unwrap());
        assert!(tape.bce_loss(p, &[0.5]).is_err());
        assert!(tape.bce_loss(p, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn logit_gradient_is_p_minus_y_over_n() {
        let logits = [0.3, -1.7, 2.2, 0.0];
        let labels = [1.0, 0.0, 0.0, 1.0];
        let mut tape = Tape::new();
        let z = tape.param(Tensor::new(vec![4], logits.to_vec()).unwrap());
        let p = tape.sigmoid(z).unwrap();
        let l = tape.bce_loss(p, &labels).unwrap();
        tape.backward(l).unwrap();
        let g = tape.grad(z).unwrap();
        for i in 0..4 {
            let pi = super::super::activation::sigmoid(logits[i]);
            assert!((g.data()[i] - (pi - labels[i]) / 4.0).abs() < 1e-10);
        }
    }
}
