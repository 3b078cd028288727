use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Heavy-ball SGD state: one velocity buffer per trainable tensor when
/// momentum is non-zero.
#[derive(Clone, Debug, PartialEq)]
pub struct SgdState {
    pub momentum: f64,
    pub lr: f64,
    pub velocity: ParamStore,
}

impl SgdState {
    pub fn new(params: &ParamStore, momentum: f64, lr: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) || !(lr >= 0.0) {
            return Err(Error::InvalidArgument(format!("momentum {momentum} and lr {lr} out of range")));
        }
        let mut velocity = ParamStore::new();
        if momentum > 0.0 {
            for (name, t) in params.iter() {
                velocity.insert(name, Tensor::zeros(t.shape().to_vec()))?;
            }
        }
        Ok(SgdState { momentum, lr, velocity })
    }
}

/// `v ← μ·v + g; w ← w − lr·v` (plain `w ← w − lr·g` when μ = 0).
pub fn sgd_momentum_step(params: &mut ParamStore, grads: &ParamStore, state: &mut SgdState) -> Result<()> {
    let (mu, lr) = (state.momentum, state.lr);
    for (name, w) in params.iter_mut() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("no gradient for {name}")))?;
        if g.shape() != w.shape() {
            return Err(Error::shape("sgd_momentum_step", format!("{name}: grad {:?} vs {:?}", g.shape(), w.shape())));
        }
        if mu == 0.0 {
            for (wv, gv) in w.data_mut().iter_mut().zip(g.data()) {
                *wv -= lr * gv;
            }
            continue;
        }
        let v = state
            .velocity
            .get_mut(name)
            .ok_or_else(|| Error::InvalidArgument(format!("no velocity for {name}")))?;
        for ((wv, vv), gv) in w.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *vv = mu * *vv + gv;
            *wv -= lr * *vv;
        }
    }
    Ok(())
}
