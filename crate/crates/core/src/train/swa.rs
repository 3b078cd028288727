use crate::arch::{Mode, Model};
use crate::autograd::Tape;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Running arithmetic mean of weight snapshots.
#[derive(Clone, Debug, PartialEq)]
pub struct SwaState {
    pub shadow: ParamStore,
    pub n_snapshots: usize,
    pub start_epoch: usize,
}

impl SwaState {
    pub fn new(start_epoch: usize) -> Self {
        SwaState { shadow: ParamStore::new(), n_snapshots: 0, start_epoch }
    }

    /// `shadow ← (shadow·n + w) / (n + 1)`.
    pub fn update(&mut self, weights: &ParamStore) -> Result<()> {
        if self.n_snapshots == 0 {
            self.shadow = weights.clone();
            self.n_snapshots = 1;
            return Ok(());
        }
        let n = self.n_snapshots as f64;
        for (name, w) in weights.iter() {
            let s = self
                .shadow
                .get_mut(name)
                .ok_or_else(|| Error::InvalidArgument(format!("snapshot has unexpected tensor {name}")))?;
            if s.shape() != w.shape() {
                return Err(Error::shape("swa_update", format!("{name}: {:?} vs {:?}", w.shape(), s.shape())));
            }
            for (sv, wv) in s.data_mut().iter_mut().zip(w.data()) {
                *sv = (*sv * n + wv) / (n + 1.0);
            }
        }
        self.n_snapshots += 1;
        Ok(())
    }

    /// The averaged model, with batch-norm running statistics recomputed by
    /// one pass over `batches` (equal weight per batch).
    pub fn finalize(&self, template: &Model, batches: impl IntoIterator<Item = Result<Tensor>>) -> Result<Model> {
        if self.n_snapshots == 0 {
            return Err(Error::InvalidArgument("no SWA snapshots were absorbed".into()));
        }
        let mut model = template.clone();
        model.params = self.shadow.clone();
        let mut means: Vec<Vec<f64>> = Vec::new();
        let mut vars: Vec<Vec<f64>> = Vec::new();
        let mut seen = 0usize;
        for batch in batches {
            let x = batch?;
            let mut tape = Tape::inference();
            let bound = model.params.bind(&mut tape, false);
            let input = tape.constant(x);
            let out = model.forward(&mut tape, &bound, input, Mode::Train)?;
            if means.is_empty() {
                means = out.bn_stats.iter().map(|s| vec![0.0; s.mean.len()]).collect();
                vars = means.clone();
            }
            seen += 1;
            let w = 1.0 / seen as f64;
            for (i, s) in out.bn_stats.iter().enumerate() {
                let unbias = if s.count > 1 { s.count as f64 / (s.count - 1) as f64 } else { 1.0 };
                for (m, v) in means[i].iter_mut().zip(&s.mean) {
                    *m += (v - *m) * w;
                }
                for (m, v) in vars[i].iter_mut().zip(&s.var) {
                    *m += (v * unbias - *m) * w;
                }
            }
        }
        if seen == 0 {
            return Err(Error::InvalidArgument("no batches to recompute batch-norm statistics".into()));
        }
        model.set_running_stats(&means, &vars)?;
        Ok(model)
    }
}
