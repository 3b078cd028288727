use super::{Backward, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

struct LinearRule {
    rows: usize,
    fin: usize,
    fout: usize,
}

impl Backward for LinearRule {
    fn op(&self) -> &'static str {
        "linear"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (x, w) = (inputs[0].data(), inputs[1].data());
        let (rows, fin, fout) = (self.rows, self.fin, self.fout);
        let gx = needs[0].then(|| {
            let mut gx = vec![0.0; rows * fin];
            for m in 0..rows {
                let gxr = &mut gx[m * fin..(m + 1) * fin];
                for o in 0..fout {
                    let gv = g[m * fout + o];
                    let wr = &w[o * fin..(o + 1) * fin];
                    gxr.iter_mut().zip(wr).for_each(|(a, b)| *a += gv * b);
                }
            }
            gx
        });
        let gw = needs[1].then(|| {
            let mut gw = vec![0.0; fout * fin];
            for m in 0..rows {
                let xr = &x[m * fin..(m + 1) * fin];
                for o in 0..fout {
                    let gv = g[m * fout + o];
                    let gwr = &mut gw[o * fin..(o + 1) * fin];
                    gwr.iter_mut().zip(xr).for_each(|(a, b)| *a += gv * b);
                }
            }
            gw
        });
        let mut grads = vec![gx, gw];
        if inputs.len() == 3 {
            grads.push(needs[2].then(|| {
                let mut gb = vec![0.0; fout];
                for m in 0..rows {
                    gb.iter_mut().zip(&g[m * fout..(m + 1) * fout]).for_each(|(a, b)| *a += b);
                }
                gb
            }));
        }
        grads
    }
}

impl Tape {
    /// `y = x · Wᵀ + b` over the last axis of `x`, with `weight: [F_out, F_in]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(weight);
        let fin = *xs.last().ok_or_else(|| Error::shape("linear", "scalar input"))?;
        if ws.len() != 2 || ws[1] != fin {
            return Err(Error::shape("linear", format!("weight {ws:?} cannot take input features {fin}")));
        }
        let fout = ws[0];
        if let Some(b) = bias {
            if self.shape(b) != [fout] {
                return Err(Error::shape("linear", format!("bias shape {:?}, expected [{fout}]", self.shape(b))));
            }
        }
        let rows = xs.iter().product::<usize>() / fin;
        let xd = self.value(x).data();
        let wd = self.value(weight).data();
        let bd = bias.map(|b| self.value(b).data());
        let mut out = vec![0.0; rows * fout];
        for m in 0..rows {
            let xr = &xd[m * fin..(m + 1) * fin];
            for o in 0..fout {
                let wr = &wd[o * fin..(o + 1) * fin];
                let dot: f64 = xr.iter().zip(wr).map(|(a, b)| a * b).sum();
                out[m * fout + o] = dot + bd.map_or(0.0, |b| b[o]);
            }
        }
        let mut shape = xs;
        *shape.last_mut().unwrap() = fout;
        let mut parents = vec![x, weight];
        parents.extend(bias);
        self.push(Tensor::from_parts(shape, out), &parents, LinearRule { rows, fin, fout })
    }
}
