use rand::Rng;

use super::scan::ScanMode;
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::Scope;
use crate::tensor::Tensor;

/// Range from which initial step sizes are drawn (log-uniformly).
pub const DT_INIT_RANGE: (f64, f64) = (1e-3, 1e-1);

/// Dimensions of one gated selective-SSM block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SsmConfig {
    pub d_model: usize,
    pub expand: usize,
    pub d_state: usize,
    pub conv_k: usize,
    pub dt_rank: usize,
}

impl SsmConfig {
    /// `dt_rank = None` selects `ceil(d_model / 16)`.
    pub fn new(d_model: usize, d_state: usize, expand: usize, conv_k: usize, dt_rank: Option<usize>) -> Result<Self> {
        let cfg = SsmConfig {
            d_model,
            expand,
            d_state,
            conv_k,
            dt_rank: dt_rank.unwrap_or_else(|| d_model.div_ceil(16)),
        };
        if d_model == 0 || expand == 0 || d_state == 0 || conv_k == 0 || cfg.dt_rank == 0 {
            return Err(Error::InvalidArgument(format!("every SSM dimension must be positive: {cfg:?}")));
        }
        Ok(cfg)
    }

    pub fn d_inner(&self) -> usize {
        self.expand * self.d_model
    }

    /// Parameter count of one block.
    pub fn num_params(&self) -> usize {
        let (m, di, n, r) = (self.d_model, self.d_inner(), self.d_state, self.dt_rank);
        2 * di * m          // in_proj
            + di * self.conv_k + di // depthwise conv
            + di * (r + 2 * n)  // x_proj
            + r * di + di       // dt_proj
            + di * n            // a_log
            + di                // d_skip
            + m * di // out_proj
    }
}

/// Trainable tensors of one block.
#[derive(Clone, Debug, PartialEq)]
pub struct SsmParams {
    pub config: SsmConfig,
    /// `[2·d_inner, d_model]`: x-path rows first, then gate rows.
    pub in_proj: Tensor,
    /// `[d_inner, 1, conv_k]`
    pub conv_weight: Tensor,
    pub conv_bias: Tensor,
    /// `[dt_rank + 2·d_state, d_inner]` producing (Δ-low-rank, B, C).
    pub x_proj: Tensor,
    /// `[d_inner, dt_rank]`
    pub dt_proj_weight: Tensor,
    pub dt_proj_bias: Tensor,
    /// `[d_inner, d_state]`; `A = -exp(a_log)`.
    pub a_log: Tensor,
    pub d_skip: Tensor,
    /// `[d_model, d_inner]`
    pub out_proj: Tensor,
}

/// Inverse of softplus for positive `y`.
fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

impl SsmParams {
    pub fn init(config: SsmConfig, rng: &mut impl Rng) -> Self {
        let (m, di, n, r, k) = (config.d_model, config.d_inner(), config.d_state, config.dt_rank, config.conv_k);
        let uniform = |shape: Vec<usize>, fan_in: usize, rng: &mut dyn rand::RngCore| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let len: usize = shape.iter().product();
            let data = (0..len).map(|_| rng.random_range(-bound..bound)).collect();
            Tensor::from_parts(shape, data)
        };
        let (lo, hi) = (DT_INIT_RANGE.0.ln(), DT_INIT_RANGE.1.ln());
        let dt_bias = (0..di).map(|_| inverse_softplus(rng.random_range(lo..hi).exp())).collect();
        let a_log = (0..di).flat_map(|_| (1..=n).map(|v| (v as f64).ln())).collect();
        SsmParams {
            config,
            in_proj: uniform(vec![2 * di, m], m, rng),
            conv_weight: uniform(vec![di, 1, k], k, rng),
            conv_bias: uniform(vec![di], k, rng),
            x_proj: uniform(vec![r + 2 * n, di], di, rng),
            dt_proj_weight: uniform(vec![di, r], r, rng),
            dt_proj_bias: Tensor::from_parts(vec![di], dt_bias),
            a_log: Tensor::from_parts(vec![di, n], a_log),
            d_skip: Tensor::ones(vec![di]),
            out_proj: uniform(vec![m, di], di, rng),
        }
    }

    /// `(name, tensor)` pairs under `prefix`, in a fixed order.
    pub fn named(&self, prefix: &str) -> Vec<(String, Tensor)> {
        [
            ("in_proj.weight", &self.in_proj),
            ("conv1d.weight", &self.conv_weight),
            ("conv1d.bias", &self.conv_bias),
            ("x_proj.weight", &self.x_proj),
            ("dt_proj.weight", &self.dt_proj_weight),
            ("dt_proj.bias", &self.dt_proj_bias),
            ("a_log", &self.a_log),
            ("d_skip", &self.d_skip),
            ("out_proj.weight", &self.out_proj),
        ]
        .into_iter()
        .map(|(n, t)| (format!("{prefix}.{n}"), t.clone()))
        .collect()
    }
}

/// Gated selective-SSM block on `x: [B, L, d_model]`:
///
/// 1. `(u, gate) = in_proj(x)`
/// 2. `u = silu(causal_depthwise_conv(u))`
/// 3. `(δ, B, C) = x_proj(u)`, `Δ = softplus(dt_proj(δ))`
/// 4. `y = scan(u, Δ, A, B, C, D)` with `A = -exp(a_log)`
/// 5. `out = out_proj(y ⊙ silu(gate))`
pub fn mamba_block(tape: &mut Tape, x: Var, p: &Scope, cfg: &SsmConfig, mode: ScanMode) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 3 || shape[2] != cfg.d_model {
        return Err(Error::shape("mamba_block", format!("expected [B, L, {}], got {shape:?}", cfg.d_model)));
    }
    let di = cfg.d_inner();
    let xz = tape.linear(x, p.get("in_proj.weight")?, None)?;
    let halves = tape.split_sizes(xz, 2, &[di, di])?;
    let (u, gate) = (halves[0], halves[1]);

    let u_t = tape.permute(u, &[0, 2, 1])?;
    let u_t = tape.conv1d_causal(u_t, p.get("conv1d.weight")?, p.get("conv1d.bias")?)?;
    let u = tape.permute(u_t, &[0, 2, 1])?;
    let u = tape.silu(u)?;

    let dbc = tape.linear(u, p.get("x_proj.weight")?, None)?;
    let parts = tape.split_sizes(dbc, 2, &[cfg.dt_rank, cfg.d_state, cfg.d_state])?;
    let (dt_low, b, c) = (parts[0], parts[1], parts[2]);
    let dt = tape.linear(dt_low, p.get("dt_proj.weight")?, Some(p.get("dt_proj.bias")?))?;
    let delta = tape.softplus(dt)?;

    let a = tape.exp(p.get("a_log")?)?;
    let a = tape.neg(a)?;
    let y = tape.selective_scan(u, delta, a, b, c, p.get("d_skip")?, mode)?;

    let gate = tape.silu(gate)?;
    let y = tape.mul(y, gate)?;
    tape.linear(y, p.get("out_proj.weight")?, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_dt_rank() {
        assert_eq!(SsmConfig::new(8, 16, 1, 4, None).unwrap().dt_rank, 1);
        assert_eq!(SsmConfig::new(33, 16, 1, 4, None).unwrap().dt_rank, 3);
        assert!(SsmConfig::new(8, 0, 1, 4, None).is_err());
    }

    #[test]
    fn param_count_matches_tensors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for cfg in [SsmConfig::new(8, 16, 1, 4, None).unwrap(), SsmConfig::new(6, 4, 2, 3, Some(2)).unwrap()] {
            let p = SsmParams::init(cfg, &mut rng);
            let total: usize = p.named("m").iter().map(|(_, t)| t.numel()).sum();
            assert_eq!(total, cfg.num_params());
        }
    }

    #[test]
    fn initial_step_sizes_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = SsmParams::init(SsmConfig::new(16, 8, 1, 3, None).unwrap(), &mut rng);
        for &b in p.dt_proj_bias.data() {
            let dt = crate::autograd::activation::softplus(b);
            assert!((DT_INIT_RANGE.0 - 1e-12..=DT_INIT_RANGE.1 + 1e-12).contains(&dt), "{dt}");
        }
        assert!((p.a_log.data()[1] - 2f64.ln()).abs() < 1e-15);
    }

    fn run_block(x: Tensor, params: &SsmParams) -> Tensor {
        let mut store = ParamStore::new();
        store.extend(params.named("blk")).unwrap();
        let mut tape = Tape::new();
        let b = store.bind(&mut tape, false);
        let xv = tape.constant(x);
        let y = mamba_block(&mut tape, xv, &b.scope("blk"), &params.config, ScanMode::Parallel).unwrap();
        tape.value(y).clone()
    }

    #[test]
    fn zero_input_zero_biases_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = SsmConfig::new(4, 4, 1, 3, None).unwrap();
        let mut p = SsmParams::init(cfg, &mut rng);
        p.conv_bias = Tensor::zeros(vec![4]);
        p.dt_proj_bias = Tensor::zeros(vec![4]);
        let y = run_block(Tensor::zeros(vec![2, 5, 4]), &p);
        assert!(y.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn shape_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (b, l, m) in [(1, 4, 2), (2, 49, 6), (1, 196, 8)] {
            let p = SsmParams::init(SsmConfig::new(m, 8, 1, 3, None).unwrap(), &mut rng);
            let y = run_block(Tensor::rand_uniform(vec![b, l, m], -1.0, 1.0, &mut rng), &p);
            assert_eq!(y.shape(), &[b, l, m]);
        }
    }
}
