mod common;

use common::{max_diff, rand_tensor, rng};
use proptest::prelude::*;
use rand::Rng;
use ulmv_core::params::ParamStore;
use ulmv_core::ssm::{
    discretize, mamba_block, selective_scan_parallel, selective_scan_sequential, ScanInputs, ScanMode, SsmConfig, SsmParams,
};
use ulmv_core::{Tape, Tensor};

fn random_case(batch: usize, len: usize, d: usize, n: usize, seed: u64) -> (ScanInputs, Tensor, Tensor) {
    let mut r = rng(seed);
    let inputs = ScanInputs {
        x: Tensor::rand_uniform(vec![batch, len, d], -1.0, 1.0, &mut r),
        delta: Tensor::rand_uniform(vec![batch, len, d], 0.01, 1.0, &mut r),
        b: Tensor::rand_uniform(vec![batch, len, n], -1.0, 1.0, &mut r),
        c: Tensor::rand_uniform(vec![batch, len, n], -1.0, 1.0, &mut r),
    };
    let a = Tensor::rand_uniform(vec![d, n], -2.0, -0.05, &mut r);
    let dskip = Tensor::rand_uniform(vec![d], -1.0, 1.0, &mut r);
    (inputs, a, dskip)
}

#[test]
fn discretize_closed_form() {
    let t = |v: f64, s: &[usize]| Tensor::new(s.to_vec(), vec![v; s.iter().product()]).unwrap();
    let (ab, bb) = discretize(&t(0.5, &[1, 1, 1]), &t(-2.0, &[1, 1]), &t(3.0, &[1, 1, 1])).unwrap();
    assert!((ab.data()[0] - (-1f64).exp()).abs() < 1e-15);
    assert!((ab.data()[0] - 0.367879).abs() < 1e-6);
    assert_eq!(bb.data()[0], 1.5);
    let (ab, bb) = discretize(&t(1e-12, &[1, 2, 3]), &t(-2.0, &[3, 4]), &t(3.0, &[1, 2, 4])).unwrap();
    assert_eq!(ab.shape(), [1, 2, 3, 4]);
    assert!(ab.data().iter().all(|&v| (v - 1.0).abs() < 1e-11));
    assert!(bb.data().iter().all(|&v| v.abs() < 1e-11));
    let (ab, _) = discretize(&t(0.7, &[1, 1, 2]), &t(0.0, &[2, 2]), &t(1.0, &[1, 1, 2])).unwrap();
    assert!(ab.data().iter().all(|&v| v == 1.0));
    assert!(discretize(&t(0.0, &[1, 1, 1]), &t(-1.0, &[1, 1]), &t(1.0, &[1, 1, 1])).is_err());
}

#[test]
fn sequential_matches_unrolled_recurrence() {
    let (inputs, a, d) = random_case(2, 9, 3, 4, 1);
    let y = selective_scan_sequential(&inputs, &a, &d).unwrap();
    let (want, _) = common::scan_unrolled(&inputs.x, &inputs.delta, &a, &inputs.b, &inputs.c, &d);
    assert!(max_diff(y.data(), &want) < 1e-12);
}

#[test]
fn skip_only_path_when_b_is_zero() {
    let (mut inputs, a, d) = random_case(1, 12, 3, 4, 2);
    inputs.b = Tensor::zeros(inputs.b.shape().to_vec());
    for y in [selective_scan_sequential(&inputs, &a, &d).unwrap(), selective_scan_parallel(&inputs, &a, &d).unwrap()] {
        for (i, (&yv, &xv)) in y.data().iter().zip(inputs.x.data()).enumerate() {
            assert_eq!(yv, d.data()[i % 3] * xv);
        }
    }
}

#[test]
fn length_one_is_bit_exact() {
    let (inputs, a, d) = random_case(2, 1, 6, 8, 3);
    assert_eq!(selective_scan_sequential(&inputs, &a, &d).unwrap(), selective_scan_parallel(&inputs, &a, &d).unwrap());
}

#[test]
fn parallel_matches_sequential_at_chunk_edges() {
    for len in [63, 64, 65, 100, 128, 129, 4096] {
        let (inputs, a, d) = random_case(1, len, 2, 4, len as u64);
        let s = selective_scan_sequential(&inputs, &a, &d).unwrap();
        let p = selective_scan_parallel(&inputs, &a, &d).unwrap();
        assert!(max_diff(s.data(), p.data()) < 1e-10, "L={len}");
    }
}

#[test]
fn memoryless_when_decay_underflows() {
    let (inputs, _, d) = random_case(1, 20, 2, 3, 4);
    let a = Tensor::full(vec![2, 3], -1e5);
    let y = selective_scan_parallel(&inputs, &a, &d).unwrap();
    let (batch, len, dd, n) = (1, 20, 2, 3);
    for t in 0..len {
        for c in 0..dd {
            let i = (t * dd) + c;
            let dt = inputs.delta.data()[i];
            let mut want = d.data()[c] * inputs.x.data()[i];
            for s in 0..n {
                let h = dt * inputs.b.data()[t * n + s] * inputs.x.data()[i];
                want += inputs.c.data()[t * n + s] * h;
            }
            assert!((y.data()[i] - want).abs() < 1e-14, "t={t} c={c} batch={batch}");
        }
    }
}

#[test]
fn scan_is_causal() {
    let (inputs, a, d) = random_case(1, 30, 2, 3, 5);
    let base = selective_scan_parallel(&inputs, &a, &d).unwrap();
    let t0 = 17;
    let mut bumped = inputs.clone();
    bumped.x.data_mut()[t0 * 2] += 0.5;
    let after = selective_scan_parallel(&bumped, &a, &d).unwrap();
    for t in 0..30 {
        let same = base.data()[t * 2] == after.data()[t * 2];
        assert_eq!(same, t < t0, "t={t}");
    }
}

#[test]
fn long_sequences_stay_bounded() {
    let len = 100_000;
    let (inputs, a, d) = random_case(1, len, 2, 4, 6);
    let y = selective_scan_parallel(&inputs, &a, &d).unwrap();
    // |h| ≤ max|Δ·B·x| / (1 − max Ā), and Ā ≤ exp(0.01·(−0.05)).
    let bound_h = 1.0 / (1.0 - (-0.0005f64).exp());
    let bound = 4.0 * bound_h + 1.0;
    assert!(y.data().iter().all(|v| v.is_finite() && v.abs() <= bound));
    let (_, hs) = common::scan_unrolled(&inputs.x, &inputs.delta, &a, &inputs.b, &inputs.c, &d);
    let n = 4;
    let mut prev = vec![0.0f64; 2 * n];
    for t in 0..len {
        for c in 0..2 {
            let i = t * 2 + c;
            let dt = inputs.delta.data()[i];
            let h_prev = prev[c * n..(c + 1) * n].iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let a_max = (0..n).map(|s| (dt * a.data()[c * n + s]).exp()).fold(0.0, f64::max);
            let drive = (0..n).map(|s| (dt * inputs.b.data()[t * n + s] * inputs.x.data()[i]).abs()).fold(0.0, f64::max);
            let h_now = &hs[i * n..(i + 1) * n];
            let h_inf = h_now.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(h_inf <= h_prev * a_max + drive + 1e-12);
            prev[c * n..(c + 1) * n].copy_from_slice(h_now);
        }
    }
}

fn block_store(p: &SsmParams) -> ParamStore {
    let mut s = ParamStore::new();
    s.extend(p.named("blk")).unwrap();
    s
}

fn run_block(x: &Tensor, p: &SsmParams, mode: ScanMode) -> Tensor {
    let mut tape = Tape::inference();
    let store = block_store(p);
    let bound = store.bind(&mut tape, false);
    let xv = tape.constant(x.clone());
    let y = mamba_block(&mut tape, xv, &bound.scope("blk"), &p.config, mode).unwrap();
    tape.value(y).clone()
}

#[test]
fn mamba_matches_straight_line_reference() {
    for (i, (m, n, e, k, r)) in [(4, 3, 2, 3, None), (8, 16, 1, 4, None), (6, 4, 1, 2, Some(2))].into_iter().enumerate() {
        let cfg = SsmConfig::new(m, n, e, k, r).unwrap();
        let mut g = rng(10 + i as u64);
        let mut p = SsmParams::init(cfg, &mut g);
        for v in p.d_skip.data_mut() {
            *v = g.random_range(-1.0..1.0);
        }
        let x = rand_tensor(&[2, 11, m], 20 + i as u64);
        let want = common::mamba(x.data(), 2, 11, &p);
        for mode in [ScanMode::Sequential, ScanMode::Parallel] {
            let y = run_block(&x, &p, mode);
            assert_eq!(y.shape(), x.shape());
            assert!(max_diff(y.data(), &want) < 1e-10, "config {i} {mode:?}");
        }
    }
}

#[test]
fn mamba_shape_contract() {
    for (b, l, m) in [(1, 4, 2), (2, 49, 6), (1, 196, 8)] {
        let cfg = SsmConfig::new(m, 8, 1, 3, None).unwrap();
        let p = SsmParams::init(cfg, &mut rng(1));
        assert_eq!(run_block(&rand_tensor(&[b, l, m], 2), &p, ScanMode::Parallel).shape(), [b, l, m]);
    }
}

#[test]
fn mamba_zero_input_zero_output() {
    let cfg = SsmConfig::new(4, 8, 1, 3, None).unwrap();
    let mut p = SsmParams::init(cfg, &mut rng(3));
    p.conv_bias = Tensor::zeros(p.conv_bias.shape().to_vec());
    let y = run_block(&Tensor::zeros(vec![2, 6, 4]), &p, ScanMode::Parallel);
    assert!(y.data().iter().all(|&v| v == 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn scan_equivalence(len in 1usize..=128, d in 1usize..=6, n in 1usize..=8, batch in 1usize..=2, seed in any::<u64>()) {
        let (inputs, a, dskip) = random_case(batch, len, d, n, seed);
        let s = selective_scan_sequential(&inputs, &a, &dskip).unwrap();
        let p = selective_scan_parallel(&inputs, &a, &dskip).unwrap();
        prop_assert!(max_diff(s.data(), p.data()) < 1e-10);
    }
}
