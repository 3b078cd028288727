mod common;

use common::{max_diff, rand_tensor};
use proptest::prelude::*;
use ulmv_core::autograd::activation;
use ulmv_core::{Tape, Tensor};

#[test]
fn conv2d_matches_direct_loops() {
    let x = rand_tensor(&[1, 2, 5, 5], 1);
    let w = rand_tensor(&[3, 2, 3, 3], 2);
    let b = rand_tensor(&[3], 3);
    let mut tape = Tape::inference();
    let (xv, wv, bv) = (tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(b.clone()));
    for (stride, pad, dil) in [(1, 1, 1), (2, 0, 1), (1, 2, 2)] {
        let y = tape.conv2d(xv, wv, Some(bv), stride, pad, dil).unwrap();
        let (want, shape) = common::conv2d(x.data(), [1, 2, 5, 5], w.data(), [3, 2, 3, 3], Some(b.data()), stride, pad, dil);
        assert_eq!(tape.shape(y), shape);
        assert!(max_diff(tape.value(y).data(), &want) < 1e-12);
    }
}

#[test]
fn conv1d_causal_matches_direct_loops() {
    let (bsz, d, l, k) = (2, 3, 7, 3);
    let x = rand_tensor(&[bsz, d, l], 4);
    let w = rand_tensor(&[d, 1, k], 5);
    let bias = rand_tensor(&[d], 6);
    let mut tape = Tape::inference();
    let (xv, wv, bv) = (tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(bias.clone()));
    let y = tape.conv1d_causal(xv, wv, bv).unwrap();
    let mut want = vec![0.0; bsz * d * l];
    for b in 0..bsz {
        for c in 0..d {
            for t in 0..l {
                let mut acc = bias.data()[c];
                for j in 0..k {
                    if t + j + 1 >= k {
                        acc += w.data()[c * k + j] * x.data()[(b * d + c) * l + t + j + 1 - k];
                    }
                }
                want[(b * d + c) * l + t] = acc;
            }
        }
    }
    assert!(max_diff(tape.value(y).data(), &want) < 1e-12);
}

#[test]
fn conv1d_is_causal() {
    let x = rand_tensor(&[1, 2, 9], 7);
    let w = rand_tensor(&[2, 1, 4], 8);
    let b = Tensor::zeros(vec![2]);
    let run = |x: Tensor| {
        let mut tape = Tape::inference();
        let (xv, wv, bv) = (tape.constant(x), tape.constant(w.clone()), tape.constant(b.clone()));
        let y = tape.conv1d_causal(xv, wv, bv).unwrap();
        tape.value(y).clone()
    };
    let base = run(x.clone());
    let mut bumped = x.clone();
    bumped.data_mut()[5] += 1.0;
    let after = run(bumped);
    for t in 0..9 {
        assert_eq!(base.data()[t] == after.data()[t], t < 5, "position {t}");
    }
}

#[test]
fn linear_examples_and_oracle() {
    let mut tape = Tape::inference();
    let x = tape.constant(Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap());
    let w = tape.constant(Tensor::new(vec![1, 2], vec![2.0, 3.0]).unwrap());
    let b = tape.constant(Tensor::new(vec![1], vec![1.0]).unwrap());
    let y = tape.linear(x, w, Some(b)).unwrap();
    assert_eq!(tape.value(y).data(), [6.0]);

    let xr = rand_tensor(&[2, 3, 4], 9);
    let wr = rand_tensor(&[5, 4], 10);
    let br = rand_tensor(&[5], 11);
    let (xv, wv, bv) = (tape.constant(xr.clone()), tape.constant(wr.clone()), tape.constant(br.clone()));
    let y = tape.linear(xv, wv, Some(bv)).unwrap();
    assert_eq!(tape.shape(y), [2, 3, 5]);
    let want = common::linear(xr.data(), 4, wr.data(), 5, Some(br.data()));
    assert!(max_diff(tape.value(y).data(), &want) < 1e-12);

    let bad = tape.constant(Tensor::zeros(vec![5, 3]));
    assert!(tape.linear(xv, bad, None).is_err());
}

#[test]
fn layer_norm_examples() {
    let mut tape = Tape::inference();
    let g = tape.constant(Tensor::ones(vec![2]));
    let b = tape.constant(Tensor::zeros(vec![2]));
    let c = tape.constant(Tensor::full(vec![3, 2], 4.0));
    let y = tape.layer_norm(c, g, b, 1e-5).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    let x = tape.constant(Tensor::new(vec![2], vec![1.0, -1.0]).unwrap());
    let y = tape.layer_norm(x, g, b, 1e-12).unwrap();
    assert!(max_diff(tape.value(y).data(), &[1.0, -1.0]) < 1e-6);

    let f = 64;
    let xr = rand_tensor(&[3, f], 12);
    let g = tape.constant(Tensor::ones(vec![f]));
    let b = tape.constant(Tensor::zeros(vec![f]));
    let xv = tape.constant(xr.clone());
    let y = tape.layer_norm(xv, g, b, 1e-12).unwrap();
    for row in tape.value(y).data().chunks(f) {
        let mean = row.iter().sum::<f64>() / f as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / f as f64;
        assert!(mean.abs() < 1e-6 && (var - 1.0).abs() < 1e-6);
    }
    let want = common::layer_norm(xr.data(), f, &vec![1.0; f], &vec![0.0; f], 1e-12);
    assert!(max_diff(tape.value(y).data(), &want) < 1e-12);
}

#[test]
fn activation_values() {
    assert_eq!(activation::sigmoid(0.0), 0.5);
    assert_eq!(activation::silu(0.0), 0.0);
    assert!((activation::softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    assert!((activation::sigmoid(50.0) - 1.0).abs() < 1e-15);
    assert!(activation::sigmoid(-50.0).abs() < 1e-15);
    assert!(activation::sigmoid(-50.0) > 0.0);
    assert_eq!(activation::softplus(40.0), 40.0);
    assert!((activation::softplus(29.0) - (1.0 + 29f64.exp()).ln()).abs() < 1e-13);
}

#[test]
fn activation_derivatives_match_finite_differences() {
    let h = 1e-6;
    let pts = rand_tensor(&[16], 13);
    for &p in pts.data() {
        let x = p * 4.0;
        for (name, f) in [
            ("sigmoid", activation::sigmoid as fn(f64) -> f64),
            ("silu", activation::silu),
            ("softplus", activation::softplus),
        ] {
            let mut tape = Tape::new();
            let v = tape.param(Tensor::new(vec![1], vec![x]).unwrap());
            let y = match name {
                "sigmoid" => tape.sigmoid(v),
                "silu" => tape.silu(v),
                _ => tape.softplus(v),
            }
            .unwrap();
            let s = tape.sum(y).unwrap();
            tape.backward(s).unwrap();
            let analytic = tape.grad(v).unwrap().data()[0];
            let numeric = (f(x + h) - f(x - h)) / (2.0 * h);
            assert!((analytic - numeric).abs() < 1e-7, "{name} at {x}");
        }
    }
}

#[test]
fn pooling_examples() {
    let mut tape = Tape::inference();
    let x = tape.constant(Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let mp = tape.max_pool2d(x, 2).unwrap();
    let ap = tape.adaptive_avg_pool2d(x).unwrap();
    assert_eq!(tape.value(mp).data(), [4.0]);
    assert_eq!(tape.value(ap).data(), [2.5]);
    assert_eq!(tape.shape(ap), [1, 1, 1, 1]);

    let c = tape.constant(Tensor::full(vec![1, 2, 3, 3], 1.75));
    let mp = tape.max_pool2d(c, 2).unwrap();
    let ap = tape.adaptive_avg_pool2d(c).unwrap();
    assert_eq!(tape.shape(mp), [1, 2, 1, 1]);
    assert!(tape.value(mp).data().iter().chain(tape.value(ap).data()).all(|&v| v == 1.75));

    let r = rand_tensor(&[2, 3, 5, 7], 14);
    let rv = tape.constant(r.clone());
    let ap = tape.adaptive_avg_pool2d(rv).unwrap();
    let want: Vec<f64> = r.data().chunks(35).map(|p| p.iter().sum::<f64>() / 35.0).collect();
    assert!(max_diff(tape.value(ap).data(), &want) < 1e-12);
    let gp = tape.global_avg_pool(rv).unwrap();
    assert_eq!(tape.shape(gp), [2, 3]);
    assert!(max_diff(tape.value(gp).data(), &want) < 1e-12);
}

#[test]
fn split_channel_examples() {
    let mut tape = Tape::inference();
    let x = tape.constant(rand_tensor(&[2, 8, 3, 3], 15));
    let parts = tape.split_channels(x, 4).unwrap();
    assert_eq!(parts.len(), 4);
    assert!(parts.iter().all(|&p| tape.shape(p) == [2, 2, 3, 3]));
    let one = tape.split_channels(x, 1).unwrap();
    assert_eq!(tape.value(one[0]), tape.value(x));
    assert!(tape.split_channels(x, 3).is_err());
}

#[test]
fn backward_accumulates_across_passes() {
    let x0 = rand_tensor(&[2, 3, 4, 4], 16);
    let w0 = rand_tensor(&[2, 3, 3, 3], 17);
    let mut tape = Tape::new();
    let x = tape.param(x0);
    let w = tape.param(w0);
    let y = tape.conv2d(x, w, None, 1, 1, 1).unwrap();
    let y = tape.silu(y).unwrap();
    let loss = tape.mean(y).unwrap();
    tape.backward(loss).unwrap();
    let once = tape.grad(w).unwrap();
    tape.backward(loss).unwrap();
    let twice = tape.grad(w).unwrap();
    for (a, b) in once.data().iter().zip(twice.data()) {
        assert_eq!(2.0 * a, *b);
    }
    tape.zero_grad();
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(w).unwrap(), once);
}

#[test]
fn forward_is_deterministic() {
    let run = || {
        let mut tape = Tape::inference();
        let x = tape.constant(rand_tensor(&[4, 3, 9, 9], 18));
        let w = tape.constant(rand_tensor(&[5, 3, 3, 3], 19));
        let y = tape.conv2d(x, w, None, 1, 1, 1).unwrap();
        let y = tape.max_pool2d(y, 2).unwrap();
        tape.value(y).clone()
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn concat_inverts_split(parts in 1usize..5, per in 1usize..4, n in 1usize..3, hw in 1usize..4, seed in any::<u64>()) {
        let x = rand_tensor(&[n, parts * per, hw, hw], seed);
        let mut tape = Tape::inference();
        let xv = tape.constant(x.clone());
        let pieces = tape.split_channels(xv, parts).unwrap();
        let back = tape.concat_channels(&pieces).unwrap();
        prop_assert_eq!(tape.value(back), &x);
    }
}
