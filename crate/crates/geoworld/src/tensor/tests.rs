use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

#[test]
fn matmul_identity() {
    let mut g = Graph::new();
    let a = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let id = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let out = g.matmul(a, id).unwrap();
    assert_eq!(g.tensor(out).data(), &[1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn l2_normalize_345() {
    let mut g = Graph::new();
    let a = g.constant(t(&[2], &[3.0, 4.0]));
    let out = g.l2_normalize(a).unwrap();
    let d = g.tensor(out).data();
    assert!((d[0] - 0.6).abs() < 1e-15 && (d[1] - 0.8).abs() < 1e-15);
}

#[test]
fn masked_softmax_two_of_four() {
    // sigma over (5,1): e^5/(e^5+e^1), e^1/(e^5+e^1); hand-evaluated
    // exponentials give 0.9820137900379085 and 0.017986209962091555.
    let mut g = Graph::new();
    let a = g.constant(t(&[4], &[5.0, 1.0, 1.0, 1.0]));
    let out = g.masked_softmax(a, &[true, true, false, false]).unwrap();
    let d = g.tensor(out).data();
    assert!((d[0] - 0.9820137900379085).abs() < 1e-12);
    assert!((d[1] - 0.017986209962091555).abs() < 1e-12);
    assert_eq!(d[2], 0.0);
    assert_eq!(d[3], 0.0);
    assert!((d[0] + d[1] - 1.0).abs() < 1e-12);
}

#[test]
fn shape_mismatch_reports_both_shapes() {
    let mut g = Graph::new();
    let a = g.constant(t(&[2, 2], &[1.0; 4]));
    let b = g.constant(t(&[3], &[1.0; 3]));
    let err = g.add(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 2]") && msg.contains("[3]"), "{}", msg);
}

#[test]
fn backward_sum_gives_ones() {
    let mut g = Graph::new();
    let x = g.leaf(t(&[3], &[2.0, -1.0, 0.5]), true);
    let loss = g.sum_all(x).unwrap();
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
}

#[test]
fn backward_dot_bilinear() {
    let mut g = Graph::new();
    let a = g.leaf(t(&[3], &[1.0, 2.0, 3.0]), true);
    let b = g.leaf(t(&[3], &[4.0, 5.0, 6.0]), true);
    let loss = g.dot(a, b).unwrap();
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.get(a).unwrap().data(), &[4.0, 5.0, 6.0]);
    assert_eq!(grads.get(b).unwrap().data(), &[1.0, 2.0, 3.0]);
}

#[test]
fn backward_twice_rejected() {
    let mut g = Graph::new();
    let x = g.leaf(t(&[1], &[1.0]), true);
    let loss = g.sum_all(x).unwrap();
    g.backward(loss).unwrap();
    assert!(matches!(g.backward(loss), Err(TensorError::BackwardTwice)));
}

#[test]
fn frozen_leaf_gets_no_grad() {
    let mut g = Graph::new();
    let x = g.leaf(t(&[2], &[1.0, 2.0]), true);
    let c = g.leaf(t(&[2], &[3.0, 4.0]), false);
    let p = g.mul(x, c).unwrap();
    let loss = g.sum_all(p).unwrap();
    let grads = g.backward(loss).unwrap();
    assert!(grads.get(x).is_some());
    assert!(grads.get(c).is_none());
}

#[test]
fn grad_check_sum_of_squares() {
    let x = t(&[3], &[1.0, 2.0, 3.0]);
    let err = grad_check(
        |g, v| {
            let sq = g.mul(v, v)?;
            g.sum_all(sq)
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "err = {}", err);
}

#[test]
fn grad_check_constant_zero() {
    let x = t(&[4], &[1.0, -2.0, 0.0, 5.0]);
    let err = grad_check(
        |g, v| {
            let z = g.scale(v, 0.0)?;
            let s = g.sum_all(z)?;
            g.add_scalar(s, 7.0)
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert_eq!(err, 0.0);
}

#[test]
fn grad_check_two_layer_net() {
    // Random 2-layer net, loss = mean square of output; weights are the
    // checked variable.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dims = (4, 5, 3);
    let n_w1 = dims.0 * dims.1;
    let n_w2 = dims.1 * dims.2;
    let w: Vec<f64> = (0..n_w1 + n_w2).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let input: Vec<f64> = (0..dims.0).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x = t(&[n_w1 + n_w2], &w);
    let err = grad_check(
        |g, v| {
            let w1 = g.pick_range(v, 0, n_w1, vec![dims.0, dims.1])?;
            let w2 = g.pick_range(v, n_w1, n_w2, vec![dims.1, dims.2])?;
            let inp = g.constant(t(&[1, dims.0], &input));
            let h = g.matmul(inp, w1)?;
            let h = g.gelu(h)?;
            let out = g.matmul(h, w2)?;
            let sq = g.mul(out, out)?;
            g.mean_all(sq)
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "err = {}", err);
}

#[test]
fn grad_check_all_primitives_random_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..100 {
        let rows = rng.gen_range(1..=8usize);
        let cols = rng.gen_range(1..=8usize);
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let x = t(&[rows, cols], &data);
        let kind = trial % 10;
        let mask: Vec<bool> = (0..cols).map(|c| c == 0 || rng.gen_bool(0.6)).collect();
        let err = grad_check(
            |g, v| {
                let y = match kind {
                    0 => g.relu(v)?,
                    1 => g.gelu(v)?,
                    2 => g.sin(v)?,
                    3 => g.cos(v)?,
                    4 => g.layer_norm(v)?,
                    5 => {
                        // shift positive before normalizing to stay clear
                        // of the zero-norm guard under perturbation
                        let s = g.add_scalar(v, 3.0)?;
                        g.l2_normalize(s)?
                    }
                    6 => g.masked_softmax(v, &mask)?,
                    7 => {
                        let tp = g.transpose(v)?;
                        g.matmul(v, tp)?
                    }
                    8 => g.mul(v, v)?,
                    _ => {
                        let m = g.mean_axis0(v)?;
                        g.reshape(m, vec![1, cols])?
                    }
                };
                let sq = g.mul(y, y)?;
                g.mean_all(sq)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "kind {} trial {} err {}", kind, trial, err);
    }
}

#[test]
fn checkpoint_roundtrip_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mut params = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..5 {
        let n = rng.gen_range(1..20usize);
        let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1e3..1e3)).collect();
        params.insert(format!("p{}", i), t(&[n], &data));
    }
    save_params(dir.path(), &params).unwrap();
    let back = load_params(dir.path()).unwrap();
    assert_eq!(params.len(), back.len());
    for (k, v) in &params {
        let w = &back[k];
        assert_eq!(v.shape(), w.shape());
        assert_eq!(v.to_le_bytes(), w.to_le_bytes());
    }
}

#[test]
fn determinism_identical_bytes() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let data: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut g = Graph::new();
        let x = g.constant(t(&[8, 8], &data));
        let y = g.layer_norm(x).unwrap();
        let z = g.gelu(y).unwrap();
        let w = g.matmul(z, x).unwrap();
        g.tensor(w).to_le_bytes()
    };
    assert_eq!(run(), run());
}

#[test]
fn nan_rejected_with_op_kind() {
    let mut g = Graph::new();
    let a = g.constant(t(&[1], &[-1.0]));
    let err = g.log(a).unwrap_err();
    assert!(err.to_string().contains("log"));
}
