//! The three loss terms and their combination: option-restricted task
//! cross-entropy, cosine alignment of projected student/teacher features,
//! and the normalized preservation anchor to the frozen reference vision
//! side.

use serde::{Deserialize, Serialize};

use crate::student::{option_mask, Bound, D_H};
use crate::teacher::D_T;
use crate::tensor::{Graph, Result, Tensor, TensorError, Value};

pub const ALIGN_HIDDEN: usize = 64;
pub const ALIGN_DIM: usize = 32;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_align: f64,
    pub lambda_preserve: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_align: 0.10,
            lambda_preserve: 0.05,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_align < 0.0 || self.lambda_preserve < 0.0 {
            return Err(TensorError::Invalid(
                "loss weights must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, Default)]
pub struct LossBreakdown {
    pub task: f64,
    pub align: f64,
    pub preserve: f64,
    pub total: f64,
}

/// Apply one 2-layer alignment head (prefix `psi.fs` or `psi.ft`) to a
/// single feature vector of width `in_dim`.
fn align_head(
    g: &mut Graph,
    bound: &Bound,
    prefix: &str,
    x: Value,
    in_dim: usize,
) -> Result<Value> {
    let x = g.reshape(x, vec![1, in_dim])?;
    let h = g.matmul(x, bound.get(&format!("{}.w1", prefix)))?;
    let h = g.gelu(h)?;
    let o = g.matmul(h, bound.get(&format!("{}.w2", prefix)))?;
    g.reshape(o, vec![ALIGN_DIM])
}

/// 1 - cos(f_s(pool(h)), f_t(g)). The teacher feature enters the graph as
/// a constant, so no gradient ever reaches the teacher; the heads and the
/// student path are differentiable. Value lies in [0, 2].
pub fn align_loss(
    g: &mut Graph,
    bound: &Bound,
    h: Value,
    teacher_feature: &[f64],
) -> Result<Value> {
    if teacher_feature.len() != D_T {
        return Err(TensorError::Invalid(format!(
            "teacher feature has {} dims, want {}",
            teacher_feature.len(),
            D_T
        )));
    }
    let pooled = g.mean_axis0(h)?;
    let u_s = align_head(g, bound, "psi.fs", pooled, D_H)?;
    let t = g.constant(Tensor::new(vec![D_T], teacher_feature.to_vec())?);
    let u_t = align_head(g, bound, "psi.ft", t, D_T)?;
    let ns = g.l2_normalize(u_s)?;
    let nt = g.l2_normalize(u_t)?;
    let cos = g.dot(ns, nt)?;
    let neg = g.scale(cos, -1.0)?;
    g.add_scalar(neg, 1.0)
}

/// || h/||h|| - h_ref/||h_ref|| ||^2 per token row, averaged over tokens.
/// `h_ref` must come from the frozen reference weights (its leaves carry
/// requires_grad = false, which is the graph-level detach).
pub fn preserve_loss(g: &mut Graph, h: Value, h_ref: Value) -> Result<Value> {
    if g.shape(h) != g.shape(h_ref) {
        return Err(TensorError::ShapeMismatch {
            op: "preserve_loss",
            lhs: g.shape(h).to_vec(),
            rhs: g.shape(h_ref).to_vec(),
        });
    }
    let cols = *g.shape(h).last().unwrap();
    let nh = g.l2_normalize(h)?;
    let nr = g.l2_normalize(h_ref)?;
    let d = g.sub(nh, nr)?;
    let sq = g.mul(d, d)?;
    // mean over all entries * cols = per-row sums averaged over rows
    let m = g.mean_all(sq)?;
    g.scale(m, cols as f64)
}

/// -log softmax(logits)[answer] restricted to the first `option_count`
/// option letters.
pub fn task_loss(
    g: &mut Graph,
    logits: Value,
    answer_index: usize,
    option_count: usize,
) -> Result<Value> {
    let mask = option_mask(option_count)?;
    if answer_index >= option_count {
        return Err(TensorError::Invalid(format!(
            "answer index {} >= option count {}",
            answer_index, option_count
        )));
    }
    g.cross_entropy_masked(logits, &mask, answer_index)
}

pub struct LossParts {
    pub task: Value,
    pub align: Option<Value>,
    pub preserve: Option<Value>,
}

/// total = task + lambda_align * align + lambda_preserve * preserve.
/// Terms with zero weight are skipped entirely, so the lambda = 0 run is
/// bit-identical to a build without the distillation code paths.
pub fn total_loss(
    g: &mut Graph,
    parts: &LossParts,
    weights: &LossWeights,
) -> Result<(Value, LossBreakdown)> {
    let mut breakdown = LossBreakdown {
        task: g.tensor(parts.task).item(),
        ..Default::default()
    };
    let mut total = parts.task;
    if weights.lambda_align != 0.0 {
        if let Some(align) = parts.align {
            breakdown.align = g.tensor(align).item();
            let scaled = g.scale(align, weights.lambda_align)?;
            total = g.add(total, scaled)?;
        }
    }
    if weights.lambda_preserve != 0.0 {
        if let Some(preserve) = parts.preserve {
            breakdown.preserve = g.tensor(preserve).item();
            let scaled = g.scale(preserve, weights.lambda_preserve)?;
            total = g.add(total, scaled)?;
        }
    }
    breakdown.total = g.tensor(total).item();
    Ok((total, breakdown))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::student::{bind, init_params};
    use crate::tensor::grad_check;

    fn params() -> crate::tensor::ParamStore {
        init_params(5, D_T, ALIGN_HIDDEN, ALIGN_DIM)
    }

    fn random_h(rng: &mut ChaCha8Rng, rows: usize) -> Tensor {
        let data: Vec<f64> = (0..rows * D_H).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::new(vec![rows, D_H], data).unwrap()
    }

    #[test]
    fn align_loss_zero_when_projections_tie() {
        // identical inputs through identical heads -> identical directions
        let p = params();
        let mut g = Graph::new();
        let bound = bind(&mut g, &p, false);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let feat: Vec<f64> = (0..D_T).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let t1 = g.constant(Tensor::new(vec![D_T], feat.clone()).unwrap());
        let u1 = align_head(&mut g, &bound, "psi.ft", t1, D_T).unwrap();
        let t2 = g.constant(Tensor::new(vec![D_T], feat).unwrap());
        let u2 = align_head(&mut g, &bound, "psi.ft", t2, D_T).unwrap();
        let n1 = g.l2_normalize(u1).unwrap();
        let n2 = g.l2_normalize(u2).unwrap();
        let cos = g.dot(n1, n2).unwrap();
        let neg = g.scale(cos, -1.0).unwrap();
        let loss = g.add_scalar(neg, 1.0).unwrap();
        assert!(g.tensor(loss).item().abs() < 1e-12);
    }

    #[test]
    fn cosine_loss_antipodal_is_two() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::new(vec![3], vec![1.0, 2.0, -0.5]).unwrap());
        let b = g.scale(a, -1.0).unwrap();
        let na = g.l2_normalize(a).unwrap();
        let nb = g.l2_normalize(b).unwrap();
        let cos = g.dot(na, nb).unwrap();
        let neg = g.scale(cos, -1.0).unwrap();
        let loss = g.add_scalar(neg, 1.0).unwrap();
        assert!((g.tensor(loss).item() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn align_loss_in_range_and_grad_checks() {
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let feat: Vec<f64> = (0..D_T).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h0 = random_h(&mut rng, 4);

        // value in [0, 2]
        {
            let mut g = Graph::new();
            let bound = bind(&mut g, &p, false);
            let h = g.constant(h0.clone());
            let loss = align_loss(&mut g, &bound, h, &feat).unwrap();
            let v = g.tensor(loss).item();
            assert!((0.0..=2.0).contains(&v));
        }

        // gradient w.r.t. h matches finite differences
        let p2 = p.clone();
        let feat2 = feat.clone();
        let err = grad_check(
            move |g, v| {
                let bound = bind(g, &p2, false);
                align_loss(g, &bound, v, &feat2)
            },
            &h0,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "err = {}", err);
    }

    #[test]
    fn align_loss_scale_invariant() {
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let feat: Vec<f64> = (0..D_T).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let u: Vec<f64> = (0..ALIGN_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // invariance is of the cosine form itself: rescaling u_s or u_t
        // positively leaves the loss unchanged
        let mut g = Graph::new();
        let _ = &p;
        let a = g.constant(Tensor::new(vec![ALIGN_DIM], u.clone()).unwrap());
        let b = g.constant(Tensor::new(vec![ALIGN_DIM], feat[..ALIGN_DIM].to_vec()).unwrap());
        let a3 = g.scale(a, 3.5).unwrap();
        let cos1 = {
            let na = g.l2_normalize(a).unwrap();
            let nb = g.l2_normalize(b).unwrap();
            g.dot(na, nb).unwrap()
        };
        let cos2 = {
            let na = g.l2_normalize(a3).unwrap();
            let nb = g.l2_normalize(b).unwrap();
            g.dot(na, nb).unwrap()
        };
        assert!((g.tensor(cos1).item() - g.tensor(cos2).item()).abs() < 1e-12);
    }

    #[test]
    fn preserve_loss_zero_at_identity_and_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h0 = random_h(&mut rng, 8);
        {
            let mut g = Graph::new();
            let h = g.constant(h0.clone());
            let r = g.constant(h0.clone());
            let loss = preserve_loss(&mut g, h, r).unwrap();
            assert!(g.tensor(loss).item().abs() < 1e-15);
        }
        {
            // h = 2 h_ref -> 0 by per-row normalization
            let mut g = Graph::new();
            let h = g.constant(h0.clone());
            let h2 = g.scale(h, 2.0).unwrap();
            let r = g.constant(h0.clone());
            let loss = preserve_loss(&mut g, h2, r).unwrap();
            assert!(g.tensor(loss).item().abs() < 1e-12);
        }
    }

    #[test]
    fn preserve_loss_matches_hand_rolled_and_grad_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let h0 = random_h(&mut rng, 5);
        let r0 = random_h(&mut rng, 5);

        let mut g = Graph::new();
        let h = g.constant(h0.clone());
        let r = g.constant(r0.clone());
        let loss = preserve_loss(&mut g, h, r).unwrap();
        // hand-rolled duplicate computation
        let mut expect = 0.0;
        for row in 0..5 {
            let hs = &h0.data()[row * D_H..(row + 1) * D_H];
            let rs = &r0.data()[row * D_H..(row + 1) * D_H];
            let nh: f64 = hs.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nr: f64 = rs.iter().map(|v| v * v).sum::<f64>().sqrt();
            expect += hs
                .iter()
                .zip(rs)
                .map(|(a, b)| (a / nh - b / nr).powi(2))
                .sum::<f64>();
        }
        expect /= 5.0;
        assert!((g.tensor(loss).item() - expect).abs() < 1e-12);

        let r1 = r0.clone();
        let err = grad_check(
            move |g, v| {
                let r = g.constant(r1.clone());
                preserve_loss(g, v, r)
            },
            &h0,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "err = {}", err);
    }

    #[test]
    fn task_loss_uniform_logits_is_ln4() {
        let mut g = Graph::new();
        let logits = g.constant(Tensor::new(vec![4], vec![0.3; 4]).unwrap());
        let loss = task_loss(&mut g, logits, 2, 4).unwrap();
        assert!((g.tensor(loss).item() - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn task_loss_saturated_answer_near_zero() {
        let mut g = Graph::new();
        let logits = g.constant(Tensor::new(vec![4], vec![30.0, 0.0, 0.0, 0.0]).unwrap());
        let loss = task_loss(&mut g, logits, 0, 4).unwrap();
        assert!(g.tensor(loss).item() < 1e-9);
    }

    #[test]
    fn task_loss_matches_log_sum_exp() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let logits: Vec<f64> = (0..4).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let count = rng.gen_range(2..=4usize);
            let ans = rng.gen_range(0..count);
            let mut g = Graph::new();
            let l = g.constant(Tensor::new(vec![4], logits.clone()).unwrap());
            let loss = task_loss(&mut g, l, ans, count).unwrap();
            let lse = logits[..count].iter().map(|v| v.exp()).sum::<f64>().ln();
            assert!((g.tensor(loss).item() - (lse - logits[ans])).abs() < 1e-12);
        }
    }

    #[test]
    fn total_arithmetic_at_default_weights() {
        let mut g = Graph::new();
        let task = g.constant(Tensor::scalar(1.0));
        let align = g.constant(Tensor::scalar(0.5));
        let preserve = g.constant(Tensor::scalar(0.2));
        let (_, b) = total_loss(
            &mut g,
            &LossParts {
                task,
                align: Some(align),
                preserve: Some(preserve),
            },
            &LossWeights::default(),
        )
        .unwrap();
        assert!((b.total - 1.06).abs() < 1e-15);
    }

    #[test]
    fn zero_weights_recover_task_exactly() {
        let mut g = Graph::new();
        let task = g.constant(Tensor::scalar(0.731));
        let align = g.constant(Tensor::scalar(1.9));
        let preserve = g.constant(Tensor::scalar(0.4));
        let (total, b) = total_loss(
            &mut g,
            &LossParts {
                task,
                align: Some(align),
                preserve: Some(preserve),
            },
            &LossWeights {
                lambda_align: 0.0,
                lambda_preserve: 0.0,
            },
        )
        .unwrap();
        assert_eq!(total, task);
        assert_eq!(b.total, 0.731);
    }

    #[test]
    fn near_zero_norm_rejected() {
        let mut g = Graph::new();
        let h = g.constant(Tensor::new(vec![1, 3], vec![0.0, 0.0, 1e-15]).unwrap());
        let r = g.constant(Tensor::new(vec![1, 3], vec![1.0, 0.0, 0.0]).unwrap());
        let err = preserve_loss(&mut g, h, r).unwrap_err();
        assert!(err.to_string().contains("norm"));
    }
}
