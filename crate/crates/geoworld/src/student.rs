//! The miniature VLM: trainable vision encoder (phi) and projector
//! (theta), frozen text embedding table and option-letter answer head,
//! plus byte-frozen reference copies of the initial vision side.
//!
//! Parameter names are prefixed `phi.`, `theta.`, `psi.`, `frozen.`;
//! freezing is keyed by prefix.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scene::vocab::{QUESTION_LEN, VOCAB_SIZE};
use crate::scene::IMAGE_SIZE;
use crate::tensor::{Graph, ParamStore, Result, Tensor, TensorError, Value};

pub const PATCH: usize = 4;
pub const TOKENS: usize = (IMAGE_SIZE / PATCH) * (IMAGE_SIZE / PATCH); // 64
pub const D_V: usize = 32;
pub const D_H: usize = 48;
pub const HEADS: usize = 2;
pub const HEAD_DIM: usize = D_V / HEADS;
pub const FFN_HIDDEN: usize = 2 * D_V;
pub const BLOCKS: usize = 2;
pub const MAX_OPTIONS: usize = 4;

/// Frozen-stack initialization seed; fixed so every method shares the
/// same reasoning head.
pub const FROZEN_SEED: u64 = 42;

/// Uniform init with variance 1/fan_in; tensor-wise seeding makes
/// parameter values independent of construction order.
fn init_tensor(seed: u64, name: &str, shape: &[usize], fan_in: usize) -> Tensor {
    let mut h = seed ^ 0xcbf2_9ce4_8422_2325;
    for b in name.as_bytes() {
        h = (h ^ *b as u64).wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(h);
    let bound = (3.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("finite init")
}

/// Full parameter set: trainable vision side + alignment heads, frozen
/// text/answer stack, and reference copies of the initial vision side.
pub fn init_params(train_seed: u64, teacher_dim: usize, align_hidden: usize, align_dim: usize) -> ParamStore {
    let mut p = ParamStore::new();
    let mut add = |name: &str, shape: &[usize], fan_in: usize, seed: u64| {
        p.insert(name.to_string(), init_tensor(seed, name, shape, fan_in));
    };

    // phi: patch embed + positional table + 2 residual blocks
    add("phi.patch.w", &[PATCH * PATCH, D_V], PATCH * PATCH, train_seed);
    add("phi.patch.b", &[D_V], PATCH * PATCH, train_seed);
    add("phi.patch.pos", &[TOKENS, D_V], D_V, train_seed);
    for blk in 0..BLOCKS {
        for head in 0..HEADS {
            for w in ["wq", "wk", "wv"] {
                add(
                    &format!("phi.block{}.attn.{}{}", blk, w, head),
                    &[D_V, HEAD_DIM],
                    D_V,
                    train_seed,
                );
            }
        }
        add(&format!("phi.block{}.attn.wo", blk), &[D_V, D_V], D_V, train_seed);
        add(&format!("phi.block{}.attn.bo", blk), &[D_V], D_V, train_seed);
        add(&format!("phi.block{}.ffn.w1", blk), &[D_V, FFN_HIDDEN], D_V, train_seed);
        add(&format!("phi.block{}.ffn.b1", blk), &[FFN_HIDDEN], D_V, train_seed);
        add(&format!("phi.block{}.ffn.w2", blk), &[FFN_HIDDEN, D_V], FFN_HIDDEN, train_seed);
        add(&format!("phi.block{}.ffn.b2", blk), &[D_V], FFN_HIDDEN, train_seed);
    }

    // theta: 2-layer projector d_v -> d_h
    add("theta.l1.w", &[D_V, D_H], D_V, train_seed);
    add("theta.l1.b", &[D_H], D_V, train_seed);
    add("theta.l2.w", &[D_H, D_H], D_H, train_seed);
    add("theta.l2.b", &[D_H], D_H, train_seed);

    // psi: alignment heads (student side d_h, teacher side teacher_dim).
    // Deliberately bias-free: with bias terms both heads minimize the
    // cosine loss by drifting toward a shared constant output, which
    // silences the alignment signal within a few hundred steps.
    add("psi.fs.w1", &[D_H, align_hidden], D_H, train_seed);
    add("psi.fs.w2", &[align_hidden, align_dim], align_hidden, train_seed);
    add("psi.ft.w1", &[teacher_dim, align_hidden], teacher_dim, train_seed);
    add("psi.ft.w2", &[align_hidden, align_dim], align_hidden, train_seed);

    // frozen stack: randomly initialized at FROZEN_SEED, never updated
    add("frozen.e.table", &[VOCAB_SIZE, D_H], D_H, FROZEN_SEED);
    add("frozen.psi.w", &[2 * D_H, MAX_OPTIONS], 2 * D_H, FROZEN_SEED);
    add("frozen.psi.b", &[MAX_OPTIONS], 2 * D_H, FROZEN_SEED);

    // byte copies of the initial vision side (the preservation anchor)
    let refs: Vec<(String, Tensor)> = p
        .iter()
        .filter(|(k, _)| k.starts_with("phi.") || k.starts_with("theta."))
        .map(|(k, v)| (format!("frozen.ref.{}", k), v.clone()))
        .collect();
    p.extend(refs);
    p
}

pub fn is_trainable(name: &str) -> bool {
    name.starts_with("phi.") || name.starts_with("theta.") || name.starts_with("psi.")
}

/// Leaf handles for one graph build.
pub struct Bound {
    values: BTreeMap<String, Value>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Value {
        *self
            .values
            .get(name)
            .unwrap_or_else(|| panic!("unbound parameter {}", name))
    }
}

/// Register every parameter as a graph leaf. `train` controls whether the
/// phi/theta/psi groups require gradients; `frozen.*` never does.
pub fn bind(graph: &mut Graph, params: &ParamStore, train: bool) -> Bound {
    let mut values = BTreeMap::new();
    for (name, t) in params {
        let rg = train && is_trainable(name);
        values.insert(name.clone(), graph.leaf(t.clone(), rg));
    }
    Bound { values }
}

/// Like [`bind`], but substitute an existing graph value for one named
/// parameter (used by gradient checks that perturb a single tensor).
pub fn bind_override(
    graph: &mut Graph,
    params: &ParamStore,
    train: bool,
    name: &str,
    value: Value,
) -> Bound {
    let mut values = BTreeMap::new();
    for (pname, t) in params {
        if pname == name {
            values.insert(pname.clone(), value);
        } else {
            let rg = train && is_trainable(pname);
            values.insert(pname.clone(), graph.leaf(t.clone(), rg));
        }
    }
    Bound { values }
}

/// Split a 32x32 image into a (64, 16) patch matrix, row-major patches.
pub fn patchify(image: &[f64]) -> Result<Tensor> {
    if image.len() != IMAGE_SIZE * IMAGE_SIZE {
        return Err(TensorError::Invalid(format!(
            "image must be {}x{}, got {} values",
            IMAGE_SIZE,
            IMAGE_SIZE,
            image.len()
        )));
    }
    let per_side = IMAGE_SIZE / PATCH;
    let mut data = Vec::with_capacity(TOKENS * PATCH * PATCH);
    for py in 0..per_side {
        for px in 0..per_side {
            for dy in 0..PATCH {
                for dx in 0..PATCH {
                    data.push(image[(py * PATCH + dy) * IMAGE_SIZE + px * PATCH + dx]);
                }
            }
        }
    }
    Tensor::new(vec![TOKENS, PATCH * PATCH], data)
}

fn linear(g: &mut Graph, x: Value, w: Value, b: Value) -> Result<Value> {
    let y = g.matmul(x, w)?;
    g.add(y, b)
}

fn attention(g: &mut Graph, bound: &Bound, prefix: &str, x: Value) -> Result<Value> {
    let full_mask = vec![true; TOKENS];
    let scale = 1.0 / (HEAD_DIM as f64).sqrt();
    let mut heads: Option<Value> = None;
    for h in 0..HEADS {
        let q = g.matmul(x, bound.get(&format!("{}.wq{}", prefix, h)))?;
        let k = g.matmul(x, bound.get(&format!("{}.wk{}", prefix, h)))?;
        let v = g.matmul(x, bound.get(&format!("{}.wv{}", prefix, h)))?;
        let kt = g.transpose(k)?;
        let scores = g.matmul(q, kt)?;
        let scores = g.scale(scores, scale)?;
        let probs = g.masked_softmax(scores, &full_mask)?;
        let out = g.matmul(probs, v)?;
        heads = Some(match heads {
            None => out,
            Some(acc) => g.concat_last(acc, out)?,
        });
    }
    let cat = heads.expect("at least one head");
    linear(
        g,
        cat,
        bound.get(&format!("{}.wo", prefix)),
        bound.get(&format!("{}.bo", prefix)),
    )
}

/// h = P_theta(V_phi(image)): (64, 48) post-projector token features.
/// `prefix` selects the live ("") or reference ("frozen.ref.") weights.
pub fn encode_and_project_with(
    g: &mut Graph,
    bound: &Bound,
    prefix: &str,
    image: &[f64],
) -> Result<Value> {
    let patches = g.constant(patchify(image)?);
    let mut x = linear(
        g,
        patches,
        bound.get(&format!("{}phi.patch.w", prefix)),
        bound.get(&format!("{}phi.patch.b", prefix)),
    )?;
    x = g.add(x, bound.get(&format!("{}phi.patch.pos", prefix)))?;
    for blk in 0..BLOCKS {
        let ln = g.layer_norm(x)?;
        let att = attention(g, bound, &format!("{}phi.block{}.attn", prefix, blk), ln)?;
        x = g.add(x, att)?;
        let ln = g.layer_norm(x)?;
        let h1 = linear(
            g,
            ln,
            bound.get(&format!("{}phi.block{}.ffn.w1", prefix, blk)),
            bound.get(&format!("{}phi.block{}.ffn.b1", prefix, blk)),
        )?;
        let h1 = g.gelu(h1)?;
        let h2 = linear(
            g,
            h1,
            bound.get(&format!("{}phi.block{}.ffn.w2", prefix, blk)),
            bound.get(&format!("{}phi.block{}.ffn.b2", prefix, blk)),
        )?;
        x = g.add(x, h2)?;
    }
    let p1 = linear(
        g,
        x,
        bound.get(&format!("{}theta.l1.w", prefix)),
        bound.get(&format!("{}theta.l1.b", prefix)),
    )?;
    let p1 = g.gelu(p1)?;
    linear(
        g,
        p1,
        bound.get(&format!("{}theta.l2.w", prefix)),
        bound.get(&format!("{}theta.l2.b", prefix)),
    )
}

pub fn encode_and_project(g: &mut Graph, bound: &Bound, image: &[f64]) -> Result<Value> {
    encode_and_project_with(g, bound, "", image)
}

/// Pooled text feature from the frozen embedding table; depends only on
/// `frozen.e.table`, so it is byte-stable across training.
pub fn text_only_probe(params: &ParamStore, question_tokens: &[usize]) -> Result<Vec<f64>> {
    let table = params
        .get("frozen.e.table")
        .ok_or_else(|| TensorError::Invalid("missing frozen.e.table".into()))?;
    if question_tokens.len() != QUESTION_LEN {
        return Err(TensorError::Invalid(format!(
            "question must have {} tokens, got {}",
            QUESTION_LEN,
            question_tokens.len()
        )));
    }
    let mut pooled = vec![0.0; D_H];
    for &tok in question_tokens {
        if tok >= VOCAB_SIZE {
            return Err(TensorError::Invalid(format!("token id {} out of vocab", tok)));
        }
        for d in 0..D_H {
            pooled[d] += table.data()[tok * D_H + d];
        }
    }
    for v in pooled.iter_mut() {
        *v /= QUESTION_LEN as f64;
    }
    Ok(pooled)
}

/// Option mask for the masked softmax over the 4 option-letter logits.
pub fn option_mask(option_count: usize) -> Result<Vec<bool>> {
    if !(2..=MAX_OPTIONS).contains(&option_count) {
        return Err(TensorError::Invalid(format!(
            "option count {} outside 2..=4",
            option_count
        )));
    }
    Ok((0..MAX_OPTIONS).map(|i| i < option_count).collect())
}

/// Raw option-letter logits: frozen head over [pooled h || pooled text].
pub fn answer_logits(
    g: &mut Graph,
    bound: &Bound,
    params: &ParamStore,
    h: Value,
    question_tokens: &[usize],
) -> Result<Value> {
    let pooled_h = g.mean_axis0(h)?;
    let text = text_only_probe(params, question_tokens)?;
    let text = g.constant(Tensor::new(vec![D_H], text)?);
    let joint = g.concat_last(pooled_h, text)?;
    let joint = g.reshape(joint, vec![1, 2 * D_H])?;
    let logits = linear(g, joint, bound.get("frozen.psi.w"), bound.get("frozen.psi.b"))?;
    g.reshape(logits, vec![MAX_OPTIONS])
}

/// Masked softmax probabilities over the live options (padding letters get
/// probability exactly 0); argmax ties break toward the lowest index.
pub fn answer_probs(
    g: &mut Graph,
    logits: Value,
    option_count: usize,
) -> Result<Value> {
    let mask = option_mask(option_count)?;
    g.masked_softmax(logits, &mask)
}

pub fn argmax_lowest(probs: &[f64], option_count: usize) -> usize {
    let mut best = 0;
    for i in 1..option_count {
        if probs[i] > probs[best] {
            best = i;
        }
    }
    best
}
