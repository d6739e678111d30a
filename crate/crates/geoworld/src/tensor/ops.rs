//! Forward implementations of the primitive op suite. Each op validates
//! shapes, computes the output, and commits it to the tape with the record
//! backward needs.

use super::graph::{gelu, Op};
use super::{Graph, Result, Tensor, TensorError, Value, MASK_NEG};

/// Right operand's shape must equal a suffix of the left's (leading-axis
/// broadcast only).
fn check_suffix(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Result<()> {
    if rhs.len() <= lhs.len() && lhs[lhs.len() - rhs.len()..] == *rhs {
        Ok(())
    } else {
        Err(TensorError::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        })
    }
}

impl Graph {
    pub fn add(&mut self, a: Value, b: Value) -> Result<Value> {
        let (ta, tb) = (self.tensor(a).clone(), self.tensor(b).clone());
        check_suffix("add", ta.shape(), tb.shape())?;
        let nb = tb.numel();
        let data: Vec<f64> = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + tb.data()[i % nb])
            .collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.commit("add", t, Op::Add { a: a.0, b: b.0 })
    }

    pub fn sub(&mut self, a: Value, b: Value) -> Result<Value> {
        let (ta, tb) = (self.tensor(a).clone(), self.tensor(b).clone());
        check_suffix("sub", ta.shape(), tb.shape())?;
        let nb = tb.numel();
        let data: Vec<f64> = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v - tb.data()[i % nb])
            .collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.commit("sub", t, Op::Sub { a: a.0, b: b.0 })
    }

    pub fn mul(&mut self, a: Value, b: Value) -> Result<Value> {
        let (ta, tb) = (self.tensor(a).clone(), self.tensor(b).clone());
        check_suffix("mul", ta.shape(), tb.shape())?;
        let nb = tb.numel();
        let data: Vec<f64> = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v * tb.data()[i % nb])
            .collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.commit("mul", t, Op::Mul { a: a.0, b: b.0 })
    }

    pub fn scale(&mut self, a: Value, c: f64) -> Result<Value> {
        let ta = self.tensor(a).clone();
        let data: Vec<f64> = ta.data().iter().map(|v| v * c).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.commit("scale", t, Op::Scale { a: a.0, c })
    }

    pub fn add_scalar(&mut self, a: Value, c: f64) -> Result<Value> {
        let ta = self.tensor(a).clone();
        let data: Vec<f64> = ta.data().iter().map(|v| v + c).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.commit("add_scalar", t, Op::AddScalar { a: a.0 })
    }

    /// 2-D matrix product (m,k) x (k,n) -> (m,n).
    pub fn matmul(&mut self, a: Value, b: Value) -> Result<Value> {
        let (ta, tb) = (self.tensor(a).clone(), self.tensor(b).clone());
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let av = ta.data()[i * k + p];
                if av != 0.0 {
                    let row = &tb.data()[p * n..(p + 1) * n];
                    let out = &mut data[i * n..(i + 1) * n];
                    for (o, bv) in out.iter_mut().zip(row) {
                        *o += av * bv;
                    }
                }
            }
        }
        let t = Tensor::new(vec![m, n], data)?;
        self.commit("matmul", t, Op::Matmul { a: a.0, b: b.0 })
    }

    pub fn transpose(&mut self, a: Value) -> Result<Value> {
        let ta = self.tensor(a).clone();
        if ta.shape().len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "transpose",
                lhs: ta.shape().to_vec(),
                rhs: vec![],
            });
        }
        let (m, n) = (ta.shape()[0], ta.shape()[1]);
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = ta.data()[i * n + j];
            }
        }
        let t = Tensor::new(vec![n, m], data)?;
        self.commit("transpose", t, Op::Transpose { a: a.0 })
    }

    pub fn reshape(&mut self, a: Value, shape: Vec<usize>) -> Result<Value> {
        let ta = self.tensor(a).clone();
        if shape.iter().product::<usize>() != ta.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: ta.shape().to_vec(),
                rhs: shape,
            });
        }
        let t = Tensor::new(shape, ta.data().to_vec())?;
        self.commit("reshape", t, Op::Reshape { a: a.0 })
    }

    pub fn relu(&mut self, a: Value) -> Result<Value> {
        let ta = self.tensor(a).clone();
        let data: Vec<f64> = ta.data().iter().map(|v| v.max(0.0)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.commit("relu", t, Op::Relu { a: a.0 })
    }

    pub fn gelu(&mut self, a: Value) -> Result<Value> {
        let ta = self.tensor(a).clone();
        let data: Vec<f64> = ta.data().iter().map(|v| gelu(*v)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.commit("gelu", t, Op::Gelu { a: a.0 })
    }

    pub fn sin(&mut self, a: Value) -> Result<Value> {
        let ta = self.tensor(a).clone();
        let data: Vec<f64> = ta.data().iter().map(|v| v.sin()).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.commit("sin", t, Op::Sin { a: a.0 })
    }

    pub fn cos(&mut self, a: Value) -> Result<Value> {
        let ta = self.tensor(a).clone();
        let data: Vec<f64> = ta.data().iter().map(|v| v.cos()).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.commit("cos", t, Op::Cos { a: a.0 })
    }

    /// Natural log; rejects non-positive inputs via the finiteness gate.
    pub fn log(&mut self, a: Value) -> Result<Value> {
        let ta = self.tensor(a).clone();
        let data: Vec<f64> = ta.data().iter().map(|v| v.ln()).collect();
        let t = Tensor::new(ta.shape().to_vec(), data).map_err(|_| TensorError::NonFinite {
            op: "log",
        })?;
        self.commit("log", t, Op::Log { a: a.0 })
    }

    pub fn sum_all(&mut self, a: Value) -> Result<Value> {
        let s: f64 = self.tensor(a).data().iter().sum();
        let t = Tensor::new(vec![1], vec![s])?;
        self.commit("sum_all", t, Op::SumAll { a: a.0 })
    }

    pub fn mean_all(&mut self, a: Value) -> Result<Value> {
        let ta = self.tensor(a);
        let s: f64 = ta.data().iter().sum::<f64>() / ta.numel() as f64;
        let t = Tensor::new(vec![1], vec![s])?;
        self.commit("mean_all", t, Op::MeanAll { a: a.0 })
    }

    /// Mean over the leading axis: (n, d...) -> (d...).
    pub fn mean_axis0(&mut self, a: Value) -> Result<Value> {
        let ta = self.tensor(a).clone();
        if ta.shape().len() < 2 {
            return Err(TensorError::ShapeMismatch {
                op: "mean_axis0",
                lhs: ta.shape().to_vec(),
                rhs: vec![],
            });
        }
        let rows = ta.shape()[0];
        let cols: usize = ta.shape()[1..].iter().product();
        let mut data = vec![0.0; cols];
        for r in 0..rows {
            for c in 0..cols {
                data[c] += ta.data()[r * cols + c];
            }
        }
        for v in data.iter_mut() {
            *v /= rows as f64;
        }
        let t = Tensor::new(ta.shape()[1..].to_vec(), data)?;
        self.commit("mean_axis0", t, Op::MeanAxis0 { a: a.0 })
    }

    /// L2-normalize along the last axis, one norm per row.
    pub fn l2_normalize(&mut self, a: Value) -> Result<Value> {
        let ta = self.tensor(a).clone();
        let cols = *ta.shape().last().ok_or_else(|| {
            TensorError::Invalid("l2_normalize on empty shape".into())
        })?;
        let rows = ta.numel() / cols;
        let mut data = vec![0.0; ta.numel()];
        let mut norms = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &ta.data()[r * cols..(r + 1) * cols];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-12 {
                return Err(TensorError::NormTooSmall {
                    op: "l2_normalize",
                    norm,
                });
            }
            for c in 0..cols {
                data[r * cols + c] = row[c] / norm;
            }
            norms.push(norm);
        }
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.commit("l2_normalize", t, Op::L2NormalizeRows { a: a.0, norms })
    }

    /// Zero-mean unit-variance per row along the last axis (no affine).
    pub fn layer_norm(&mut self, a: Value) -> Result<Value> {
        const EPS: f64 = 1e-5;
        let ta = self.tensor(a).clone();
        let cols = *ta.shape().last().unwrap();
        let rows = ta.numel() / cols;
        let mut data = vec![0.0; ta.numel()];
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &ta.data()[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let istd = 1.0 / (var + EPS).sqrt();
            for c in 0..cols {
                data[r * cols + c] = (row[c] - mean) * istd;
            }
            inv_std.push(istd);
        }
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.commit("layer_norm", t, Op::LayerNormRows { a: a.0, inv_std })
    }

    /// Softmax along the last axis restricted to `mask`; masked entries get
    /// probability exactly 0 (realized by a -1e30 logit surrogate).
    pub fn masked_softmax(&mut self, a: Value, mask: &[bool]) -> Result<Value> {
        let ta = self.tensor(a).clone();
        let cols = *ta.shape().last().unwrap();
        if mask.len() != cols || !mask.iter().any(|m| *m) {
            return Err(TensorError::Invalid(format!(
                "mask length {} for last axis {} (need >=1 selected)",
                mask.len(),
                cols
            )));
        }
        let rows = ta.numel() / cols;
        let mut data = vec![0.0; ta.numel()];
        for r in 0..rows {
            let row = &ta.data()[r * cols..(r + 1) * cols];
            let max = (0..cols)
                .map(|c| if mask[c] { row[c] } else { MASK_NEG })
                .fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for c in 0..cols {
                if mask[c] {
                    z += (row[c] - max).exp();
                }
            }
            for c in 0..cols {
                data[r * cols + c] = if mask[c] { (row[c] - max).exp() / z } else { 0.0 };
            }
        }
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.commit(
            "masked_softmax",
            t,
            Op::MaskedSoftmax {
                a: a.0,
                mask: mask.to_vec(),
            },
        )
    }

    /// Numerically stable -log softmax(logits)[target] over unmasked
    /// entries; logits must be 1-D.
    pub fn cross_entropy_masked(&mut self, a: Value, mask: &[bool], target: usize) -> Result<Value> {
        let ta = self.tensor(a).clone();
        if ta.shape().len() != 1 || mask.len() != ta.numel() {
            return Err(TensorError::Invalid(format!(
                "cross_entropy_masked wants 1-D logits matching mask, got {:?} vs {}",
                ta.shape(),
                mask.len()
            )));
        }
        if target >= ta.numel() || !mask[target] {
            return Err(TensorError::Invalid(format!(
                "target {} not selected by mask",
                target
            )));
        }
        let x = ta.data();
        let max = (0..x.len())
            .filter(|i| mask[*i])
            .map(|i| x[i])
            .fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..x.len())
            .filter(|i| mask[*i])
            .map(|i| (x[i] - max).exp())
            .sum();
        let loss = z.ln() + max - x[target];
        let t = Tensor::new(vec![1], vec![loss])?;
        self.commit(
            "cross_entropy_masked",
            t,
            Op::CrossEntropyMasked {
                a: a.0,
                mask: mask.to_vec(),
                target,
            },
        )
    }

    /// Concatenate along the last axis; both operands 1-D, or 2-D with the
    /// same row count.
    pub fn concat_last(&mut self, a: Value, b: Value) -> Result<Value> {
        let (ta, tb) = (self.tensor(a).clone(), self.tensor(b).clone());
        let ok = match (ta.shape(), tb.shape()) {
            ([_], [_]) => true,
            ([ra, _], [rb, _]) => ra == rb,
            _ => false,
        };
        if !ok {
            return Err(TensorError::ShapeMismatch {
                op: "concat_last",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let ca = *ta.shape().last().unwrap();
        let cb = *tb.shape().last().unwrap();
        let rows = ta.numel() / ca;
        let mut data = Vec::with_capacity(rows * (ca + cb));
        for r in 0..rows {
            data.extend_from_slice(&ta.data()[r * ca..(r + 1) * ca]);
            data.extend_from_slice(&tb.data()[r * cb..(r + 1) * cb]);
        }
        let shape = if ta.shape().len() == 1 {
            vec![ca + cb]
        } else {
            vec![rows, ca + cb]
        };
        let t = Tensor::new(shape, data)?;
        self.commit("concat_last", t, Op::ConcatLast { a: a.0, b: b.0 })
    }

    /// Extract one element by flat index as a scalar.
    pub fn pick(&mut self, a: Value, index: usize) -> Result<Value> {
        let ta = self.tensor(a).clone();
        if index >= ta.numel() {
            return Err(TensorError::Invalid(format!(
                "pick index {} out of {}",
                index,
                ta.numel()
            )));
        }
        let t = Tensor::new(vec![1], vec![ta.data()[index]])?;
        self.commit("pick", t, Op::Pick { a: a.0, index })
    }

    /// Slice `len` contiguous flat elements starting at `start`, reshaped.
    pub fn pick_range(
        &mut self,
        a: Value,
        start: usize,
        len: usize,
        shape: Vec<usize>,
    ) -> Result<Value> {
        let ta = self.tensor(a).clone();
        if start + len > ta.numel() || shape.iter().product::<usize>() != len {
            return Err(TensorError::Invalid(format!(
                "pick_range [{}, {}) shape {:?} out of {} elements",
                start,
                start + len,
                shape,
                ta.numel()
            )));
        }
        let t = Tensor::new(shape, ta.data()[start..start + len].to_vec())?;
        self.commit("pick_range", t, Op::PickRange { a: a.0, start, len })
    }

    /// Dot product of two 1-D vectors.
    pub fn dot(&mut self, a: Value, b: Value) -> Result<Value> {
        let p = self.mul(a, b)?;
        self.sum_all(p)
    }
}
