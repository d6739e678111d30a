//! Central finite-difference oracle for analytic gradients.

use super::{Graph, Result, Tensor, TensorError, Value};

/// Max over coordinates of |analytic - central| / max(1, |central|), with
/// central difference (f(x+eps e_i) - f(x-eps e_i)) / (2 eps).
///
/// `f` must build a scalar loss from the supplied leaf; it is re-invoked on
/// perturbed copies of `x`, so it must be deterministic.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Value) -> Result<Value>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(TensorError::Invalid(format!("eps {} outside (0, 1e-2]", eps)));
    }
    let eval = |data: &[f64]| -> Result<f64> {
        let mut g = Graph::new();
        let leaf = g.leaf(Tensor::new(x.shape().to_vec(), data.to_vec())?, false);
        let loss = f(&mut g, leaf)?;
        let v = g.tensor(loss).item();
        if !v.is_finite() {
            return Err(TensorError::NonFinite { op: "grad_check eval" });
        }
        Ok(v)
    };

    // Analytic gradient.
    let mut g = Graph::new();
    let leaf = g.leaf(x.clone(), true);
    let loss = f(&mut g, leaf)?;
    let grads = g.backward(loss)?;
    let analytic = grads
        .get(leaf)
        .ok_or_else(|| TensorError::Invalid("no gradient reached input".into()))?
        .data()
        .to_vec();

    let mut max_err: f64 = 0.0;
    let base = x.data().to_vec();
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += eps;
        let mut minus = base.clone();
        minus[i] -= eps;
        let central = (eval(&plus)? - eval(&minus)?) / (2.0 * eps);
        let err = (analytic[i] - central).abs() / central.abs().max(1.0);
        max_err = max_err.max(err);
    }
    Ok(max_err)
}
