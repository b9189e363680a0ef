use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Outcome of comparing reverse-mode gradients to central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Compares `backward` gradients of `f` at `theta` with `(f(θ+εe) − f(θ−εe)) / 2ε`
/// per coordinate. Relative error is `|a − b| / max(1e-8, |a| + |b|)`.
pub fn grad_check<F>(f: F, theta: &Tensor<f64>, eps: f64) -> Result<GradCheck>
where
    F: for<'t> Fn(Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let x = tape.leaf(theta.clone(), true);
    let loss = f(x)?;
    let grads = tape.backward(loss)?;
    let analytic = grads.wrt(x).expect("leaf requires grad").to_f64();

    let eval = |values: Vec<f64>| -> Result<f64> {
        let tape = Tape::new();
        let x = tape.constant(Tensor::new(theta.shape().to_vec(), values)?);
        Ok(f(x)?.item())
    };

    let mut numeric = Vec::with_capacity(theta.len());
    let mut max_rel_error = 0.0;
    let mut worst_index = 0;
    for i in 0..theta.len() {
        let mut plus = theta.data().to_vec();
        let mut minus = plus.clone();
        plus[i] += eps;
        minus[i] -= eps;
        let d = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let a = analytic[i];
        let rel = (a - d).abs() / (a.abs() + d.abs()).max(1e-8);
        if rel > max_rel_error {
            max_rel_error = rel;
            worst_index = i;
        }
        numeric.push(d);
    }
    Ok(GradCheck {
        max_rel_error,
        worst_index,
        analytic,
        numeric,
    })
}
