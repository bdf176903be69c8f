//! Central finite-difference verification of tape gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Compares analytic gradients of `f` against central differences.
///
/// `f` builds a scalar loss from leaves bound to `params` (in order). Every
/// element of every parameter is perturbed by `±eps` in `f64`. Returns the
/// largest `|analytic - numeric| / max(1, |numeric|)` seen.
pub fn gradient_check<F>(f: F, params: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    if !(1e-5..=1e-2).contains(&eps) {
        return Err(Error::Validation(format!("eps {eps} outside [1e-5, 1e-2]")));
    }
    let base: Vec<Vec<f64>> = params.iter().map(Tensor::to_f64).collect();

    let analytic = {
        let tape = Tape::new();
        let vars = bind(&tape, params, &base)?;
        let loss = f(&tape, &vars)?;
        finite(tape.scalar(loss))?;
        let grads = tape.backward(loss)?;
        vars.iter()
            .map(|&v| grads.get(v).map_or_else(|| vec![0.0; tape.value(v).len()], <[f64]>::to_vec))
            .collect::<Vec<_>>()
    };

    let mut worst = 0.0f64;
    let mut probe = base.clone();
    for (pi, values) in base.iter().enumerate() {
        for ei in 0..values.len() {
            probe[pi][ei] = values[ei] + eps;
            let plus = eval_value(&f, params, &probe)?;
            probe[pi][ei] = values[ei] - eps;
            let minus = eval_value(&f, params, &probe)?;
            probe[pi][ei] = values[ei];
            let numeric = (plus - minus) / (2.0 * eps);
            let err = (analytic[pi][ei] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

fn bind(tape: &Tape, params: &[Tensor], values: &[Vec<f64>]) -> Result<Vec<Var>> {
    params
        .iter()
        .zip(values)
        .map(|(p, v)| tape.leaf_f64(p.shape().to_vec(), v.clone(), true))
        .collect()
}

fn finite(value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Evaluation(format!("non-finite loss {value}")))
    }
}

fn eval_value<F>(f: &F, params: &[Tensor], values: &[Vec<f64>]) -> Result<f64>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let tape = Tape::new();
    let vars = bind(&tape, params, values)?;
    let loss = f(&tape, &vars)?;
    finite(tape.scalar(loss))
}
