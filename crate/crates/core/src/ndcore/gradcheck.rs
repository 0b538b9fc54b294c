use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Central differences of a scalar function of a flat parameter vector.
pub fn numerical_grad<F>(f: F, point: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let mut x = point.to_vec();
    let mut out = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let orig = x[i];
        x[i] = orig + h;
        let plus = f(&x)?;
        x[i] = orig - h;
        let minus = f(&x)?;
        x[i] = orig;
        let d = (plus - minus) / (2.0 * h);
        if !d.is_finite() {
            return Err(Error::NonFinite {
                index: i,
                context: "finite difference".into(),
            });
        }
        out.push(d);
    }
    Ok(out)
}

/// Compares tape gradients of `build` against central differences at
/// `inputs`, returning the max over all coordinates of
/// `|analytic - numeric| / max(1, |analytic|)`.
///
/// `build` receives one leaf per input tensor and must return a scalar node.
pub fn grad_check<F>(build: F, inputs: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |ts: &[Tensor]| -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let leaves: Vec<Var> = ts.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &leaves)?;
        Ok((tape, leaves, out))
    };

    let (tape, leaves, out) = eval(inputs)?;
    if !tape.value(out).is_finite() {
        return Err(Error::NonFinite {
            index: 0,
            context: "grad_check forward".into(),
        });
    }
    let grads = tape.backward(out)?;

    let mut worst = 0.0f64;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(leaves[k], input.shape());
        let numeric = numerical_grad(
            |x| {
                let mut ts = inputs.to_vec();
                ts[k] = Tensor::new_unchecked(input.shape().to_vec(), x.to_vec())?;
                let (t, _, o) = eval(&ts)?;
                Ok(t.value(o).item())
            },
            input.values(),
            h,
        )?;
        for (a, n) in analytic.values().iter().zip(&numeric) {
            worst = worst.max((a - n).abs() / a.abs().max(1.0));
        }
    }
    Ok(worst)
}
