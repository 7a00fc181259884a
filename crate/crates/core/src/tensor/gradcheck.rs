use super::{Element, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Compare the tape gradient of a scalar function against central finite
/// differences.
///
/// `f` records its computation on the supplied tape, starting from the leaf
/// for `x`, and returns the scalar output. The result is the maximum over
/// elements of `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn finite_diff_check<T, F>(f: F, x: &Tensor<T>, step: f64) -> Result<f64>
where
    T: Element,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    finite_diff_check_all(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), step)
}

/// [`finite_diff_check`] over several inputs at once; every element of every
/// input is perturbed.
pub fn finite_diff_check_all<T, F>(f: F, inputs: &[Tensor<T>], step: f64) -> Result<f64>
where
    T: Element,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    if step <= 0.0 || !step.is_finite() {
        return Err(Error::Usage(format!(
            "finite difference step must be positive, got {step}"
        )));
    }

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor<T>> = vars.iter().map(|&v| grads.tensor(&tape, v)).collect();

    let eval = |probe: &[Tensor<T>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = probe.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out).item()?.widen();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Numeric(
                "finite difference probe is not finite".into(),
            ))
        }
    };

    let mut probe = inputs.to_vec();
    let mut worst = 0.0f64;
    for (i, grad) in analytic.iter().enumerate() {
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            probe[i].data_mut()[j] = T::cast(orig.widen() + step);
            let plus = eval(&probe)?;
            probe[i].data_mut()[j] = T::cast(orig.widen() - step);
            let minus = eval(&probe)?;
            probe[i].data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let a = grad.data()[j].widen();
            if !a.is_finite() {
                return Err(Error::Numeric("analytic gradient is not finite".into()));
            }
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
