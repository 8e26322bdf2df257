use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Compares the tape gradient of a scalar function against central
/// differences and returns the worst coordinate's
/// `|analytic − numeric| / max(1, |analytic|)`.
///
/// `f` receives a fresh tape and the input registered as a parameter, and
/// must return a scalar node.
pub fn grad_check<T, F>(f: F, x: &Tensor<T>, eps: f64) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(Error::Config(format!(
            "grad_check step {eps} outside [1e-7, 1e-4]"
        )));
    }
    let eval = |input: Tensor<T>| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.param(input);
        let out = f(&mut tape, v)?;
        Ok(tape.value(out).data()[0].as_f64())
    };

    let mut tape = Tape::new();
    let v = tape.param(x.clone());
    let out = f(&mut tape, v)?;
    let grads = tape.backward(out)?;
    let analytic = grads.get(v).expect("parameter gradient").clone();

    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += T::of(eps);
        let mut minus = x.clone();
        minus.data_mut()[i] -= T::of(eps);
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let a = analytic.data()[i].as_f64();
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}
