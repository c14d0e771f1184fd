use crate::error::{contract, Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Relative error used by [`grad_check`]: `|a − b| / max(1, |a|, |b|)`.
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

/// Compares the reverse-mode gradient of a scalar function against central
/// differences with step `h` and returns the largest relative error.
///
/// `f` may use any error type that tensor errors convert into, so model code
/// with its own error enum can be checked directly.
pub fn grad_check<F, E>(f: F, x: &Tensor, h: f64) -> std::result::Result<f64, E>
where
    F: Fn(&mut Graph, Var) -> std::result::Result<Var, E>,
    E: From<Error>,
{
    let mut g = Graph::new();
    let xv = g.param(x.clone());
    let y = f(&mut g, xv)?;
    if g.value(y).numel() != 1 {
        let err: Result<f64> = contract(
            "grad_check",
            format!("function must be scalar-valued, got shape {:?}", g.shape(y)),
        );
        return err.map_err(E::from);
    }
    let analytic = g.backward(y)?.get_or_zeros(xv, x.numel());

    let eval = |t: Tensor| -> std::result::Result<f64, E> {
        let mut g = Graph::new();
        let v = g.param(t);
        let y = f(&mut g, v)?;
        Ok(g.value(y).data()[0])
    };

    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        worst = worst.max(rel_error(a, numeric));
    }
    Ok(worst)
}
