use super::{AutodiffError, Tape, Tensor, Var};

/// Compares an analytic gradient against central differences.
///
/// Returns `max_k |analytic_k - numeric_k| / max(1, |analytic_k|)`.
pub fn check_gradients_with(
    value: impl Fn(&[f64]) -> Result<f64, AutodiffError>,
    analytic: &[f64],
    point: &[f64],
    eps: f64,
) -> Result<f64, AutodiffError> {
    if analytic.len() != point.len() {
        return Err(AutodiffError::Shape(format!(
            "{} analytic entries for a point of {}",
            analytic.len(),
            point.len()
        )));
    }
    let mut x = point.to_vec();
    let mut worst = 0.0_f64;
    for k in 0..x.len() {
        let orig = x[k];
        x[k] = orig + eps;
        let plus = value(&x)?;
        x[k] = orig - eps;
        let minus = value(&x)?;
        x[k] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(AutodiffError::NonFinite { op: "gradient check" });
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let err = (analytic[k] - numeric).abs() / analytic[k].abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Gradient check of a scalar function built on a tape.
///
/// `f` receives a fresh tape and the input variable (shaped like `point`)
/// and must return a `1×1` output.
pub fn check_gradients(
    f: impl Fn(&mut Tape, Var) -> Result<Var, AutodiffError>,
    point: &Tensor,
    eps: f64,
) -> Result<f64, AutodiffError> {
    let mut tape = Tape::new();
    let x = tape.variable(point.clone())?;
    let y = f(&mut tape, x)?;
    let grads = tape.backward(y)?;
    let analytic = grads
        .get(x)
        .map(|g| g.data().to_vec())
        .unwrap_or_else(|| vec![0.0; point.len()]);
    let (rows, cols) = (point.rows(), point.cols());
    check_gradients_with(
        |data| {
            let mut tape = Tape::new();
            let x = tape.constant(Tensor::new(rows, cols, data.to_vec())?)?;
            let y = f(&mut tape, x)?;
            Ok(tape.value(y).item())
        },
        &analytic,
        point.data(),
        eps,
    )
}
