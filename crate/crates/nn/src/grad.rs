use crate::error::{NnError, Result};
use crate::tensor::Tensor;

/// Compares an analytic gradient against central finite differences.
///
/// `f` is evaluated at `x ± eps·e_i` for every coordinate; the return value is
/// the largest absolute deviation between the numeric and analytic gradients.
pub fn grad_check<F>(f: F, x: &Tensor, analytic_grad: &Tensor, eps: f32) -> Result<f64>
where
    F: Fn(&Tensor) -> f64,
{
    if x.shape() != analytic_grad.shape() {
        return Err(NnError::ShapeMismatch {
            op: "grad_check",
            left: x.shape().to_vec(),
            right: analytic_grad.shape().to_vec(),
        });
    }
    let mut probe = x.clone();
    let mut worst = 0.0f64;
    for i in 0..x.numel() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(NnError::NonFinite(format!(
                "objective at coordinate {i} evaluated to {up} / {down}"
            )));
        }
        // Use the actually representable step so f32 rounding of x ± eps cancels.
        let step = ((orig + eps) as f64) - ((orig - eps) as f64);
        let numeric = (up - down) / step;
        worst = worst.max((numeric - analytic_grad.data()[i] as f64).abs());
    }
    Ok(worst)
}
