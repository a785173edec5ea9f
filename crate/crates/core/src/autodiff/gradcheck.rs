use alloc::vec::Vec;

use super::{AutodiffError, Tape, Tensor, Var};
use crate::math;

/// Compares reverse-mode gradients of a scalar function against central
/// differences with step `h`.
///
/// Returns the largest `|analytic - numeric| / max(1, |analytic|)` over every
/// coordinate of every input.
pub fn grad_check<F>(f: F, inputs: &[Tensor], h: f64) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(AutodiffError::InvalidArgument("grad_check step must be positive"));
    }
    let mut tape = Tape::new();
    let leaves = inputs
        .iter()
        .map(|t| tape.leaf(t.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let out = f(&mut tape, &leaves)?;
    let grads = tape.backward(out)?;

    let eval = |perturbed: &[Tensor]| -> Result<f64, AutodiffError> {
        let mut tape = Tape::new();
        let vars = perturbed
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out);
        if !v.is_scalar() {
            return Err(AutodiffError::NonScalarLoss(v.shape().to_vec()));
        }
        Ok(v.values()[0])
    };

    let mut worst: f64 = 0.0;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (k, leaf) in leaves.iter().enumerate() {
        let analytic = grads.get(*leaf).map(|g| g.to_vec());
        for j in 0..inputs[k].numel() {
            let x = inputs[k].values()[j];
            work[k].values_mut()[j] = x + h;
            let up = eval(&work)?;
            work[k].values_mut()[j] = x - h;
            let down = eval(&work)?;
            work[k].values_mut()[j] = x;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.as_ref().map_or(0.0, |g| g[j]);
            if !numeric.is_finite() {
                return Err(AutodiffError::NonFinite { op: "grad_check" });
            }
            let err = math::abs(a - numeric) / math::abs(a).max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
