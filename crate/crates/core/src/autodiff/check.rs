use super::{Tape, Var};
use crate::error::Result;
use crate::linalg::DenseMatrix;

/// Outcome of comparing analytic gradients with central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(|analytic|_inf, |numeric|_inf)` per
    /// leaf; 0 when both gradients vanish.
    pub per_leaf: Vec<f64>,
    pub max_deviation: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_deviation <= self.tolerance
    }
}

/// Checks the gradient of the scalar `f(leaves)` against central differences
/// with the given step.
pub fn grad_check<F>(f: F, leaves: &[DenseMatrix], step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = leaves.iter().map(|l| tape.leaf(l.clone())).collect();
    let loss = f(&tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<DenseMatrix> = vars.iter().map(|v| grads.wrt(*v)).collect();

    let eval = |inputs: &[DenseMatrix]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|l| tape.constant(l.clone())).collect();
        Ok(f(&tape, &vars)?.item())
    };

    let mut per_leaf = Vec::with_capacity(leaves.len());
    let mut inputs = leaves.to_vec();
    for (li, a) in analytic.iter().enumerate() {
        let mut worst = 0.0_f64;
        let mut scale = a.max_abs();
        let mut numeric = Vec::with_capacity(a.len());
        for k in 0..a.len() {
            let orig = inputs[li].as_slice()[k];
            inputs[li].as_mut_slice()[k] = orig + step;
            let fp = eval(&inputs)?;
            inputs[li].as_mut_slice()[k] = orig - step;
            let fm = eval(&inputs)?;
            inputs[li].as_mut_slice()[k] = orig;
            numeric.push((fp - fm) / (2.0 * step));
        }
        for (x, y) in a.as_slice().iter().zip(&numeric) {
            worst = worst.max((x - y).abs());
            scale = scale.max(y.abs());
        }
        per_leaf.push(if scale > 0.0 { worst / scale } else { 0.0 });
    }
    let max_deviation = per_leaf.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport { per_leaf, max_deviation, tolerance })
}
