//! Central finite-difference gradient verification.
//!
//! The checker only ever evaluates the forward path, so it is independent
//! of the reverse-mode code it validates. Error is reported relative to
//! max(1, |analytic|, |numeric|): relative in the large, absolute in the
//! small, so dead units (both sides ~0) do not produce false alarms.

use crate::error::Result;

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_err: f64,
    pub elements: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_err < tol
    }
}

/// Compare analytic gradients against central differences of `eval`.
///
/// `eval` must rebuild the forward pass from raw input buffers and return
/// the scalar value. `inputs` and `analytic` run parallel: one buffer of
/// values and one of gradients per differentiated input.
pub fn central_diff_check(
    mut eval: impl FnMut(&[Vec<f64>]) -> Result<f64>,
    inputs: &[Vec<f64>],
    analytic: &[Vec<f64>],
    h: f64,
) -> Result<GradCheckReport> {
    assert_eq!(inputs.len(), analytic.len(), "inputs and gradients must pair up");
    let mut work: Vec<Vec<f64>> = inputs.to_vec();
    let mut max_err: f64 = 0.0;
    let mut elements = 0;
    for i in 0..inputs.len() {
        assert_eq!(inputs[i].len(), analytic[i].len(), "gradient length mismatch");
        for j in 0..inputs[i].len() {
            let orig = work[i][j];
            work[i][j] = orig + h;
            let plus = eval(&work)?;
            work[i][j] = orig - h;
            let minus = eval(&work)?;
            work[i][j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[i][j];
            let err = (a - numeric).abs() / 1.0_f64.max(a.abs()).max(numeric.abs());
            if err > max_err {
                max_err = err;
            }
            elements += 1;
        }
    }
    Ok(GradCheckReport { max_err, elements })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn quadratic_gradient_matches() {
        // f = sum(x^2) at x = [3, -2]; df/dx = 2x.
        let x = Tensor::param(&[1, 2], vec![3.0, -2.0]).unwrap();
        let loss = x.mul(&x).unwrap().sum().unwrap();
        loss.backward().unwrap();
        let g = x.grad().unwrap();
        let report = central_diff_check(
            |vals| {
                let t = Tensor::leaf(&[1, 2], vals[0].clone())?;
                t.mul(&t)?.sum()?.item()
            },
            &[vec![3.0, -2.0]],
            &[g],
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(report.passes(1e-9), "max err {}", report.max_err);
    }
}
