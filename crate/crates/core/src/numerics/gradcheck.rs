use super::Tensor;
use crate::error::{Error, Result};

/// Outcome of comparing analytic gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub max_rel_err: f64,
    /// `(input index, flat element index)` of the worst element.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub pass: bool,
    /// Set when an evaluation produced a non-finite loss.
    pub failure: Option<String>,
}

/// Relative error with the `max(|a|, |b|, 1e-8)` denominator.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Checks `analytic[i]` against `(f(x + h e_j) - f(x - h e_j)) / 2h` for every
/// scalar element `j` of every input `i`.
///
/// Non-finite evaluations are reported as a failed check rather than an error.
pub fn grad_check<F>(
    f: F,
    inputs: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    step: f64,
    tolerance: f64,
) -> Result<GradReport>
where
    F: Fn(&[Tensor<f64>]) -> f64,
{
    if !(1e-7..=1e-3).contains(&step) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must lie in [1e-7, 1e-3], got {step}"
        )));
    }
    if inputs.len() != analytic.len() {
        return Err(Error::InvalidArgument(format!(
            "{} inputs but {} analytic gradients",
            inputs.len(),
            analytic.len()
        )));
    }
    for (i, (x, g)) in inputs.iter().zip(analytic).enumerate() {
        x.same_shape(g, &format!("gradient {i}"))?;
        if !x.all_finite() {
            return Err(Error::NonFinite(format!("grad_check input {i}")));
        }
    }

    let mut probe = inputs.to_vec();
    let mut report = GradReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
        pass: true,
        failure: None,
    };
    for i in 0..inputs.len() {
        for j in 0..inputs[i].len() {
            let x0 = inputs[i].data()[j];
            probe[i].data_mut()[j] = x0 + step;
            let up = f(&probe);
            probe[i].data_mut()[j] = x0 - step;
            let down = f(&probe);
            probe[i].data_mut()[j] = x0;
            if !up.is_finite() || !down.is_finite() {
                report.pass = false;
                report.failure = Some(format!("non-finite loss perturbing input {i} element {j}"));
                return Ok(report);
            }
            let numeric = (up - down) / (2.0 * step);
            let err = rel_err(analytic[i].data()[j], numeric);
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = err;
                report.worst = Some((i, j));
            }
        }
    }
    report.pass = report.max_rel_err < tolerance;
    Ok(report)
}
