use super::{Matrix, NumericsError};

/// A deterministic scalar function of a list of parameter tensors together
/// with its reverse-mode gradient.
pub trait Objective {
    fn value(&self, params: &[Matrix]) -> Result<f64, NumericsError>;
    fn gradient(&self, params: &[Matrix]) -> Result<Vec<Matrix>, NumericsError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `(tensor index, flat entry index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub per_tensor: Vec<f64>,
    pub entries_checked: usize,
}

/// Relative error with denominator `max(|a|, |b|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the analytic gradient against central differences
/// `(f(θ+h) − f(θ−h)) / 2h`, entry by entry.
pub fn finite_diff_check(objective: &impl Objective, params: &[Matrix], h: f64) -> Result<GradCheckReport, NumericsError> {
    let analytic = objective.gradient(params)?;
    if analytic.len() != params.len() {
        return Err(NumericsError::GradientCount { expected: params.len(), found: analytic.len() });
    }
    let mut work = params.to_vec();
    let mut report = GradCheckReport { max_relative_error: 0.0, worst: None, per_tensor: vec![0.0; params.len()], entries_checked: 0 };
    for t in 0..params.len() {
        if analytic[t].shape() != params[t].shape() {
            return Err(NumericsError::Shape { op: "finite_diff_check", left: params[t].shape(), right: analytic[t].shape() });
        }
        for k in 0..params[t].len() {
            let original = work[t].data()[k];
            work[t].data_mut()[k] = original + h;
            let plus = objective.value(&work)?;
            work[t].data_mut()[k] = original - h;
            let minus = objective.value(&work)?;
            work[t].data_mut()[k] = original;

            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(analytic[t].data()[k], numeric);
            report.entries_checked += 1;
            if err > report.per_tensor[t] {
                report.per_tensor[t] = err;
            }
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = err;
                report.worst = Some((t, k));
            }
        }
    }
    Ok(report)
}
