use nalgebra::{DMatrix, DVector};

use crate::HarnessError;

fn bad(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(vec![msg.into()])
}

/// `|theta_hat_j - theta_j| / sd` averaged over `columns`.
pub fn standardized_abs_bias(
    estimate: &DVector<f64>,
    truth: &DVector<f64>,
    columns: &[usize],
    standardizer: f64,
) -> Result<f64, HarnessError> {
    if !(standardizer > 0.0) || !standardizer.is_finite() {
        return Err(bad(format!("standardizer must be positive, got {standardizer}")));
    }
    if estimate.len() != truth.len() || columns.is_empty() || columns.iter().any(|&c| c >= estimate.len()) {
        return Err(bad("estimate, truth and columns do not conform"));
    }
    let total: f64 = columns.iter().map(|&c| (estimate[c] - truth[c]).abs()).sum();
    Ok(total / standardizer / columns.len() as f64)
}

/// Signed version of [`standardized_abs_bias`].
pub fn standardized_mean_error(
    estimate: &DVector<f64>,
    truth: &DVector<f64>,
    columns: &[usize],
    standardizer: f64,
) -> Result<f64, HarnessError> {
    standardized_abs_bias(estimate, truth, columns, standardizer)?;
    let total: f64 = columns.iter().map(|&c| estimate[c] - truth[c]).sum();
    Ok(total / standardizer / columns.len() as f64)
}

fn sample_variance(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

/// Sample variance (denominator count - 1) of the teacher effects of one
/// grade, computed per subject, averaged over subjects and divided by the
/// grade's marginal score variance. `effects[s]` holds subject `s`.
pub fn teacher_variance_fraction(effects: &[Vec<f64>], marginal_var: f64) -> Result<f64, HarnessError> {
    if effects.is_empty() || effects.iter().any(|e| e.len() < 2) {
        return Err(bad("need at least 2 teachers per grade and subject"));
    }
    if !(marginal_var > 0.0) {
        return Err(bad("marginal variance must be positive"));
    }
    let mean_var = effects.iter().map(|e| sample_variance(e)).sum::<f64>() / effects.len() as f64;
    Ok(mean_var / marginal_var)
}

/// Expected sample variance of estimates with sampling covariance `v` and
/// all true effects equal: `(tr V - 1'V1 / m) / (m - 1)`.
pub fn sampling_variance_floor(v: &DMatrix<f64>) -> f64 {
    let m = v.nrows() as f64;
    (v.trace() - v.sum() / m) / (m - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn abs_bias_cases() {
        let truth = DVector::zeros(2);
        assert_eq!(standardized_abs_bias(&truth, &truth, &[0, 1], 1.0).unwrap(), 0.0);
        let est = DVector::from_vec(vec![0.1, -0.3]);
        assert!((standardized_abs_bias(&est, &truth, &[0, 1], 1.0).unwrap() - 0.2).abs() < 1e-15);
        assert!((standardized_mean_error(&est, &truth, &[0, 1], 1.0).unwrap() + 0.1).abs() < 1e-15);
        assert!(standardized_abs_bias(&est, &truth, &[0, 1], 0.0).is_err());
    }

    #[test]
    fn variance_fraction_cases() {
        assert_eq!(teacher_variance_fraction(&[vec![0.4; 5]], 2.0).unwrap(), 0.0);
        assert_eq!(teacher_variance_fraction(&[vec![-1.0, 1.0]], 2.0).unwrap(), 1.0);
        assert!(teacher_variance_fraction(&[vec![1.0]], 2.0).is_err());
    }

    #[test]
    fn floor_of_independent_estimates() {
        let v = DMatrix::identity(4, 4) * 0.5;
        assert!((sampling_variance_floor(&v) - 0.5).abs() < 1e-15);
    }
}
