//! OLS, fixed effects, quasi-demeaned random effects, GLS with a known
//! covariance block, and feasible GLS with a moment estimate of the block.
//!
//! Normal equations are accumulated student by student in a fixed order, so
//! results are bit-identical regardless of the rayon pool size.

use std::borrow::Cow;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::covariance::BlockCovariance;
use crate::error::{PanelError, Result};
use crate::linalg::{min_eigenvalue, solve_normal, symmetrize};
use crate::panel::{demean_block, ObservationMask, PanelDesign, ScalarVarianceComponents, StudentBlock};

const CHUNK: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorTag {
    Ols,
    FixedEffects,
    ReQuasi,
    GlsKnown,
    GlsFeasible,
    ClassMeans,
}

impl EstimatorTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Ols => "OLS",
            Self::FixedEffects => "FE",
            Self::ReQuasi => "RE-quasi",
            Self::GlsKnown => "GLS-known",
            Self::GlsFeasible => "GLS-feasible",
            Self::ClassMeans => "class-means",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateResult {
    pub theta: DVector<f64>,
    /// `(Z'R^{-1}Z)^{-1}` for GLS forms, `(Z'Z)^{-1}` for OLS and the
    /// within-transformed analogue for FE.
    pub param_cov: DMatrix<f64>,
    pub tag: EstimatorTag,
    /// Estimated covariance block (feasible GLS only).
    pub r_hat: Option<DMatrix<f64>>,
}

/// Per-student contribution `(Z_i' W_i Z_i, Z_i' W_i y_i)` in the block's
/// local column coordinates.
pub(crate) type BlockTerms = (DMatrix<f64>, DVector<f64>);

/// Scatters per-student terms from `weigh` into the global `k x k` normal
/// matrix and `k` right-hand side.
pub(crate) fn accumulate<F>(design: &PanelDesign, y: &DVector<f64>, weigh: F) -> Result<(DMatrix<f64>, DVector<f64>)>
where
    F: Fn(usize, &StudentBlock, DVector<f64>) -> Result<BlockTerms> + Sync,
{
    design.check_response(y)?;
    let k = design.k();
    let idx: Vec<usize> = (0..design.n_students()).collect();
    let partials: Vec<Result<(DMatrix<f64>, DVector<f64>)>> = idx
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = DMatrix::zeros(k, k);
            let mut b = DVector::zeros(k);
            for &i in chunk {
                let block = &design.blocks()[i];
                let yi = design.student_values(y, i).into_owned();
                let (gl, bl) = weigh(i, block, yi)?;
                for (la, &ga) in block.cols.iter().enumerate() {
                    b[ga] += bl[la];
                    for (lb, &gb) in block.cols.iter().enumerate() {
                        g[(ga, gb)] += gl[(la, lb)];
                    }
                }
            }
            Ok((g, b))
        })
        .collect();
    let mut g = DMatrix::zeros(k, k);
    let mut b = DVector::zeros(k);
    for p in partials {
        let (pg, pb) = p?;
        g += pg;
        b += pb;
    }
    symmetrize(&mut g);
    Ok((g, b))
}

fn weighted_terms(block: &StudentBlock, w: &DMatrix<f64>, yi: &DVector<f64>) -> BlockTerms {
    let wz = w * &block.z;
    let zt = block.z.transpose();
    (&zt * wz, zt * (w * yi))
}

fn finish(g: &DMatrix<f64>, b: &DVector<f64>, scale: f64, tag: EstimatorTag) -> Result<EstimateResult> {
    let (theta, inv) = solve_normal(g, b)?;
    Ok(EstimateResult {
        theta,
        param_cov: inv * scale,
        tag,
        r_hat: None,
    })
}

/// Ordinary least squares `(Z'Z)^{-1} Z'Y`.
pub fn ols(design: &PanelDesign, y: &DVector<f64>) -> Result<EstimateResult> {
    let (g, b) = accumulate(design, y, |_, block, yi| {
        let zt = block.z.transpose();
        Ok((&zt * &block.z, zt * &yi))
    })?;
    finish(&g, &b, 1.0, EstimatorTag::Ols)
}

/// Fixed effects: OLS on within-student demeaned `Z` and `Y`.
pub fn fixed_effects(design: &PanelDesign, y: &DVector<f64>) -> Result<EstimateResult> {
    let (g, b) = accumulate(design, y, |_, block, yi| {
        let zd = demean_block(&block.z);
        let mean = yi.mean();
        let yd = yi.add_scalar(-mean);
        let zt = zd.transpose();
        Ok((&zt * &zd, zt * yd))
    })?;
    finish(&g, &b, 1.0, EstimatorTag::FixedEffects)
}

/// `gamma = rho / (1 + rho (T - 1))` and `gamma * T`.
pub fn gamma(vc: &ScalarVarianceComponents, n_times: usize) -> (f64, f64) {
    let rho = vc.rho();
    let g = rho / (1.0 + rho * (n_times as f64 - 1.0));
    (g, g * n_times as f64)
}

fn require_balanced(design: &PanelDesign) -> Result<()> {
    if design.is_balanced() {
        Ok(())
    } else {
        Err(PanelError::Unbalanced(
            "quasi-demeaning needs a common T; use gls_known_r for unbalanced data".into(),
        ))
    }
}

/// Regression on quasi-demeaned data, `(I - gammaT H_D)`, for an arbitrary
/// `gamma_t`. `gamma_t = 0` is OLS and `gamma_t = 1` is fixed effects.
pub fn quasi_demeaned(design: &PanelDesign, y: &DVector<f64>, gamma_t: f64) -> Result<EstimateResult> {
    require_balanced(design)?;
    let per_row = gamma_t / design.n_times() as f64;
    let (g, b) = accumulate(design, y, |_, block, yi| {
        let zt = block.z.transpose();
        let col_sums = block.z.row_sum().transpose();
        let y_sum = yi.sum();
        let mut g = &zt * &block.z;
        g -= &col_sums * col_sums.transpose() * per_row;
        let mut b = &zt * &yi;
        b -= DMatrix::from_column_slice(col_sums.len(), 1, col_sums.as_slice()) * (per_row * y_sum);
        Ok((g, b))
    })?;
    finish(&g, &b, 1.0, EstimatorTag::ReQuasi)
}

/// Random-effects estimator in its quasi-demeaned form. Equal to GLS with
/// `R1 = nu2 J + sigma2 I` on balanced panels.
pub fn re_quasi_demeaned(
    design: &PanelDesign,
    y: &DVector<f64>,
    vc: &ScalarVarianceComponents,
) -> Result<EstimateResult> {
    require_balanced(design)?;
    let (_, gamma_t) = gamma(vc, design.n_times());
    let mut fit = quasi_demeaned(design, y, gamma_t)?;
    fit.param_cov *= vc.sigma2();
    Ok(fit)
}

fn check_mask(design: &PanelDesign, mask: Option<&ObservationMask>) -> Result<()> {
    let Some(mask) = mask else { return Ok(()) };
    if mask.n_students() != design.n_students() || mask.n_times() != design.n_times() {
        return Err(PanelError::Dimension("mask does not match design".into()));
    }
    for (i, block) in design.blocks().iter().enumerate() {
        if mask.observed(i) != block.times {
            return Err(PanelError::Dimension(format!(
                "student {i}: design rows disagree with the observation mask"
            )));
        }
    }
    Ok(())
}

/// GLS with a known covariance block. Each student uses the inverse of the
/// block restricted to its observed measurements; the `nT x nT` matrix is
/// never formed.
pub fn gls_known_r(
    design: &PanelDesign,
    y: &DVector<f64>,
    cov: &BlockCovariance,
    mask: Option<&ObservationMask>,
) -> Result<EstimateResult> {
    if cov.n_times() != design.n_times() {
        return Err(PanelError::Dimension(format!(
            "covariance block is {0}x{0}, design has T = {1}",
            cov.n_times(),
            design.n_times()
        )));
    }
    check_mask(design, mask)?;
    let (g, b) = accumulate(design, y, |_, block, yi| {
        let w: Cow<'_, DMatrix<f64>> = cov.inverse_on(&block.times)?;
        Ok(weighted_terms(block, &w, &yi))
    })?;
    finish(&g, &b, 1.0, EstimatorTag::GlsKnown)
}

/// Sampling covariance of the OLS coefficients when the true per-student
/// covariance is `cov`: `(Z'Z)^{-1} (sum_i Z_i' R_i Z_i) (Z'Z)^{-1}`.
pub fn ols_sampling_cov(design: &PanelDesign, cov: &BlockCovariance) -> Result<DMatrix<f64>> {
    let dummy = DVector::zeros(design.n_rows());
    let (zz, _) = accumulate(design, &dummy, |_, block, _| {
        let zt = block.z.transpose();
        Ok((&zt * &block.z, DVector::zeros(block.cols.len())))
    })?;
    let (meat, _) = accumulate(design, &dummy, |_, block, _| {
        let r = cov.r().select_rows(&block.times).select_columns(&block.times);
        let zt = block.z.transpose();
        Ok((&zt * r * &block.z, DVector::zeros(block.cols.len())))
    })?;
    let (_, bread) = solve_normal(&zz, &DVector::zeros(design.k()))?;
    let mut out = &bread * meat * &bread;
    symmetrize(&mut out);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for MomOptions {
    fn default() -> Self {
        Self {
            max_iter: 20,
            tol: 1e-6,
        }
    }
}

/// Result of the iterated residual moment estimate of `R1`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomEstimate {
    /// Positive definite estimate used downstream.
    pub r_hat: DMatrix<f64>,
    /// Last residual cross-product average before any ridge.
    pub raw: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub ridged: bool,
}

fn residual_moment(design: &PanelDesign, y: &DVector<f64>, theta: &DVector<f64>) -> DMatrix<f64> {
    let t = design.n_times();
    let n = design.n_students();
    let mut m = DMatrix::zeros(t, t);
    for (i, block) in design.blocks().iter().enumerate() {
        let coef = DVector::from_iterator(block.cols.len(), block.cols.iter().map(|&c| theta[c]));
        let e = design.student_values(y, i) - &block.z * coef;
        m += &e * e.transpose();
    }
    m /= n as f64;
    symmetrize(&mut m);
    m
}

/// Adds `1e-8 * trace / T` to the diagonal when the estimate is not safely
/// positive definite.
fn make_pd(raw: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let t = raw.nrows();
    let scale = raw.trace() / t as f64;
    let min_eig = min_eigenvalue(raw);
    let largest = crate::linalg::sorted_eigen(raw).0[t - 1];
    if min_eig > 1e-12 * largest.max(0.0) && min_eig > 0.0 && raw.clone().cholesky().is_some() {
        return (raw.clone(), false);
    }
    let ridge = 1e-8 * if scale > 0.0 { scale } else { 1.0 };
    (raw + DMatrix::identity(t, t) * ridge, true)
}

/// Iterated method-of-moments estimate of `R1` from balanced data: OLS
/// residuals give a first `R1`, GLS with that estimate gives new residuals,
/// and so on until the max-abs change drops below `tol`.
pub fn estimate_r_mom(design: &PanelDesign, y: &DVector<f64>, opts: MomOptions) -> Result<MomEstimate> {
    require_balanced(design)
        .map_err(|_| PanelError::Unbalanced("moment estimate of R1 needs a balanced panel".into()))?;
    let (n, t) = (design.n_students(), design.n_times());
    if n <= t {
        return Err(PanelError::InsufficientStudents { n, t });
    }
    let mut theta = ols(design, y)?.theta;
    let mut prev: Option<DMatrix<f64>> = None;
    let mut iterations = 0;
    let mut converged = false;
    loop {
        iterations += 1;
        let raw = residual_moment(design, y, &theta);
        let change = prev.as_ref().map(|p| crate::linalg::max_abs_diff(p, &raw));
        let (r_hat, ridged) = make_pd(&raw);
        if change.is_some_and(|c| c < opts.tol) {
            converged = true;
        }
        if converged || iterations >= opts.max_iter {
            return Ok(MomEstimate {
                r_hat,
                raw,
                iterations,
                converged,
                ridged,
            });
        }
        let cov = BlockCovariance::unstructured(r_hat)?;
        theta = gls_known_r(design, y, &cov, None)?.theta;
        prev = Some(raw);
    }
}

/// Feasible GLS: moment estimate of `R1`, then GLS with it.
pub fn feasible_gls(design: &PanelDesign, y: &DVector<f64>) -> Result<EstimateResult> {
    feasible_gls_with(design, y, MomOptions::default())
}

pub fn feasible_gls_with(design: &PanelDesign, y: &DVector<f64>, opts: MomOptions) -> Result<EstimateResult> {
    let est = estimate_r_mom(design, y, opts)?;
    let cov = BlockCovariance::unstructured(est.r_hat.clone())?;
    let mut fit = gls_known_r(design, y, &cov, None)?;
    fit.tag = EstimatorTag::GlsFeasible;
    fit.r_hat = Some(est.r_hat);
    Ok(fit)
}

/// Arithmetic mean of `scores` within each class `0..n_classes`.
pub fn class_means(scores: &[f64], class_of: &[usize], n_classes: usize) -> Result<Vec<f64>> {
    if scores.len() != class_of.len() {
        return Err(PanelError::Dimension("one class label per score".into()));
    }
    let mut sums = vec![0.0; n_classes];
    let mut counts = vec![0usize; n_classes];
    for (&s, &c) in scores.iter().zip(class_of) {
        if c >= n_classes {
            return Err(PanelError::Dimension(format!("class {c} out of range")));
        }
        sums[c] += s;
        counts[c] += 1;
    }
    if let Some(class) = counts.iter().position(|&c| c == 0) {
        return Err(PanelError::EmptyClass { class });
    }
    Ok(sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{assemble_block_covariance, HeterogeneityModel};

    fn small_design() -> (PanelDesign, DVector<f64>) {
        let (n, t) = (5, 3);
        let z = DMatrix::from_fn(
            n * t,
            2,
            |r, c| {
                if c == 0 {
                    1.0
                } else {
                    ((r * 7 + 3) % 5) as f64 * 0.5
                }
            },
        );
        let design = PanelDesign::from_balanced(&z, n, t).unwrap();
        let y = DVector::from_fn(n * t, |r, _| (r as f64 * 0.91).cos() + (r / t) as f64);
        (design, y)
    }

    #[test]
    fn ols_recovers_exact_fit() {
        let (design, _) = small_design();
        let theta = DVector::from_vec(vec![0.3, -1.7]);
        let y = design.to_dense() * &theta;
        let fit = ols(&design, &y).unwrap();
        assert!((fit.theta - theta).amax() < 1e-10);
    }

    #[test]
    fn intercept_only_is_mean() {
        let z = DMatrix::from_element(6, 1, 1.0);
        let design = PanelDesign::from_balanced(&z, 3, 2).unwrap();
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0, 9.0]);
        let fit = ols(&design, &y).unwrap();
        assert!((fit.theta[0] - 4.0).abs() < 1e-14);
    }

    #[test]
    fn ols_names_dependent_column() {
        let z = DMatrix::from_fn(6, 3, |r, c| match c {
            0 => 1.0,
            1 => r as f64,
            _ => 2.0 + 3.0 * r as f64,
        });
        let design = PanelDesign::from_balanced(&z, 3, 2).unwrap();
        let err = ols(&design, &DVector::zeros(6)).unwrap_err();
        assert_eq!(err, PanelError::RankDeficient { columns: vec![2] });
    }

    #[test]
    fn fe_removes_student_effects() {
        let (n, t) = (6, 4);
        let z = DMatrix::from_fn(n * t, 2, |r, c| ((r * (3 + c) + c) % 7) as f64);
        let design = PanelDesign::from_balanced(&z, n, t).unwrap();
        let theta = DVector::from_vec(vec![1.25, -0.5]);
        let y = DVector::from_fn(n * t, |r, _| (r / t) as f64 * 10.0 - 3.0) + &z * &theta;
        let fit = fixed_effects(&design, &y).unwrap();
        assert!((fit.theta - theta).amax() < 1e-9);
    }

    #[test]
    fn fe_rejects_time_invariant_column() {
        let (n, t) = (4, 3);
        let z = DMatrix::from_fn(n * t, 2, |r, c| if c == 0 { (r % 3) as f64 } else { (r / t) as f64 });
        let design = PanelDesign::from_balanced(&z, n, t).unwrap();
        let err = fixed_effects(&design, &DVector::zeros(n * t)).unwrap_err();
        assert_eq!(err, PanelError::RankDeficient { columns: vec![1] });
    }

    #[test]
    fn fe_matches_two_stage_regression() {
        let (design, y) = small_design();
        let z = design.to_dense();
        let map = design.student_of();
        let zr = crate::panel::within_projection(&z.columns(1, 1).into_owned(), &map).unwrap();
        let yr = crate::panel::within_projection(&DMatrix::from_column_slice(y.len(), 1, y.as_slice()), &map).unwrap();
        let expected = (zr.transpose() * &yr)[(0, 0)] / (zr.transpose() * &zr)[(0, 0)];
        // intercept is absorbed, so fit on the varying column only
        let blocks = design
            .blocks()
            .iter()
            .map(|b| crate::panel::StudentBlock::dense(b.z.columns(1, 1).into_owned()))
            .collect();
        let d1 = PanelDesign::new(3, 1, blocks).unwrap();
        let fit = fixed_effects(&d1, &y).unwrap();
        assert!((fit.theta[0] - expected).abs() < 1e-10);
    }

    #[test]
    fn gamma_values() {
        let zero = ScalarVarianceComponents::from_rho(0.0).unwrap();
        assert_eq!(gamma(&zero, 5), (0.0, 0.0));
        let hi = ScalarVarianceComponents::from_rho(1.0 - 1e-9).unwrap();
        assert!((gamma(&hi, 7).1 - 1.0).abs() < 1e-7);
    }

    #[test]
    fn re_zero_rho_is_ols() {
        let (design, y) = small_design();
        let vc = ScalarVarianceComponents::new(0.0, 1.0).unwrap();
        let re = re_quasi_demeaned(&design, &y, &vc).unwrap();
        let o = ols(&design, &y).unwrap();
        assert_eq!(re.theta, o.theta);
    }

    #[test]
    fn full_demeaning_is_fe() {
        let (n, t) = (7, 4);
        let z = DMatrix::from_fn(n * t, 2, |r, c| ((r * (5 + c) + 2 * c) % 9) as f64 * 0.3);
        let design = PanelDesign::from_balanced(&z, n, t).unwrap();
        let y = DVector::from_fn(n * t, |r, _| (r as f64).sin() + (r / t) as f64);
        let q = quasi_demeaned(&design, &y, 1.0).unwrap();
        let fe = fixed_effects(&design, &y).unwrap();
        assert!((q.theta - fe.theta).amax() < 1e-8);
    }

    #[test]
    fn gls_spherical_is_ols() {
        let (design, y) = small_design();
        let cov = BlockCovariance::unstructured(DMatrix::identity(3, 3) * 2.5).unwrap();
        let g = gls_known_r(&design, &y, &cov, None).unwrap();
        let o = ols(&design, &y).unwrap();
        assert!((g.theta - o.theta).amax() < 1e-12);
    }

    #[test]
    fn re_rejects_unbalanced() {
        let (design, y) = small_design();
        let mut present = vec![vec![true; 3]; 5];
        present[2][1] = false;
        let mask = ObservationMask::new(3, present).unwrap();
        let (d2, y2) = design.apply_mask(&y, &mask).unwrap();
        let vc = ScalarVarianceComponents::new(0.5, 0.5).unwrap();
        assert!(matches!(
            re_quasi_demeaned(&d2, &y2, &vc),
            Err(PanelError::Unbalanced(_))
        ));
        let h = HeterogeneityModel::standard(3, 0.5, 0.5).unwrap();
        let cov = assemble_block_covariance(&h).unwrap();
        assert!(gls_known_r(&d2, &y2, &cov, Some(&mask)).is_ok());
        let wrong = ObservationMask::all_present(5, 3);
        assert!(gls_known_r(&d2, &y2, &cov, Some(&wrong)).is_err());
    }

    #[test]
    fn mom_needs_more_students_than_times() {
        let z = DMatrix::from_element(9, 1, 1.0);
        let design = PanelDesign::from_balanced(&z, 3, 3).unwrap();
        let err = estimate_r_mom(&design, &DVector::zeros(9), MomOptions::default()).unwrap_err();
        assert_eq!(err, PanelError::InsufficientStudents { n: 3, t: 3 });
    }

    #[test]
    fn class_mean_cases() {
        assert_eq!(class_means(&[1.0, 2.0, 3.0], &[0, 0, 0], 1).unwrap(), vec![2.0]);
        assert_eq!(class_means(&[4.0; 4], &[0, 1, 1, 0], 2).unwrap(), vec![4.0, 4.0]);
        assert_eq!(
            class_means(&[1.0], &[0], 2).unwrap_err(),
            PanelError::EmptyClass { class: 1 }
        );
    }
}
