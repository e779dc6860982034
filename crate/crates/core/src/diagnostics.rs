//! Numerical checks of the bias compression result: the matrix `R1^{-1} A1`,
//! the two sufficient conditions on `A1` and `Psi1`, predicted GLS bias under
//! selection, the row-sum condition on `(Z'R^{-1}Z)^{-1} Z'`, and the
//! eigenvalue lemma used in the proof.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Gamma};

use crate::covariance::{assemble_block_covariance, woodbury_parts, BlockCovariance, HeterogeneityModel};
use crate::error::{PanelError, Result};
use crate::estimators::{accumulate, gamma};
use crate::linalg::{max_abs, min_eigenvalue, solve_normal, sorted_eigen, sym_inv_sqrt, sym_sqrt, EIGEN_FLOOR};
use crate::panel::{PanelDesign, ScalarVarianceComponents};
use crate::rng::stream_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct CompressionMatrix {
    /// `R1^{-1} A1`, `T x d`.
    pub matrix: DMatrix<f64>,
    pub max_abs: f64,
}

/// `R1^{-1} A1` through the factorization `Psi^{-1/2} U L* V' S^{-1/2}`
/// where `X = Psi^{-1/2} A S^{1/2} = U L^{1/2} V'` and
/// `L* = diag(sqrt(l_m) / (1 + l_m))`.
pub fn bias_compression_matrix(h: &HeterogeneityModel) -> Result<CompressionMatrix> {
    let parts = woodbury_parts(h.loadings(), h.factor_cov(), h.residual_cov())?;
    let d = h.n_factors();
    if d == 0 {
        return Ok(CompressionMatrix {
            matrix: DMatrix::zeros(h.n_times(), 0),
            max_abs: 0.0,
        });
    }
    let svd = parts.x.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V'");
    let shrink = DMatrix::from_diagonal(&svd.singular_values.map(|s| s / (1.0 + s * s)));
    let s_inv_sqrt = sym_inv_sqrt(h.factor_cov(), "S1")?;
    let matrix = &parts.psi_inv_sqrt * u * shrink * v_t * s_inv_sqrt;
    let max_abs = max_abs(&matrix);
    Ok(CompressionMatrix { matrix, max_abs })
}

/// `R1^{-1} A1` by multiplying the assembled inverse into `A1`.
pub fn bias_compression_direct(h: &HeterogeneityModel) -> Result<DMatrix<f64>> {
    let cov = assemble_block_covariance(h)?;
    Ok(cov.r_inv() * h.loadings())
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TheoremProfile {
    pub t_grid: Vec<usize>,
    /// Smallest eigenvalue of `A1' Psi1^{-1} A1`.
    pub lambda_min: Vec<f64>,
    /// Largest absolute row sum of `Psi1^{-1/2}`.
    pub row_sum_max: Vec<f64>,
    /// Largest absolute element of `R1^{-1} A1`.
    pub compression_max: Vec<f64>,
}

/// Evaluates both sufficient conditions and the compression level for a
/// family of models indexed by `T`.
pub fn theorem_condition_profile<F>(family: F, t_grid: &[usize]) -> Result<TheoremProfile>
where
    F: Fn(usize) -> Result<HeterogeneityModel>,
{
    let mut profile = TheoremProfile::default();
    for &t in t_grid {
        let h = family(t)?;
        if h.n_times() != t {
            return Err(PanelError::Dimension(format!(
                "family returned a model with T = {} for T = {t}",
                h.n_times()
            )));
        }
        let parts = woodbury_parts(h.loadings(), h.factor_cov(), h.residual_cov())?;
        let pa = &parts.psi_inv_sqrt * h.loadings();
        let info = pa.transpose() * &pa;
        let row_sum_max = parts
            .psi_inv_sqrt
            .row_iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        profile.t_grid.push(t);
        profile.lambda_min.push(min_eigenvalue(&info));
        profile.row_sum_max.push(row_sum_max);
        profile.compression_max.push(bias_compression_matrix(&h)?.max_abs);
    }
    Ok(profile)
}

/// Model families indexed by the number of measurements.
pub mod families {
    use super::*;

    /// One student effect entering every score with weight `nu`, unit factor
    /// variance, spherical residuals.
    pub fn standard(t: usize, nu: f64, sigma2: f64) -> Result<HeterogeneityModel> {
        HeterogeneityModel::new(
            DMatrix::from_element(t, 1, nu),
            DMatrix::identity(1, 1),
            DMatrix::identity(t, t) * sigma2,
        )
    }

    /// Two factors with weight moving linearly from the first to the second:
    /// row `t + 1` is `(T - 1 - t, t) / (T - 1)`.
    pub fn ramp(t: usize, sigma2: f64, factor_cov: DMatrix<f64>) -> Result<HeterogeneityModel> {
        if t < 2 {
            return Err(PanelError::InvalidParameter("ramp loadings need T >= 2".into()));
        }
        let a = DMatrix::from_fn(t, 2, |i, j| {
            let w = i as f64 / (t - 1) as f64;
            if j == 0 {
                1.0 - w
            } else {
                w
            }
        });
        HeterogeneityModel::new(a, factor_cov, DMatrix::identity(t, t) * sigma2)
    }

    /// Random linear growth: columns `1` and `(1, ..., T)`.
    pub fn linear_growth(t: usize, sigma2: f64, factor_cov: DMatrix<f64>) -> Result<HeterogeneityModel> {
        let a = DMatrix::from_fn(t, 2, |i, j| if j == 0 { 1.0 } else { (i + 1) as f64 });
        HeterogeneityModel::new(a, factor_cov, DMatrix::identity(t, t) * sigma2)
    }

    /// Single factor with weights evenly spaced from `lo` to `hi` and residual
    /// variances `1 - a_t^2`.
    pub fn varying_weights(t: usize, lo: f64, hi: f64) -> Result<HeterogeneityModel> {
        let a: Vec<f64> = (0..t)
            .map(|i| {
                if t == 1 {
                    lo
                } else {
                    lo + (hi - lo) * i as f64 / (t - 1) as f64
                }
            })
            .collect();
        HeterogeneityModel::new(
            DMatrix::from_column_slice(t, 1, &a),
            DMatrix::identity(1, 1),
            DMatrix::from_diagonal(&DVector::from_iterator(t, a.iter().map(|v| 1.0 - v * v))),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirichletReport {
    /// `(1/T) A1' Psi1^{-1} A1` for the sampled loadings.
    pub empirical: DMatrix<f64>,
    /// `(1/sigma^2) E[x x']` estimated from `n_mc` independent draws.
    pub mc_oracle: DMatrix<f64>,
    /// `(1/sigma^2)(Omega + c w w')` with the printed `Omega` and `c`.
    pub printed_limit: DMatrix<f64>,
    pub deviation_from_mc: f64,
    pub deviation_from_printed: f64,
    /// Max-abs gap between the Monte Carlo oracle and the printed limit.
    pub printed_vs_mc: f64,
    pub empirical_min_eigenvalue: f64,
}

fn dirichlet_draw(alpha: &[Gamma<f64>], rng: &mut impl rand::Rng) -> DVector<f64> {
    let g = DVector::from_iterator(alpha.len(), alpha.iter().map(|d| d.sample(rng)));
    let total = g.sum();
    g / total
}

/// Rows of `A1` drawn from Dirichlet(`omega`), `Psi1 = sigma2 I`. Compares
/// `(1/T) A1' Psi1^{-1} A1` to a Monte Carlo second-moment oracle and to the
/// printed closed-form limit; neither comparison is asserted here.
pub fn dirichlet_limit_check(omega: &[f64], t: usize, sigma2: f64, seed: u64, n_mc: usize) -> Result<DirichletReport> {
    if omega.is_empty() || omega.iter().any(|&w| !(w > 0.0)) {
        return Err(PanelError::InvalidParameter(
            "Dirichlet parameters must be positive".into(),
        ));
    }
    if !(sigma2 > 0.0) || t == 0 || n_mc == 0 {
        return Err(PanelError::InvalidParameter(
            "need sigma2 > 0, T >= 1, n_mc >= 1".into(),
        ));
    }
    let d = omega.len();
    let gammas: Vec<Gamma<f64>> = omega
        .iter()
        .map(|&w| Gamma::new(w, 1.0).map_err(|e| PanelError::InvalidParameter(e.to_string())))
        .collect::<Result<_>>()?;

    let mut rng = stream_rng(seed, 0);
    let mut empirical = DMatrix::zeros(d, d);
    for _ in 0..t {
        let x = dirichlet_draw(&gammas, &mut rng);
        empirical += &x * x.transpose();
    }
    empirical /= t as f64 * sigma2;

    let mut oracle_rng = stream_rng(seed, 1);
    let mut mc_oracle = DMatrix::zeros(d, d);
    for _ in 0..n_mc {
        let x = dirichlet_draw(&gammas, &mut oracle_rng);
        mc_oracle += &x * x.transpose();
    }
    mc_oracle /= n_mc as f64 * sigma2;

    let w0: f64 = omega.iter().sum();
    let w = DVector::from_column_slice(omega);
    let big_omega = DMatrix::from_diagonal(&w.map(|wj| w0 * wj / (w0 * w0 * (w0 + 1.0))));
    let c = (w0 * (w0 + 1.0) - 1.0) / (w0 * w0 * (w0 + 1.0));
    let printed_limit = (big_omega + &w * w.transpose() * c) / sigma2;

    Ok(DirichletReport {
        deviation_from_mc: max_abs(&(&empirical - &mc_oracle)),
        deviation_from_printed: max_abs(&(&empirical - &printed_limit)),
        printed_vs_mc: max_abs(&(&mc_oracle - &printed_limit)),
        empirical_min_eigenvalue: min_eigenvalue(&empirical),
        empirical,
        mc_oracle,
        printed_limit,
    })
}

/// Conditional means `E(delta_i | Z)` for every student, each of length `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionSpec {
    pub cond_mean: Vec<DVector<f64>>,
}

impl SelectionSpec {
    pub fn zeros(n: usize, d: usize) -> Self {
        Self {
            cond_mean: vec![DVector::zeros(d); n],
        }
    }
}

/// Heterogeneity assumed when predicting bias.
#[derive(Debug, Clone, Copy)]
pub enum BiasModel<'a> {
    /// Factor model; `cov` must carry its source `A1`.
    General(&'a BlockCovariance),
    /// Standard single-effect model with known variance components.
    Standard(ScalarVarianceComponents),
}

/// Predicted bias `E(theta_hat | Z) - theta` of the GLS estimator,
/// `(Z'R^{-1}Z)^{-1} Z'R^{-1} A E(delta | Z)`. Under [`BiasModel::Standard`]
/// the quasi-demeaned form `(1 - gammaT)(Z'(I - gammaT H_D)Z)^{-1} Z'D E(delta | Z)`
/// is used instead.
pub fn expected_gls_bias(design: &PanelDesign, model: BiasModel<'_>, sel: &SelectionSpec) -> Result<DVector<f64>> {
    if sel.cond_mean.len() != design.n_students() {
        return Err(PanelError::Dimension(format!(
            "selection spec covers {} students, design has {}",
            sel.cond_mean.len(),
            design.n_students()
        )));
    }
    let dummy = DVector::zeros(design.n_rows());
    match model {
        BiasModel::General(cov) => {
            let h = cov
                .source()
                .ok_or_else(|| PanelError::InvalidParameter("covariance has no factor loadings".into()))?;
            if cov.n_times() != design.n_times() {
                return Err(PanelError::Dimension("covariance and design disagree on T".into()));
            }
            let d = h.n_factors();
            if let Some(bad) = sel.cond_mean.iter().position(|m| m.len() != d) {
                return Err(PanelError::Dimension(format!(
                    "student {bad}: conditional mean is not length {d}"
                )));
            }
            let (g, b) = accumulate(design, &dummy, |i, block, _| {
                let w = cov.inverse_on(&block.times)?;
                let a = h.loadings().select_rows(&block.times);
                let zt_w = block.z.transpose() * w.as_ref();
                let shift = &a * &sel.cond_mean[i];
                Ok((&zt_w * &block.z, &zt_w * shift))
            })?;
            Ok(solve_normal(&g, &b)?.0)
        }
        BiasModel::Standard(vc) => {
            if !design.is_balanced() {
                return Err(PanelError::Unbalanced(
                    "standard-model bias needs a balanced panel".into(),
                ));
            }
            if let Some(bad) = sel.cond_mean.iter().position(|m| m.len() != 1) {
                return Err(PanelError::Dimension(format!(
                    "student {bad}: conditional mean is not a scalar"
                )));
            }
            let (_, gamma_t) = gamma(&vc, design.n_times());
            let per_row = gamma_t / design.n_times() as f64;
            let (g, b) = accumulate(design, &dummy, |i, block, _| {
                let zt = block.z.transpose();
                let col_sums = block.z.row_sum().transpose();
                let mut g = &zt * &block.z;
                g -= &col_sums * col_sums.transpose() * per_row;
                let b = col_sums * sel.cond_mean[i][0];
                Ok((g, b))
            })?;
            Ok(solve_normal(&g, &b)?.0 * (1.0 - gamma_t))
        }
    }
}

/// Largest absolute row sum of `(Z'R^{-1}Z)^{-1} Z'` (a `k x N` matrix, sums
/// over the `N` stacked observations).
pub fn rowsum_condition(design: &PanelDesign, cov: &BlockCovariance) -> Result<f64> {
    Ok(rowsum_profile(design, cov)?.into_iter().fold(0.0, f64::max))
}

/// Absolute row sums of `(Z'R^{-1}Z)^{-1} Z'`, one per coefficient.
pub fn rowsum_profile(design: &PanelDesign, cov: &BlockCovariance) -> Result<Vec<f64>> {
    let dummy = DVector::zeros(design.n_rows());
    let (g, _) = accumulate(design, &dummy, |_, block, _| {
        let w = cov.inverse_on(&block.times)?;
        let zt = block.z.transpose();
        Ok((&zt * w.as_ref() * &block.z, DVector::zeros(block.cols.len())))
    })?;
    let (_, inv) = solve_normal(&g, &DVector::zeros(design.k()))?;
    let k = design.k();
    let mut sums = vec![0.0; k];
    for block in design.blocks() {
        let m_cols = inv.select_columns(&block.cols);
        let contrib = m_cols * block.z.transpose();
        for j in 0..k {
            sums[j] += contrib.row(j).iter().map(|v| v.abs()).sum::<f64>();
        }
    }
    Ok(sums)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lemma1Report {
    /// Smallest eigenvalue of `M`.
    pub lambda_min: f64,
    /// Smallest eigenvalue of `B^{1/2} M B^{1/2}`.
    pub omega_min: f64,
    pub psi_min: f64,
    pub psi_max: f64,
    /// `omega >= psi_min * lambda`.
    pub lower_holds: bool,
    /// `lambda >= omega / psi_max`.
    pub upper_holds: bool,
}

/// Checks the two inequalities linking the smallest eigenvalues of `M` and
/// `B^{1/2} M B^{1/2}`. They are guaranteed for positive semi-definite `M`;
/// an indefinite `M` can violate them and the flags say so.
pub fn lemma1_check(b: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<Lemma1Report> {
    if b.nrows() != b.ncols() || m.shape() != b.shape() || b.nrows() == 0 {
        return Err(PanelError::Dimension("B and M must be square and conform".into()));
    }
    let (psi, _) = sorted_eigen(b);
    let (psi_min, psi_max) = (psi[0], psi[psi.len() - 1]);
    if psi_min < EIGEN_FLOOR {
        return Err(PanelError::NotPositiveDefinite {
            which: "B",
            min_eigenvalue: psi_min,
        });
    }
    let root = sym_sqrt(b, "B")?;
    let q = &root * m * &root;
    let lambda_min = min_eigenvalue(m);
    let omega_min = min_eigenvalue(&q);
    let tol = 1e-9 * (1.0 + omega_min.abs().max(lambda_min.abs() * psi_max));
    Ok(Lemma1Report {
        lambda_min,
        omega_min,
        psi_min,
        psi_max,
        lower_holds: omega_min >= psi_min * lambda_min - tol,
        upper_holds: lambda_min >= omega_min / psi_max - tol,
    })
}
