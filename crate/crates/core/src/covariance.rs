//! Factor heterogeneity models and the per-student covariance block
//! `R1 = A1 S1 A1' + Psi1` with its structured inverse.

use std::borrow::Cow;

use nalgebra::DMatrix;

use crate::error::{PanelError, Result};
use crate::linalg::{cholesky_inverse, min_eigenvalue, sorted_eigen, sym_inv_sqrt, sym_sqrt, symmetrize, EIGEN_FLOOR};
use crate::panel::RANK_TOL;

/// Per-student heterogeneity: `d` factors with covariance `S1` loading on the
/// `T` measurements through `A1`, plus residual covariance `Psi1`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeterogeneityModel {
    loadings: DMatrix<f64>,
    factor_cov: DMatrix<f64>,
    residual_cov: DMatrix<f64>,
}

impl HeterogeneityModel {
    pub fn new(loadings: DMatrix<f64>, factor_cov: DMatrix<f64>, residual_cov: DMatrix<f64>) -> Result<Self> {
        let (t, d) = loadings.shape();
        if factor_cov.shape() != (d, d) {
            return Err(PanelError::Dimension(format!(
                "S1 is {:?}, expected {d}x{d}",
                factor_cov.shape()
            )));
        }
        if residual_cov.shape() != (t, t) {
            return Err(PanelError::Dimension(format!(
                "Psi1 is {:?}, expected {t}x{t}",
                residual_cov.shape()
            )));
        }
        check_symmetric_pd(&factor_cov, "S1")?;
        check_symmetric_pd(&residual_cov, "Psi1")?;
        if d > 0 {
            let sv = loadings.clone().svd(false, false).singular_values;
            let smax = sv.max();
            let rank = sv.iter().filter(|&&s| s > RANK_TOL * smax && s > 0.0).count();
            if rank != d {
                return Err(PanelError::RankDeficientLoadings { rank, expected: d });
            }
        }
        Ok(Self {
            loadings,
            factor_cov,
            residual_cov,
        })
    }

    /// The standard model with a single student effect of variance `nu2` and
    /// spherical residuals of variance `sigma2`.
    pub fn standard(n_times: usize, nu2: f64, sigma2: f64) -> Result<Self> {
        Self::new(
            DMatrix::from_element(n_times, 1, 1.0),
            DMatrix::from_element(1, 1, nu2),
            DMatrix::identity(n_times, n_times) * sigma2,
        )
    }

    pub fn n_times(&self) -> usize {
        self.loadings.nrows()
    }

    pub fn n_factors(&self) -> usize {
        self.loadings.ncols()
    }

    pub fn loadings(&self) -> &DMatrix<f64> {
        &self.loadings
    }

    pub fn factor_cov(&self) -> &DMatrix<f64> {
        &self.factor_cov
    }

    pub fn residual_cov(&self) -> &DMatrix<f64> {
        &self.residual_cov
    }

    /// `A1 S1 A1' + Psi1`, assembled directly.
    pub fn implied_covariance(&self) -> DMatrix<f64> {
        let mut r = &self.loadings * &self.factor_cov * self.loadings.transpose() + &self.residual_cov;
        symmetrize(&mut r);
        r
    }
}

fn check_symmetric_pd(m: &DMatrix<f64>, which: &'static str) -> Result<()> {
    if m.nrows() == 0 {
        return Ok(());
    }
    let scale = m.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                return Err(PanelError::InvalidParameter(format!("{which} is not symmetric")));
            }
        }
    }
    let min_eigenvalue = min_eigenvalue(m);
    if min_eigenvalue < EIGEN_FLOOR {
        return Err(PanelError::NotPositiveDefinite { which, min_eigenvalue });
    }
    Ok(())
}

fn is_diagonal(m: &DMatrix<f64>) -> bool {
    (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| i == j || m[(i, j)] == 0.0))
}

/// Intermediates of the structured inverse: `P = Psi^{-1/2}` and
/// `X = P A S^{1/2}`.
pub(crate) struct WoodburyParts {
    pub psi_inv_sqrt: DMatrix<f64>,
    pub x: DMatrix<f64>,
}

pub(crate) fn woodbury_parts(a: &DMatrix<f64>, s: &DMatrix<f64>, psi: &DMatrix<f64>) -> Result<WoodburyParts> {
    let psi_inv_sqrt = if is_diagonal(psi) {
        let mut p = DMatrix::zeros(psi.nrows(), psi.ncols());
        for i in 0..psi.nrows() {
            let v = psi[(i, i)];
            if v < EIGEN_FLOOR {
                return Err(PanelError::NotPositiveDefinite {
                    which: "Psi1",
                    min_eigenvalue: v,
                });
            }
            p[(i, i)] = 1.0 / v.sqrt();
        }
        p
    } else {
        sym_inv_sqrt(psi, "Psi1")?
    };
    let factor_sqrt = if s.nrows() == 0 {
        DMatrix::zeros(0, 0)
    } else {
        sym_sqrt(s, "S1")?
    };
    let x = &psi_inv_sqrt * a * &factor_sqrt;
    Ok(WoodburyParts { psi_inv_sqrt, x })
}

/// `R^{-1} = P [I - X (I + X'X)^{-1} X'] P` with `P = Psi^{-1/2}`,
/// `X = Psi^{-1/2} A S^{1/2}`. Only a `d x d` system is factorized.
pub(crate) fn woodbury_inverse(a: &DMatrix<f64>, s: &DMatrix<f64>, psi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let parts = woodbury_parts(a, s, psi)?;
    let t = a.nrows();
    let d = a.ncols();
    let x = &parts.x;
    let inner = if d == 0 {
        DMatrix::identity(t, t)
    } else {
        let k = DMatrix::identity(d, d) + x.transpose() * x;
        let k_inv = cholesky_inverse(&k).ok_or(PanelError::SingularNormalMatrix)?;
        DMatrix::identity(t, t) - x * k_inv * x.transpose()
    };
    let p = &parts.psi_inv_sqrt;
    let mut r_inv = p * inner * p;
    symmetrize(&mut r_inv);
    Ok(r_inv)
}

/// One student's covariance block `R1` and its inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCovariance {
    r: DMatrix<f64>,
    r_inv: DMatrix<f64>,
    source: Option<HeterogeneityModel>,
}

impl BlockCovariance {
    /// An unstructured covariance (for example a moment estimate), inverted
    /// by Cholesky. Positive definiteness is judged relative to the largest eigenvalue so
    /// that tiny but well-conditioned estimates are accepted.
    pub fn unstructured(r: DMatrix<f64>) -> Result<Self> {
        let (values, _) = sorted_eigen(&r);
        let (lo, hi) = (values[0], values[values.len() - 1]);
        let not_pd = PanelError::NotPositiveDefinite {
            which: "R1",
            min_eigenvalue: lo,
        };
        if !(lo > 0.0 && lo > 1e-12 * hi) {
            return Err(not_pd);
        }
        let r_inv = cholesky_inverse(&r).ok_or(not_pd)?;
        Ok(Self { r, r_inv, source: None })
    }

    pub fn n_times(&self) -> usize {
        self.r.nrows()
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn r_inv(&self) -> &DMatrix<f64> {
        &self.r_inv
    }

    /// The factor model the block was built from, if any.
    pub fn source(&self) -> Option<&HeterogeneityModel> {
        self.source.as_ref()
    }

    /// The same covariance multiplied by `c > 0`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            r: &self.r * c,
            r_inv: &self.r_inv / c,
            source: self.source.as_ref().map(|h| HeterogeneityModel {
                loadings: h.loadings.clone(),
                factor_cov: &h.factor_cov * c,
                residual_cov: &h.residual_cov * c,
            }),
        }
    }

    /// Inverse of the principal submatrix on `times`; borrows the full
    /// inverse when nothing is missing.
    pub fn inverse_on(&self, times: &[usize]) -> Result<Cow<'_, DMatrix<f64>>> {
        if times.len() == self.n_times() {
            return Ok(Cow::Borrowed(&self.r_inv));
        }
        Ok(Cow::Owned(self.subset(times)?.r_inv))
    }

    /// Principal submatrix on the observed `times` with its inverse. Factor
    /// sources are re-inverted through the structured form on the retained
    /// rows of `A1` and `Psi1`.
    pub fn subset(&self, times: &[usize]) -> Result<CovarianceBlock> {
        if times.is_empty() {
            return Err(PanelError::InvalidParameter("no observed scores in subset".into()));
        }
        if times.iter().any(|&t| t >= self.n_times()) {
            return Err(PanelError::Dimension("subset index out of range".into()));
        }
        let r = self.r.select_rows(times).select_columns(times);
        let r_inv = match &self.source {
            Some(h) => {
                let a = h.loadings.select_rows(times);
                let psi = h.residual_cov.select_rows(times).select_columns(times);
                woodbury_inverse(&a, &h.factor_cov, &psi)?
            }
            None => cholesky_inverse(&r).ok_or(PanelError::NotPositiveDefinite {
                which: "R1",
                min_eigenvalue: min_eigenvalue(&r),
            })?,
        };
        Ok(CovarianceBlock { r, r_inv })
    }
}

/// A principal sub-block of `R1` and its inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceBlock {
    pub r: DMatrix<f64>,
    pub r_inv: DMatrix<f64>,
}

/// Builds `R1 = A1 S1 A1' + Psi1` and its inverse through the Woodbury form.
pub fn assemble_block_covariance(h: &HeterogeneityModel) -> Result<BlockCovariance> {
    let r = h.implied_covariance();
    let r_inv = woodbury_inverse(&h.loadings, &h.factor_cov, &h.residual_cov)?;
    Ok(BlockCovariance {
        r,
        r_inv,
        source: Some(h.clone()),
    })
}

/// Sub-block of `cov` on the measurements flagged in `present`.
pub fn subset_block(cov: &BlockCovariance, present: &[bool]) -> Result<CovarianceBlock> {
    if present.len() != cov.n_times() {
        return Err(PanelError::Dimension(format!(
            "mask has {} entries, covariance is {}x{}",
            present.len(),
            cov.n_times(),
            cov.n_times()
        )));
    }
    let times: Vec<usize> = (0..present.len()).filter(|&t| present[t]).collect();
    if times.is_empty() {
        return Err(PanelError::InvalidParameter("student has no observed scores".into()));
    }
    cov.subset(&times)
}
