use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::{evenly_spaced, logistic, std_normal, Assignments, GeneratedDataset};
use crate::covariance::HeterogeneityModel;
use crate::error::{PanelError, Result};
use crate::panel::{PanelDesign, StudentBlock};
use crate::rng::stream_rng;

/// Two correlated factors whose weights cross over time; treatment is given
/// only at the last measurement, selected on one or both factors.
#[derive(Debug, Clone, PartialEq)]
pub struct Example2Config {
    pub scenario: u8,
    pub n_times: usize,
    pub n: usize,
    pub seed: u64,
    pub factor_corr: f64,
    pub residual_var: f64,
    /// Multiplies the residual draws; 0 gives noise-free scores.
    pub residual_scale: f64,
}

impl Example2Config {
    pub fn new(scenario: u8, n_times: usize, seed: u64) -> Self {
        Self {
            scenario,
            n_times,
            n: 1000,
            seed,
            factor_corr: 0.5,
            residual_var: 0.2,
            residual_scale: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.scenario) {
            return Err(PanelError::InvalidParameter(format!(
                "example 2 scenario {} not in 1..=3",
                self.scenario
            )));
        }
        if self.n_times < 2 || self.n == 0 {
            return Err(PanelError::InvalidParameter("example 2 needs T >= 2 and n >= 1".into()));
        }
        if !(self.factor_corr.abs() < 1.0) || !(self.residual_var > 0.0) {
            return Err(PanelError::InvalidParameter(
                "need |corr| < 1 and residual variance > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn loadings(&self) -> DMatrix<f64> {
        let a1 = evenly_spaced(0.1, 0.9, self.n_times);
        let a2 = evenly_spaced(0.9, 0.1, self.n_times);
        DMatrix::from_fn(self.n_times, 2, |r, c| if c == 0 { a1[r] } else { a2[r] })
    }

    pub fn heterogeneity(&self) -> Result<HeterogeneityModel> {
        let t = self.n_times;
        let rho = self.factor_corr;
        HeterogeneityModel::new(
            self.loadings(),
            DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]),
            DMatrix::identity(t, t) * self.residual_var,
        )
    }

    fn log_odds(&self, d1: f64, d2: f64) -> f64 {
        match self.scenario {
            1 => 0.4 * d1 + 0.4 * d2,
            2 => 0.4 * d1,
            _ => 0.4 * d2,
        }
    }
}

/// Columns `0..T` are period means; column `T` is the final-period treatment.
pub fn gen_example2(cfg: &Example2Config) -> Result<GeneratedDataset> {
    cfg.validate()?;
    let t = cfg.n_times;
    let k = t + 1;
    let a = cfg.loadings();
    let rho = cfg.factor_corr;
    let sd = cfg.residual_scale * cfg.residual_var.sqrt();

    let mut y = Vec::with_capacity(cfg.n * t);
    let mut blocks = Vec::with_capacity(cfg.n);
    let mut latent = Vec::with_capacity(cfg.n);
    let mut treated = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let mut rng = stream_rng(cfg.seed, i as u64);
        let u1 = std_normal(&mut rng);
        let u2 = std_normal(&mut rng);
        let d1 = u1;
        let d2 = rho * u1 + (1.0 - rho * rho).sqrt() * u2;
        let last = rng.random::<f64>() < logistic(cfg.log_odds(d1, d2));
        for s in 0..t {
            y.push(a[(s, 0)] * d1 + a[(s, 1)] * d2 + sd * std_normal(&mut rng));
        }
        let zi = DMatrix::from_fn(t, k, |r, c| {
            if c < t {
                (c == r) as u8 as f64
            } else if r == t - 1 && last {
                1.0
            } else {
                0.0
            }
        });
        blocks.push(StudentBlock::dense(zi));
        latent.push(DVector::from_vec(vec![d1, d2]));
        let mut z = vec![false; t];
        z[t - 1] = last;
        treated.push(z);
    }
    let heterogeneity = cfg.heterogeneity()?;
    let last_var = heterogeneity.implied_covariance()[(t - 1, t - 1)];
    Ok(GeneratedDataset {
        y: DVector::from_vec(y),
        design: PanelDesign::new(t, k, blocks)?,
        true_theta: DVector::zeros(k),
        latent,
        assignments: Assignments::Treatment(treated),
        heterogeneity,
        treatment_columns: vec![t],
        standardizer: last_var.sqrt(),
        n_subjects: 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn last_period_sd() {
        let mut cfg = Example2Config::new(1, 10, 3);
        cfg.n = 20;
        let ds = gen_example2(&cfg).unwrap();
        // .9^2 + .1^2 + 2 * .5 * .9 * .1 + .2
        assert!((ds.standardizer - 1.11_f64.sqrt()).abs() < 1e-12);
        assert_eq!(ds.design.k(), 11);
        assert_eq!(ds.treatment_columns, vec![10]);
        assert!(gen_example2(&Example2Config::new(4, 10, 3)).is_err());
        assert!(gen_example2(&Example2Config::new(1, 1, 3)).is_err());
    }
}
