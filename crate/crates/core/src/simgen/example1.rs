use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::{evenly_spaced, logistic, std_normal, Assignments, GeneratedDataset};
use crate::covariance::HeterogeneityModel;
use crate::error::{PanelError, Result};
use crate::panel::{PanelDesign, StudentBlock};
use crate::rng::stream_rng;

/// One factor with slowly rising weights and treatment selected on it.
///
/// Scenarios 1 and 3 fix each student's treatment for all periods; 2 and 4
/// redraw it every period. Scenarios 1 and 2 fit an intercept and one
/// treatment effect, 3 and 4 fit a mean and a treatment effect per period.
#[derive(Debug, Clone, PartialEq)]
pub struct Example1Config {
    pub scenario: u8,
    pub n_times: usize,
    pub n: usize,
    pub seed: u64,
    /// Weights `a_t`; `None` means evenly spaced from 0.7 to 0.9.
    pub loadings: Option<Vec<f64>>,
    /// Multiplies the residual draws; 0 gives noise-free scores.
    pub residual_scale: f64,
}

impl Example1Config {
    pub fn new(scenario: u8, n_times: usize, seed: u64) -> Self {
        Self {
            scenario,
            n_times,
            n: 1000,
            seed,
            loadings: None,
            residual_scale: 1.0,
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        self.loadings
            .clone()
            .unwrap_or_else(|| evenly_spaced(0.7, 0.9, self.n_times))
    }

    pub fn heterogeneity(&self) -> Result<HeterogeneityModel> {
        let a = self.weights();
        let t = a.len();
        HeterogeneityModel::new(
            DMatrix::from_column_slice(t, 1, &a),
            DMatrix::identity(1, 1),
            DMatrix::from_diagonal(&DVector::from_iterator(t, a.iter().map(|v| 1.0 - v * v))),
        )
    }

    fn validate(&self) -> Result<()> {
        if !(1..=4).contains(&self.scenario) {
            return Err(PanelError::InvalidParameter(format!(
                "example 1 scenario {} not in 1..=4",
                self.scenario
            )));
        }
        if self.n_times == 0 || self.n == 0 {
            return Err(PanelError::InvalidParameter("example 1 needs T >= 1 and n >= 1".into()));
        }
        let a = self.weights();
        if a.len() != self.n_times {
            return Err(PanelError::Dimension(format!(
                "{} weights for T = {}",
                a.len(),
                self.n_times
            )));
        }
        if a.iter().any(|&v| !(v > 0.0 && v < 1.0)) {
            return Err(PanelError::InvalidParameter("weights must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn n_columns(&self) -> usize {
        if self.scenario <= 2 {
            2
        } else {
            2 * self.n_times
        }
    }
}

pub fn gen_example1(cfg: &Example1Config) -> Result<GeneratedDataset> {
    cfg.validate()?;
    let t = cfg.n_times;
    let a = cfg.weights();
    let fixed = matches!(cfg.scenario, 1 | 3);
    let pooled = cfg.scenario <= 2;
    let k = cfg.n_columns();

    let mut y = Vec::with_capacity(cfg.n * t);
    let mut blocks = Vec::with_capacity(cfg.n);
    let mut latent = Vec::with_capacity(cfg.n);
    let mut treated = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let mut rng = stream_rng(cfg.seed, i as u64);
        let delta = std_normal(&mut rng);
        let p = logistic(delta);
        let first = rng.random::<f64>() < p;
        let z: Vec<bool> = (0..t)
            .map(|s| {
                if fixed || s == 0 {
                    first
                } else {
                    rng.random::<f64>() < p
                }
            })
            .collect();
        for s in 0..t {
            let sd = (1.0 - a[s] * a[s]).sqrt();
            y.push(a[s] * delta + cfg.residual_scale * sd * std_normal(&mut rng));
        }
        let zi = DMatrix::from_fn(t, k, |r, c| {
            let treat = if z[r] { 1.0 } else { 0.0 };
            if pooled {
                if c == 0 {
                    1.0
                } else {
                    treat
                }
            } else if c < t {
                (c == r) as u8 as f64
            } else {
                ((c - t == r) as u8 as f64) * treat
            }
        });
        blocks.push(StudentBlock::dense(zi));
        latent.push(DVector::from_element(1, delta));
        treated.push(z);
    }
    let treatment_columns = if pooled { vec![1] } else { (t..2 * t).collect() };
    Ok(GeneratedDataset {
        y: DVector::from_vec(y),
        design: PanelDesign::new(t, k, blocks)?,
        true_theta: DVector::zeros(k),
        latent,
        assignments: Assignments::Treatment(treated),
        heterogeneity: cfg.heterogeneity()?,
        treatment_columns,
        standardizer: 1.0,
        n_subjects: 1,
    })
}
