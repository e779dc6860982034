#![allow(dead_code)]

use lvpanel::rng::stream_rng;
use lvpanel::{HeterogeneityModel, PanelDesign};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    stream_rng(seed, 0)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| normal(rng))
}

/// `G G' / n + c I`, comfortably positive definite.
pub fn random_pd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let g = gaussian_matrix(rng, n, n);
    &g * g.transpose() / n as f64 + DMatrix::identity(n, n) * (0.2 + rng.random::<f64>())
}

pub fn random_model(rng: &mut ChaCha8Rng, t: usize, d: usize, diagonal_psi: bool) -> HeterogeneityModel {
    let a = gaussian_matrix(rng, t, d);
    let s = random_pd(rng, d);
    let psi = if diagonal_psi {
        DMatrix::from_diagonal(&DVector::from_fn(t, |_, _| 0.2 + rng.random::<f64>()))
    } else {
        random_pd(rng, t)
    };
    HeterogeneityModel::new(a, s, psi).expect("gaussian loadings have full rank")
}

/// Balanced design with an intercept and `k - 1` gaussian columns.
pub fn random_design(rng: &mut ChaCha8Rng, n: usize, t: usize, k: usize) -> PanelDesign {
    let z = DMatrix::from_fn(n * t, k, |_, c| if c == 0 { 1.0 } else { normal(rng) });
    PanelDesign::from_balanced(&z, n, t).unwrap()
}

pub fn rel_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / (1.0 + a.amax().max(b.amax()))
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}
