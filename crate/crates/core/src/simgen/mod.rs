//! Seeded data generators for the three simulation designs.
//!
//! Generated truth has every regression coefficient equal to zero, so an
//! estimate is its own error. Student `i` draws from stream `i` of the
//! dataset seed.

mod example1;
mod example2;
pub mod io;
mod mask;
mod teacher;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::covariance::HeterogeneityModel;
use crate::panel::PanelDesign;

pub use example1::{gen_example1, Example1Config};
pub use example2::{gen_example2, Example2Config};
pub use mask::apply_mar_mask;
pub use teacher::{build_persistence_design, gen_teacher_scores, teacher_column, ClassAssignments, TeacherSimConfig};

/// Who was treated when, or which class each student sat in.
#[derive(Debug, Clone, PartialEq)]
pub enum Assignments {
    /// `[student][t]` treatment indicator.
    Treatment(Vec<Vec<bool>>),
    Classes(ClassAssignments),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDataset {
    pub y: DVector<f64>,
    pub design: PanelDesign,
    /// All zeros.
    pub true_theta: DVector<f64>,
    /// Latent factor values per student, in the order of the loading columns.
    pub latent: Vec<DVector<f64>>,
    pub assignments: Assignments,
    /// `(A1, S1, Psi1)` implied by the generator.
    pub heterogeneity: HeterogeneityModel,
    /// Coefficients whose bias is summarized.
    pub treatment_columns: Vec<usize>,
    /// Marginal score SD used to standardize bias.
    pub standardizer: f64,
    /// Subjects per measurement occasion; measurement `t` is occasion
    /// `t / n_subjects`, subject `t % n_subjects`.
    pub n_subjects: usize,
}

pub(crate) fn evenly_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

pub(crate) fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn std_normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}
