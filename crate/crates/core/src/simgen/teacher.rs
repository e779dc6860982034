use nalgebra::{DMatrix, DVector};

use super::{std_normal, Assignments, GeneratedDataset};
use crate::covariance::HeterogeneityModel;
use crate::error::{PanelError, Result};
use crate::panel::{PanelDesign, StudentBlock};
use crate::rng::stream_rng;

/// Multi-subject random growth scores with students sorted into classes on
/// their intercepts and slopes. There are no true teacher effects.
///
/// Score for subject `s` in grade `g` (from 0) is
/// `delta + delta_s + (lambda + lambda_s) g + eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherSimConfig {
    pub n: usize,
    pub class_size: usize,
    pub grades: usize,
    pub subjects: usize,
    /// Persistence of a teacher's effect into later grades.
    pub alpha: f64,
    pub sigma_delta2: f64,
    pub sigma_lambda2: f64,
    /// Correlation of the shared intercept and slope.
    pub r: f64,
    pub nu_delta2: f64,
    pub nu_lambda2: f64,
    pub sigma_eps2: f64,
    /// Weights on standardized intercept, standardized slope and noise in
    /// the sorting index.
    pub selection: [f64; 3],
    /// Multiplies the residual draws; 0 gives noise-free scores.
    pub residual_scale: f64,
    pub seed: u64,
}

impl Default for TeacherSimConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            class_size: 25,
            grades: 5,
            subjects: 1,
            alpha: 1.0,
            sigma_delta2: 0.5,
            sigma_lambda2: 0.125,
            r: 0.3,
            nu_delta2: 0.2,
            nu_lambda2: 0.05,
            sigma_eps2: 0.8,
            selection: [0.3, 0.3, 0.4],
            residual_scale: 1.0,
            seed: 0,
        }
    }
}

impl TeacherSimConfig {
    pub fn n_classes(&self) -> usize {
        self.n / self.class_size
    }

    pub fn n_times(&self) -> usize {
        self.grades * self.subjects
    }

    /// `(sd^2 + nd^2) + g^2 (sl^2 + nl^2) + 2 g r sd sl + se^2` for each grade.
    pub fn marginal_variances(&self) -> Vec<f64> {
        let cov_dl = self.r * (self.sigma_delta2 * self.sigma_lambda2).sqrt();
        (0..self.grades)
            .map(|g| {
                let g = g as f64;
                self.sigma_delta2
                    + self.nu_delta2
                    + g * g * (self.sigma_lambda2 + self.nu_lambda2)
                    + 2.0 * g * cov_dl
                    + self.sigma_eps2
            })
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if self.class_size == 0 || self.n == 0 || self.n % self.class_size != 0 {
            return Err(PanelError::InvalidParameter(format!(
                "n = {} is not a positive multiple of the class size {}",
                self.n, self.class_size
            )));
        }
        if self.grades < 2 || self.subjects == 0 {
            return Err(PanelError::InvalidParameter(
                "need at least 2 grades and 1 subject".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(PanelError::InvalidParameter(format!(
                "alpha = {} outside [0, 1]",
                self.alpha
            )));
        }
        let positive = [
            self.sigma_delta2,
            self.sigma_lambda2,
            self.nu_delta2,
            self.nu_lambda2,
            self.sigma_eps2,
        ];
        if positive.iter().any(|&v| !(v > 0.0)) || !(self.r.abs() < 1.0) {
            return Err(PanelError::InvalidParameter(
                "variance components must be positive, |r| < 1".into(),
            ));
        }
        Ok(())
    }

    /// Factor form with one intercept and one slope per subject, each the sum
    /// of the shared and subject-specific parts. Measurement `g S + s` loads
    /// `1` on intercept `s` and `g` on slope `s`.
    pub fn heterogeneity(&self) -> Result<HeterogeneityModel> {
        let s_n = self.subjects;
        let t = self.n_times();
        let a = DMatrix::from_fn(t, 2 * s_n, |row, col| {
            let (g, s) = (row / s_n, row % s_n);
            if col == s {
                1.0
            } else if col == s_n + s {
                g as f64
            } else {
                0.0
            }
        });
        let cov_dl = self.r * (self.sigma_delta2 * self.sigma_lambda2).sqrt();
        let f = DMatrix::from_fn(2 * s_n, 2 * s_n, |p, q| {
            let (bp, bq) = (p < s_n, q < s_n);
            let same = p == q;
            match (bp, bq) {
                (true, true) => self.sigma_delta2 + if same { self.nu_delta2 } else { 0.0 },
                (false, false) => self.sigma_lambda2 + if same { self.nu_lambda2 } else { 0.0 },
                _ => cov_dl,
            }
        });
        HeterogeneityModel::new(a, f, DMatrix::identity(t, t) * self.sigma_eps2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassAssignments {
    pub n_classes: usize,
    /// `[student][grade]` class index.
    pub class_of: Vec<Vec<usize>>,
    /// `[student][grade]` sorting index the classes were filled by; may be
    /// empty for hand-built assignments.
    pub sort_index: Vec<Vec<f64>>,
}

/// Column of the effect of class `class` in grade `grade` on subject `subject`.
pub fn teacher_column(grade: usize, class: usize, subject: usize, n_classes: usize, subjects: usize) -> usize {
    (grade * n_classes + class) * subjects + subject
}

/// One column per teacher and subject. A grade-`g1` teacher's subject-`s`
/// column enters the subject-`s` score in grade `g2 >= g1` with weight
/// `alpha^(g2 - g1)`, taking `0^0 = 1`.
pub fn build_persistence_design(
    assignments: &ClassAssignments,
    alpha: f64,
    grades: usize,
    subjects: usize,
) -> Result<PanelDesign> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(PanelError::InvalidParameter(format!("alpha = {alpha} outside [0, 1]")));
    }
    let nc = assignments.n_classes;
    let t = grades * subjects;
    let k = nc * t;
    let mut blocks = Vec::with_capacity(assignments.class_of.len());
    for (i, classes) in assignments.class_of.iter().enumerate() {
        if classes.len() != grades {
            return Err(PanelError::Dimension(format!(
                "student {i}: {} class entries for {grades} grades",
                classes.len()
            )));
        }
        if let Some(&c) = classes.iter().find(|&&c| c >= nc) {
            return Err(PanelError::Dimension(format!("student {i}: class {c} out of range")));
        }
        let cols: Vec<usize> = (0..t)
            .map(|l| teacher_column(l / subjects, classes[l / subjects], l % subjects, nc, subjects))
            .collect();
        let z = DMatrix::from_fn(t, t, |row, l| {
            let (g2, s2) = (row / subjects, row % subjects);
            let (g1, s1) = (l / subjects, l % subjects);
            if s1 == s2 && g1 <= g2 {
                alpha.powi((g2 - g1) as i32)
            } else {
                0.0
            }
        });
        blocks.push(StudentBlock {
            times: (0..t).collect(),
            cols,
            z,
        });
    }
    PanelDesign::new(t, k, blocks)
}

pub fn gen_teacher_scores(cfg: &TeacherSimConfig) -> Result<GeneratedDataset> {
    cfg.validate()?;
    let (n, s_n, g_n) = (cfg.n, cfg.subjects, cfg.grades);
    let t = cfg.n_times();
    let (sd, sl) = (cfg.sigma_delta2.sqrt(), cfg.sigma_lambda2.sqrt());
    let (nd, nl) = (cfg.nu_delta2.sqrt(), cfg.nu_lambda2.sqrt());
    let se = cfg.residual_scale * cfg.sigma_eps2.sqrt();
    let [w_d, w_l, w_x] = cfg.selection;

    let mut y = Vec::with_capacity(n * t);
    let mut latent = Vec::with_capacity(n);
    let mut eta = vec![vec![0.0; n]; g_n];
    for i in 0..n {
        let mut rng = stream_rng(cfg.seed, i as u64);
        let u1 = std_normal(&mut rng);
        let u2 = std_normal(&mut rng);
        let delta = sd * u1;
        let lambda = sl * (cfg.r * u1 + (1.0 - cfg.r * cfg.r).sqrt() * u2);
        let b: Vec<f64> = (0..s_n).map(|_| delta + nd * std_normal(&mut rng)).collect();
        let c: Vec<f64> = (0..s_n).map(|_| lambda + nl * std_normal(&mut rng)).collect();
        for g in 0..g_n {
            for s in 0..s_n {
                y.push(b[s] + c[s] * g as f64 + se * std_normal(&mut rng));
            }
        }
        for row in eta.iter_mut() {
            row[i] = w_d * delta / sd + w_l * lambda / sl + w_x * std_normal(&mut rng);
        }
        latent.push(DVector::from_iterator(2 * s_n, b.into_iter().chain(c)));
    }

    let nc = cfg.n_classes();
    let mut class_of = vec![vec![0usize; g_n]; n];
    for (g, row) in eta.iter().enumerate() {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&p, &q| row[p].total_cmp(&row[q]).then(p.cmp(&q)));
        for (rank, &i) in order.iter().enumerate() {
            class_of[i][g] = rank / cfg.class_size;
        }
    }
    let sort_index = (0..n).map(|i| eta.iter().map(|row| row[i]).collect()).collect();
    let assignments = ClassAssignments {
        n_classes: nc,
        class_of,
        sort_index,
    };
    let design = build_persistence_design(&assignments, cfg.alpha, g_n, s_n)?;
    let k = design.k();
    Ok(GeneratedDataset {
        y: DVector::from_vec(y),
        design,
        true_theta: DVector::zeros(k),
        latent,
        assignments: Assignments::Classes(assignments),
        heterogeneity: cfg.heterogeneity()?,
        treatment_columns: (0..k).collect(),
        standardizer: 1.0,
        n_subjects: s_n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_marginal_variances() {
        let v = TeacherSimConfig::default().marginal_variances();
        for (got, want) in v.iter().zip([1.5, 1.825, 2.5, 3.525, 4.9]) {
            assert!((got - want).abs() < 1e-12, "{v:?}");
        }
        let cfg = TeacherSimConfig {
            subjects: 3,
            ..Default::default()
        };
        let r = cfg.heterogeneity().unwrap().implied_covariance();
        for g in 0..5 {
            for s in 0..3 {
                assert!((r[(g * 3 + s, g * 3 + s)] - v[g]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_grade_rows() {
        // 4 students, 2 classes per grade
        let a = ClassAssignments {
            n_classes: 2,
            class_of: vec![vec![0, 1], vec![0, 0], vec![1, 0], vec![1, 1]],
            sort_index: Vec::new(),
        };
        let alpha = 0.3;
        let d = build_persistence_design(&a, alpha, 2, 1).unwrap();
        assert_eq!(d.k(), 4);
        let z = d.to_dense();
        for i in 0..4 {
            let grade2 = z.row(i * 2 + 1);
            assert_eq!(grade2.iter().filter(|v| **v != 0.0).count(), 2);
            assert!((grade2.sum() - (1.0 + alpha)).abs() < 1e-12);
            assert_eq!(z.row(i * 2).sum(), 1.0);
        }
        let zero = build_persistence_design(&a, 0.0, 2, 1).unwrap().to_dense();
        for r in 0..8 {
            assert_eq!(zero.row(r).iter().filter(|v| **v == 1.0).count(), 1);
            assert_eq!(zero.row(r).sum(), 1.0);
        }
        assert!(build_persistence_design(&a, 1.5, 2, 1).is_err());
    }

    #[test]
    fn rejects_ragged_classes() {
        let cfg = TeacherSimConfig {
            n: 1010,
            ..Default::default()
        };
        assert!(gen_teacher_scores(&cfg).is_err());
    }
}
