//! Monte Carlo driver. Replications run on the rayon pool; results are
//! collected in replication order, so summaries do not depend on the
//! number of workers.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use lvpanel::rng::derive_seed;
use lvpanel::simgen::{
    apply_mar_mask, gen_example1, gen_example2, gen_teacher_scores, teacher_column, Assignments, Example1Config,
    Example2Config, GeneratedDataset, TeacherSimConfig,
};
use lvpanel::{
    assemble_block_covariance, class_means, feasible_gls, fixed_effects, gls_known_r, ols, ols_sampling_cov,
    EstimateResult, ObservationMask, PanelDesign, PanelError,
};

use crate::config::{EstimatorKind, Experiment, ExperimentConfig};
use crate::metrics::{
    sampling_variance_floor, standardized_abs_bias, standardized_mean_error, teacher_variance_fraction,
};
use crate::summary::{mean_se, McSummary, SummaryRow};
use crate::HarnessError;

pub const CLASS_SIZE: usize = 25;

/// Seed of replication `rep` at grid point `grid`.
pub fn replication_seed(base: u64, grid: usize, rep: usize) -> u64 {
    derive_seed(base, &[grid as u64, rep as u64])
}

/// Seed of the missing-data mask of a replication.
pub fn mask_seed(rep_seed: u64) -> u64 {
    derive_seed(rep_seed, &[0x6d61_736b])
}

/// Label of an example-3 grid point.
pub fn teacher_point(alpha: f64, subjects: usize) -> String {
    format!("alpha={alpha:?};S={subjects}")
}

/// Fixed effects, refitting without columns the within transformation
/// leaves unidentified. Returns the estimate over all `k` columns (`NaN` for
/// dropped ones).
pub fn fixed_effects_identified(design: &PanelDesign, y: &DVector<f64>) -> Result<DVector<f64>, PanelError> {
    let mut dropped: Vec<usize> = Vec::new();
    loop {
        let (reduced, kept) = design.drop_columns(&dropped)?;
        match fixed_effects(&reduced, y) {
            Ok(fit) => {
                let mut theta = DVector::from_element(design.k(), f64::NAN);
                for (j, &c) in kept.iter().enumerate() {
                    theta[c] = fit.theta[j];
                }
                return Ok(theta);
            }
            Err(PanelError::RankDeficient { columns }) if !columns.is_empty() => {
                dropped.extend(columns.iter().map(|&j| kept[j]));
                dropped.sort_unstable();
            }
            Err(e) => return Err(e),
        }
    }
}

struct PointSpec {
    label: String,
    x: usize,
}

/// One replication of examples 1 and 2: `(estimator, |bias|, signed bias)`.
fn treatment_rep(
    cfg: &ExperimentConfig,
    ds: GeneratedDataset,
    seed: u64,
) -> Result<Vec<(EstimatorKind, f64, f64)>, HarnessError> {
    let cov = assemble_block_covariance(&ds.heterogeneity)?;
    let (ds, mask): (GeneratedDataset, Option<ObservationMask>) = if cfg.missing_rate > 0.0 {
        let (m, mask) = apply_mar_mask(&ds, cfg.missing_rate, mask_seed(seed))?;
        (m, Some(mask))
    } else {
        (ds, None)
    };
    let mut out = Vec::with_capacity(cfg.estimators.len());
    for &est in &cfg.estimators {
        let theta = match est {
            EstimatorKind::Ols => ols(&ds.design, &ds.y)?.theta,
            EstimatorKind::GlsKnown => gls_known_r(&ds.design, &ds.y, &cov, mask.as_ref())?.theta,
            EstimatorKind::GlsFeasible => feasible_gls(&ds.design, &ds.y)?.theta,
            EstimatorKind::FixedEffects => fixed_effects_identified(&ds.design, &ds.y)?,
            EstimatorKind::ClassMeans => unreachable!("rejected by validation"),
        };
        let abs = standardized_abs_bias(&theta, &ds.true_theta, &ds.treatment_columns, ds.standardizer)?;
        let signed = standardized_mean_error(&theta, &ds.true_theta, &ds.treatment_columns, ds.standardizer)?;
        out.push((est, abs, signed));
    }
    Ok(out)
}

fn generate_treatment(
    cfg: &ExperimentConfig,
    scenario: u8,
    t: usize,
    seed: u64,
) -> Result<GeneratedDataset, PanelError> {
    match cfg.experiment {
        Experiment::Example1 => {
            let mut c = Example1Config::new(scenario, t, seed);
            c.n = cfg.n;
            gen_example1(&c)
        }
        _ => {
            let mut c = Example2Config::new(scenario, t, seed);
            c.n = cfg.n;
            gen_example2(&c)
        }
    }
}

fn run_treatment(cfg: &ExperimentConfig) -> Result<McSummary, HarnessError> {
    let mut rows = Vec::new();
    let mut grid = 0;
    for &scenario in &cfg.scenarios {
        for &t in &cfg.t_values {
            let point = PointSpec {
                label: scenario.to_string(),
                x: t,
            };
            let reps: Vec<Vec<(EstimatorKind, f64, f64)>> = (0..cfg.reps)
                .into_par_iter()
                .map(|rep| {
                    let seed = replication_seed(cfg.base_seed, grid, rep);
                    let ds = generate_treatment(cfg, scenario, t, seed)?;
                    treatment_rep(cfg, ds, seed)
                })
                .collect::<Result<_, _>>()?;
            for (j, est) in cfg.estimators.iter().enumerate() {
                let abs: Vec<f64> = reps.iter().map(|r| r[j].1).collect();
                let signed: Vec<f64> = reps.iter().map(|r| r[j].2).collect();
                for (metric, values) in [("std_abs_bias", &abs), ("std_mean_error", &signed)] {
                    rows.push(row(cfg, &point, est.as_str(), metric, values));
                }
            }
            grid += 1;
        }
    }
    Ok(McSummary { rows })
}

fn row(cfg: &ExperimentConfig, point: &PointSpec, estimator: &str, metric: &str, values: &[f64]) -> SummaryRow {
    let (value, stderr) = mean_se(values);
    SummaryRow {
        experiment: cfg.experiment.as_str().to_string(),
        point: point.label.clone(),
        x: point.x,
        estimator: estimator.to_string(),
        metric: metric.to_string(),
        value,
        stderr,
        reps: values.len(),
    }
}

/// Teacher effects of grade `g` per subject, skipping `NaN` (unidentified).
fn grade_effects(theta: &DVector<f64>, g: usize, nc: usize, subjects: usize) -> Vec<Vec<f64>> {
    (0..subjects)
        .map(|s| {
            (0..nc)
                .map(|c| theta[teacher_column(g, c, s, nc, subjects)])
                .filter(|v| v.is_finite())
                .collect()
        })
        .collect()
}

/// Per-grade expected sample variance from estimation noise alone.
fn grade_noise_floor(v: &DMatrix<f64>, g: usize, nc: usize, subjects: usize) -> f64 {
    let total: f64 = (0..subjects)
        .map(|s| {
            let idx: Vec<usize> = (0..nc).map(|c| teacher_column(g, c, s, nc, subjects)).collect();
            sampling_variance_floor(&v.select_rows(&idx).select_columns(&idx))
        })
        .sum();
    total / subjects as f64
}

/// `(estimator, metric, grade, value)` for one teacher replication.
type TeacherRep = Vec<(EstimatorKind, &'static str, usize, f64)>;

fn teacher_rep(cfg: &ExperimentConfig, tcfg: &TeacherSimConfig) -> Result<TeacherRep, HarnessError> {
    let ds = gen_teacher_scores(tcfg)?;
    let mv = tcfg.marginal_variances();
    let nc = tcfg.n_classes();
    let (s_n, g_n) = (tcfg.subjects, tcfg.grades);
    let cov = assemble_block_covariance(&ds.heterogeneity)?;
    let mut out = Vec::new();
    for &est in &cfg.estimators {
        let (theta, noise): (DVector<f64>, Option<DMatrix<f64>>) = match est {
            EstimatorKind::ClassMeans => (class_mean_effects(&ds, nc, s_n, g_n)?, None),
            EstimatorKind::Ols => {
                let fit = ols(&ds.design, &ds.y)?;
                let v = ols_sampling_cov(&ds.design, &cov)?;
                (fit.theta, Some(v))
            }
            EstimatorKind::GlsKnown => {
                let EstimateResult { theta, param_cov, .. } = gls_known_r(&ds.design, &ds.y, &cov, None)?;
                (theta, Some(param_cov))
            }
            EstimatorKind::FixedEffects => (fixed_effects_identified(&ds.design, &ds.y)?, None),
            EstimatorKind::GlsFeasible => unreachable!("rejected by validation"),
        };
        for g in 0..g_n {
            let effects = grade_effects(&theta, g, nc, s_n);
            let raw = teacher_variance_fraction(&effects, mv[g])?;
            out.push((est, "teacher_var_frac", g + 1, raw));
            if let Some(v) = &noise {
                let net = raw - grade_noise_floor(v, g, nc, s_n) / mv[g];
                out.push((est, "teacher_var_frac_net", g + 1, net));
            }
        }
    }
    Ok(out)
}

/// Unadjusted class means laid out in the teacher-column order.
fn class_mean_effects(ds: &GeneratedDataset, nc: usize, s_n: usize, g_n: usize) -> Result<DVector<f64>, HarnessError> {
    let Assignments::Classes(classes) = &ds.assignments else {
        return Err(HarnessError::Config(vec!["class means need class assignments".into()]));
    };
    let mut theta = DVector::zeros(nc * g_n * s_n);
    for g in 0..g_n {
        let labels: Vec<usize> = classes.class_of.iter().map(|c| c[g]).collect();
        for s in 0..s_n {
            let t = g * s_n + s;
            let scores: Vec<f64> = (0..ds.design.n_students())
                .map(|i| ds.y[ds.design.offset(i) + t])
                .collect();
            for (c, m) in class_means(&scores, &labels, nc)?.into_iter().enumerate() {
                theta[teacher_column(g, c, s, nc, s_n)] = m;
            }
        }
    }
    Ok(theta)
}

pub fn teacher_config(cfg: &ExperimentConfig, subjects: usize, alpha: f64, seed: u64) -> TeacherSimConfig {
    TeacherSimConfig {
        n: cfg.n,
        class_size: CLASS_SIZE,
        grades: cfg.grades,
        subjects,
        alpha,
        seed,
        ..TeacherSimConfig::default()
    }
}

fn run_teacher(cfg: &ExperimentConfig) -> Result<McSummary, HarnessError> {
    let mut rows = Vec::new();
    let mut grid = 0;
    for &subjects in &cfg.subjects {
        for &alpha in &cfg.alphas {
            let label = teacher_point(alpha, subjects);
            let reps: Vec<TeacherRep> = (0..cfg.reps)
                .into_par_iter()
                .map(|rep| {
                    let seed = replication_seed(cfg.base_seed, grid, rep);
                    teacher_rep(cfg, &teacher_config(cfg, subjects, alpha, seed))
                })
                .collect::<Result<_, _>>()?;
            let first = &reps[0];
            for (j, &(est, metric, grade, _)) in first.iter().enumerate() {
                let values: Vec<f64> = reps.iter().map(|r| r[j].3).collect();
                let point = PointSpec {
                    label: label.clone(),
                    x: grade,
                };
                rows.push(row(cfg, &point, est.as_str(), metric, &values));
            }
            grid += 1;
        }
    }
    Ok(McSummary { rows })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<McSummary, HarnessError> {
    cfg.validate()?;
    match cfg.experiment {
        Experiment::Example1 | Experiment::Example2 => run_treatment(cfg),
        Experiment::Example3 => run_teacher(cfg),
        Experiment::Diagnostics => crate::diagnose::diagnose(cfg),
    }
}

pub(crate) fn generate_for_point(
    cfg: &ExperimentConfig,
    grid: usize,
    scenario: u8,
    t: usize,
) -> Result<GeneratedDataset, PanelError> {
    generate_treatment(cfg, scenario, t, replication_seed(cfg.base_seed, grid, 0))
}
