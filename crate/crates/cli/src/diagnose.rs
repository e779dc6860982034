//! Non-Monte-Carlo diagnostics: theorem-condition profiles of model
//! families and the row-sum condition on generated designs.

use nalgebra::DMatrix;

use lvpanel::diagnostics::{families, rowsum_condition, theorem_condition_profile, TheoremProfile};
use lvpanel::simgen::{gen_teacher_scores, Example1Config, Example2Config};
use lvpanel::{assemble_block_covariance, HeterogeneityModel, PanelError};

use crate::config::{Experiment, ExperimentConfig};
use crate::runner::{generate_for_point, replication_seed, teacher_config, teacher_point};
use crate::summary::{McSummary, SummaryRow};
use crate::HarnessError;

fn single(cfg: &ExperimentConfig, point: &str, x: usize, estimator: &str, metric: &str, value: f64) -> SummaryRow {
    SummaryRow {
        experiment: cfg.experiment.as_str().to_string(),
        point: point.to_string(),
        x,
        estimator: estimator.to_string(),
        metric: metric.to_string(),
        value,
        stderr: 0.0,
        reps: 1,
    }
}

fn profile_rows(cfg: &ExperimentConfig, family: &str, p: &TheoremProfile, rows: &mut Vec<SummaryRow>) {
    for (j, &t) in p.t_grid.iter().enumerate() {
        rows.push(single(cfg, family, t, "none", "lambda_min", p.lambda_min[j]));
        rows.push(single(
            cfg,
            family,
            t,
            "none",
            "lambda_min_over_t",
            p.lambda_min[j] / t as f64,
        ));
        rows.push(single(cfg, family, t, "none", "row_sum_max", p.row_sum_max[j]));
        rows.push(single(cfg, family, t, "none", "compression_max", p.compression_max[j]));
    }
}

type Family = Box<dyn Fn(usize) -> Result<HeterogeneityModel, PanelError>>;

/// The model families profiled by the `diagnostics` experiment.
pub fn standard_families() -> Vec<(&'static str, Family)> {
    vec![
        ("standard", Box::new(|t| families::standard(t, 1.0, 1.0))),
        ("ramp", Box::new(|t| families::ramp(t, 1.0, DMatrix::identity(2, 2)))),
        (
            "linear_growth",
            Box::new(|t| families::linear_growth(t, 1.0, DMatrix::identity(2, 2))),
        ),
        ("varying_weights", Box::new(|t| families::varying_weights(t, 0.7, 0.9))),
    ]
}

pub fn diagnose(cfg: &ExperimentConfig) -> Result<McSummary, HarnessError> {
    cfg.validate()?;
    let mut rows = Vec::new();
    match cfg.experiment {
        Experiment::Diagnostics => {
            for (name, family) in standard_families() {
                let p = theorem_condition_profile(family, &cfg.t_values)?;
                profile_rows(cfg, name, &p, &mut rows);
            }
        }
        Experiment::Example1 | Experiment::Example2 => {
            let ex1 = cfg.experiment == Experiment::Example1;
            let family = |t: usize| {
                if ex1 {
                    Example1Config::new(1, t, 0).heterogeneity()
                } else {
                    Example2Config::new(1, t, 0).heterogeneity()
                }
            };
            let p = theorem_condition_profile(family, &cfg.t_values)?;
            profile_rows(cfg, "model", &p, &mut rows);
            let mut grid = 0;
            for &scenario in &cfg.scenarios {
                for &t in &cfg.t_values {
                    let ds = generate_for_point(cfg, grid, scenario, t)?;
                    let cov = assemble_block_covariance(&ds.heterogeneity)?;
                    let v = rowsum_condition(&ds.design, &cov)?;
                    rows.push(single(cfg, &scenario.to_string(), t, "gls_known", "rowsum_max", v));
                    grid += 1;
                }
            }
        }
        Experiment::Example3 => {
            let mut grid = 0;
            for &subjects in &cfg.subjects {
                for &alpha in &cfg.alphas {
                    let tcfg = teacher_config(cfg, subjects, alpha, replication_seed(cfg.base_seed, grid, 0));
                    let ds = gen_teacher_scores(&tcfg)?;
                    let cov = assemble_block_covariance(&ds.heterogeneity)?;
                    let v = rowsum_condition(&ds.design, &cov)?;
                    let point = teacher_point(alpha, subjects);
                    rows.push(single(cfg, &point, tcfg.n_times(), "gls_known", "rowsum_max", v));
                    grid += 1;
                }
            }
        }
    }
    Ok(McSummary { rows })
}
