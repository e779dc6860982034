//! Configuration-driven Monte Carlo harness: parses an experiment file,
//! runs replications in parallel, and writes CSV tables and SVG charts.

pub mod config;
pub mod diagnose;
pub mod metrics;
pub mod runner;
pub mod summary;
pub mod svg;

use std::fs;
use std::path::{Path, PathBuf};

use lvpanel::PanelError;

pub use config::{parse_config, parse_config_str, EstimatorKind, Experiment, ExperimentConfig};
pub use runner::run_experiment;
pub use summary::{McSummary, SummaryRow};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("numerical failure: {0}")]
    Numerical(#[from] PanelError),
    #[error("i/o: {0}")]
    Io(String),
}

impl HarnessError {
    pub(crate) fn io(e: impl std::fmt::Display) -> Self {
        HarnessError::Io(e.to_string())
    }

    /// Process exit code: 1 for bad input, 2 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Io(_) => 1,
            HarnessError::Numerical(_) => 2,
        }
    }
}

/// Writes `<experiment>_<stem>.csv` and, if requested, one SVG per metric.
/// Returns the paths written.
pub fn emit_outputs(
    summary: &McSummary,
    experiment: Experiment,
    stem: &str,
    out_dir: &Path,
    svg: bool,
) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(out_dir).map_err(|e| HarnessError::Io(format!("{}: {e}", out_dir.display())))?;
    let mut written = Vec::new();
    let csv_path = out_dir.join(format!("{}_{stem}.csv", experiment.as_str()));
    let file = fs::File::create(&csv_path).map_err(|e| HarnessError::Io(format!("{}: {e}", csv_path.display())))?;
    summary.write_csv(std::io::BufWriter::new(file))?;
    written.push(csv_path);
    if svg {
        let x_label = if experiment == Experiment::Example3 && stem == "summary" {
            "grade"
        } else {
            "T"
        };
        let mut metrics: Vec<&str> = Vec::new();
        for r in &summary.rows {
            if !metrics.contains(&r.metric.as_str()) {
                metrics.push(&r.metric);
            }
        }
        for m in metrics {
            if let Some(doc) = svg::render_metric(summary, m, x_label) {
                let path = out_dir.join(format!("{}_{stem}_{m}.svg", experiment.as_str()));
                fs::write(&path, doc).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
                written.push(path);
            }
        }
    }
    Ok(written)
}
