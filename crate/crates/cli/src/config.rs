//! Key-value experiment configuration.
//!
//! One `key = value` per line; `#` starts a comment. Lists are comma
//! separated. Keys:
//!
//! | key            | meaning                                         |
//! |----------------|-------------------------------------------------|
//! | `experiment`   | `example1`, `example2`, `example3`, `diagnostics` (required) |
//! | `scenarios`    | selection scenarios (examples 1 and 2)          |
//! | `t_values`     | numbers of measurements (examples 1, 2, diagnostics) |
//! | `subjects`     | subjects per grade (example 3)                  |
//! | `alphas`       | teacher-effect persistence values (example 3)   |
//! | `grades`       | grades followed (example 3)                     |
//! | `n`            | students per dataset                            |
//! | `reps`         | Monte Carlo replications per grid point         |
//! | `base_seed`    | seed all replication seeds are derived from     |
//! | `estimators`   | `ols`, `fe`, `gls_known`, `gls_feasible`, `class_means` |
//! | `missing_rate` | share of scores dropped at random (examples 1 and 2) |
//! | `out`          | output directory                                |

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Experiment {
    Example1,
    Example2,
    Example3,
    Diagnostics,
}

impl Experiment {
    pub fn as_str(&self) -> &'static str {
        match self {
            Experiment::Example1 => "example1",
            Experiment::Example2 => "example2",
            Experiment::Example3 => "example3",
            Experiment::Diagnostics => "diagnostics",
        }
    }
}

impl FromStr for Experiment {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "example1" => Ok(Experiment::Example1),
            "example2" => Ok(Experiment::Example2),
            "example3" => Ok(Experiment::Example3),
            "diagnostics" => Ok(Experiment::Diagnostics),
            _ => Err(format!("unknown experiment `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EstimatorKind {
    ClassMeans,
    Ols,
    FixedEffects,
    GlsKnown,
    GlsFeasible,
}

impl EstimatorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorKind::ClassMeans => "class_means",
            EstimatorKind::Ols => "ols",
            EstimatorKind::FixedEffects => "fe",
            EstimatorKind::GlsKnown => "gls_known",
            EstimatorKind::GlsFeasible => "gls_feasible",
        }
    }
}

impl FromStr for EstimatorKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "class_means" => Ok(EstimatorKind::ClassMeans),
            "ols" => Ok(EstimatorKind::Ols),
            "fe" => Ok(EstimatorKind::FixedEffects),
            "gls_known" => Ok(EstimatorKind::GlsKnown),
            "gls_feasible" => Ok(EstimatorKind::GlsFeasible),
            _ => Err(format!("unknown estimator `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub scenarios: Vec<u8>,
    pub t_values: Vec<usize>,
    pub subjects: Vec<usize>,
    pub alphas: Vec<f64>,
    pub grades: usize,
    pub n: usize,
    pub reps: usize,
    pub base_seed: u64,
    pub estimators: Vec<EstimatorKind>,
    pub missing_rate: f64,
    pub out: PathBuf,
}

const KEYS: [&str; 12] = [
    "experiment",
    "scenarios",
    "t_values",
    "subjects",
    "alphas",
    "grades",
    "n",
    "reps",
    "base_seed",
    "estimators",
    "missing_rate",
    "out",
];

impl ExperimentConfig {
    /// Defaults for `experiment`, following the published simulation sizes.
    pub fn defaults(experiment: Experiment) -> Self {
        use EstimatorKind::*;
        let (scenarios, t_values, estimators) = match experiment {
            Experiment::Example1 => (vec![1, 2, 3, 4], vec![3, 5, 10, 15, 20], vec![Ols, GlsKnown]),
            Experiment::Example2 => (vec![1, 2, 3], (2..=20).collect(), vec![Ols, GlsKnown, GlsFeasible]),
            Experiment::Example3 => (Vec::new(), Vec::new(), vec![ClassMeans, Ols, GlsKnown]),
            Experiment::Diagnostics => (Vec::new(), vec![3, 5, 10, 15, 20, 50, 100, 200], Vec::new()),
        };
        let ex3 = experiment == Experiment::Example3;
        Self {
            experiment,
            scenarios,
            t_values,
            subjects: if ex3 { vec![1, 2, 3, 4] } else { Vec::new() },
            alphas: if ex3 { vec![0.0, 0.3, 0.7, 1.0] } else { Vec::new() },
            grades: 5,
            n: 1000,
            reps: 100,
            base_seed: 20_100_101,
            estimators,
            missing_rate: 0.0,
            out: PathBuf::from("results"),
        }
    }

    /// Number of grid points.
    pub fn grid_len(&self) -> usize {
        match self.experiment {
            Experiment::Example1 | Experiment::Example2 => self.scenarios.len() * self.t_values.len(),
            Experiment::Example3 => self.subjects.len() * self.alphas.len(),
            Experiment::Diagnostics => self.t_values.len(),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let mut problems = Vec::new();
        if self.reps == 0 {
            problems.push("reps must be at least 1".to_string());
        }
        if self.grid_len() == 0 {
            problems.push("grid is empty".to_string());
        }
        match self.experiment {
            Experiment::Example1 | Experiment::Example2 => {
                let max = if self.experiment == Experiment::Example1 { 4 } else { 3 };
                if let Some(s) = self.scenarios.iter().find(|&&s| s == 0 || s > max) {
                    problems.push(format!("scenario {s} not in 1..={max}"));
                }
                let min_t = if self.experiment == Experiment::Example1 { 1 } else { 2 };
                if let Some(t) = self.t_values.iter().find(|&&t| t < min_t) {
                    problems.push(format!("T = {t} below {min_t}"));
                }
                if !(0.0..1.0).contains(&self.missing_rate) {
                    problems.push(format!("missing_rate {} outside [0, 1)", self.missing_rate));
                }
            }
            Experiment::Example3 => {
                if self.subjects.contains(&0) {
                    problems.push("subjects must be at least 1".into());
                }
                if let Some(a) = self.alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
                    problems.push(format!("alpha {a} outside [0, 1]"));
                }
                if self.grades < 2 {
                    problems.push("grades must be at least 2".into());
                }
                if self.n == 0 || self.n % 25 != 0 {
                    problems.push(format!(
                        "n = {} is not a positive multiple of the class size 25",
                        self.n
                    ));
                }
                if self.missing_rate != 0.0 {
                    problems.push("missing_rate is only supported for example1 and example2".into());
                }
            }
            Experiment::Diagnostics => {
                if self.t_values.iter().any(|&t| t < 2) {
                    problems.push("diagnostics need T >= 2".into());
                }
                if !self.estimators.is_empty() {
                    problems.push("diagnostics take no estimators".into());
                }
            }
        }
        if self.experiment != Experiment::Diagnostics {
            if self.estimators.is_empty() {
                problems.push("no estimators requested".into());
            }
            if self.n == 0 {
                problems.push("n must be positive".into());
            }
        }
        for e in &self.estimators {
            let ok = match e {
                EstimatorKind::ClassMeans => self.experiment == Experiment::Example3,
                EstimatorKind::GlsFeasible => {
                    matches!(self.experiment, Experiment::Example1 | Experiment::Example2) && self.missing_rate == 0.0
                }
                EstimatorKind::FixedEffects => match self.experiment {
                    Experiment::Example1 => self.scenarios.iter().all(|s| s % 2 == 0),
                    Experiment::Example2 | Experiment::Example3 => true,
                    Experiment::Diagnostics => false,
                },
                EstimatorKind::Ols | EstimatorKind::GlsKnown => self.experiment != Experiment::Diagnostics,
            };
            if !ok {
                problems.push(format!(
                    "estimator `{}` is not applicable to this {} configuration",
                    e.as_str(),
                    self.experiment.as_str()
                ));
            }
        }
        if self.experiment == Experiment::Example1
            && self.estimators.contains(&EstimatorKind::GlsFeasible)
            && self.t_values.iter().any(|&t| t >= self.n)
        {
            problems.push("gls_feasible needs n > T".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(HarnessError::Config(problems))
        }
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|_| format!("{key}: cannot parse `{s}`")))
        .collect()
}

fn parse_one<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
    value.parse::<T>().map_err(|_| format!("{key}: cannot parse `{value}`"))
}

/// Parses configuration text. All offending lines are reported together.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, HarnessError> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    let mut problems = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            problems.push(format!("line {}: expected `key = value`", lineno + 1));
            continue;
        };
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if !KEYS.contains(&k.as_str()) {
            problems.push(format!("unknown key `{k}`"));
        } else if pairs.iter().any(|(p, _)| *p == k) {
            problems.push(format!("duplicate key `{k}`"));
        } else {
            pairs.push((k, v));
        }
    }
    let experiment = match pairs.iter().find(|(k, _)| k == "experiment") {
        Some((_, v)) => match v.parse::<Experiment>() {
            Ok(e) => Some(e),
            Err(e) => {
                problems.push(e);
                None
            }
        },
        None => {
            problems.push("missing required key `experiment`".into());
            None
        }
    };
    let Some(experiment) = experiment else {
        return Err(HarnessError::Config(problems));
    };
    let mut cfg = ExperimentConfig::defaults(experiment);
    for (k, v) in &pairs {
        let res: Result<(), String> = (|| {
            match k.as_str() {
                "experiment" => {}
                "scenarios" => cfg.scenarios = parse_list(k, v)?,
                "t_values" => cfg.t_values = parse_list(k, v)?,
                "subjects" => cfg.subjects = parse_list(k, v)?,
                "alphas" => cfg.alphas = parse_list(k, v)?,
                "grades" => cfg.grades = parse_one(k, v)?,
                "n" => cfg.n = parse_one(k, v)?,
                "reps" => cfg.reps = parse_one(k, v)?,
                "base_seed" => cfg.base_seed = parse_one(k, v)?,
                "estimators" => cfg.estimators = parse_list(k, v)?,
                "missing_rate" => cfg.missing_rate = parse_one(k, v)?,
                "out" => cfg.out = PathBuf::from(v),
                _ => unreachable!("keys filtered above"),
            }
            Ok(())
        })();
        if let Err(e) = res {
            problems.push(e);
        }
    }
    if !problems.is_empty() {
        return Err(HarnessError::Config(problems));
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    parse_config_str(&text)
}

fn join<T: fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let est: Vec<&str> = self.estimators.iter().map(|e| e.as_str()).collect();
        writeln!(f, "experiment = {}", self.experiment.as_str())?;
        writeln!(f, "scenarios = {}", join(&self.scenarios))?;
        writeln!(f, "t_values = {}", join(&self.t_values))?;
        writeln!(f, "subjects = {}", join(&self.subjects))?;
        writeln!(
            f,
            "alphas = {}",
            self.alphas
                .iter()
                .map(|a| format!("{a:?}"))
                .collect::<Vec<_>>()
                .join(", ")
        )?;
        writeln!(f, "grades = {}", self.grades)?;
        writeln!(f, "n = {}", self.n)?;
        writeln!(f, "reps = {}", self.reps)?;
        writeln!(f, "base_seed = {}", self.base_seed)?;
        writeln!(f, "estimators = {}", est.join(", "))?;
        writeln!(f, "missing_rate = {:?}", self.missing_rate)?;
        writeln!(f, "out = {}", self.out.display())
    }
}
