use std::io::{Read, Write};

use crate::HarnessError;

pub const CSV_HEADER: [&str; 8] = [
    "experiment",
    "scenario_or_alpha",
    "t_or_grade",
    "estimator",
    "metric",
    "value",
    "stderr",
    "reps",
];

/// One aggregated number for a grid point, estimator and metric.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub experiment: String,
    /// Scenario number, `alpha=<a>;S=<s>` for teacher runs, or a model family.
    pub point: String,
    /// Number of measurements, or grade (from 1) for teacher runs.
    pub x: usize,
    pub estimator: String,
    pub metric: String,
    pub value: f64,
    /// Sample SD over replications divided by `sqrt(reps)`.
    pub stderr: f64,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct McSummary {
    pub rows: Vec<SummaryRow>,
}

/// Mean and standard error of the mean.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

impl McSummary {
    pub fn get(&self, point: &str, x: usize, estimator: &str, metric: &str) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.point == point && r.x == x && r.estimator == estimator && r.metric == metric)
    }

    /// `(x, value, stderr)` sorted by `x`.
    pub fn series(&self, point: &str, estimator: &str, metric: &str) -> Vec<(usize, f64, f64)> {
        let mut out: Vec<(usize, f64, f64)> = self
            .rows
            .iter()
            .filter(|r| r.point == point && r.estimator == estimator && r.metric == metric)
            .map(|r| (r.x, r.value, r.stderr))
            .collect();
        out.sort_by_key(|p| p.0);
        out
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER).map_err(HarnessError::io)?;
        for r in &self.rows {
            w.write_record([
                r.experiment.clone(),
                r.point.clone(),
                r.x.to_string(),
                r.estimator.clone(),
                r.metric.clone(),
                format!("{:?}", r.value),
                format!("{:?}", r.stderr),
                r.reps.to_string(),
            ])
            .map_err(HarnessError::io)?;
        }
        w.flush().map_err(HarnessError::io)
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, HarnessError> {
        let mut rdr = csv::Reader::from_reader(input);
        let header = rdr.headers().map_err(HarnessError::io)?.clone();
        if header.iter().ne(CSV_HEADER.iter().copied()) {
            return Err(HarnessError::Io(format!("unexpected CSV header {header:?}")));
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(HarnessError::io)?;
            let num = |j: usize| rec[j].parse::<f64>().map_err(HarnessError::io);
            rows.push(SummaryRow {
                experiment: rec[0].to_string(),
                point: rec[1].to_string(),
                x: rec[2].parse().map_err(HarnessError::io)?,
                estimator: rec[3].to_string(),
                metric: rec[4].to_string(),
                value: num(5)?,
                stderr: num(6)?,
                reps: rec[7].parse().map_err(HarnessError::io)?,
            });
        }
        Ok(Self { rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_summary_is_header_only() {
        let mut buf = Vec::new();
        McSummary::default().write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "experiment,scenario_or_alpha,t_or_grade,estimator,metric,value,stderr,reps\n"
        );
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let s = McSummary {
            rows: vec![SummaryRow {
                experiment: "example3".into(),
                point: "alpha=0.3;S=2".into(),
                x: 4,
                estimator: "gls_known".into(),
                metric: "teacher_var_frac".into(),
                value: 0.1 + 0.2,
                stderr: 1.0 / 3.0,
                reps: 100,
            }],
        };
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(McSummary::read_csv(buf.as_slice()).unwrap(), s);
    }

    #[test]
    fn standard_error() {
        let (m, se) = mean_se(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((se - 1.0).abs() < 1e-15);
        assert_eq!(mean_se(&[5.0]), (5.0, 0.0));
    }
}
