//! CSV pair for a generated dataset.
//!
//! `scores.csv`: `student,t,subject,y`, one line per observed score, where
//! `t` is the measurement occasion and `subject` the subject within it.
//! `design.csv`: `row,column,value`, nonzero entries of the stacked design
//! with `row` the 0-based line of the score in `scores.csv`.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};

use super::GeneratedDataset;
use crate::error::{PanelError, Result};
use crate::panel::{PanelDesign, StudentBlock};

fn io_err(e: impl std::fmt::Display) -> PanelError {
    PanelError::InvalidParameter(format!("csv: {e}"))
}

pub fn write_scores<W: Write>(ds: &GeneratedDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["student", "t", "subject", "y"]).map_err(io_err)?;
    let s_n = ds.n_subjects.max(1);
    for (i, block) in ds.design.blocks().iter().enumerate() {
        let yi = ds.design.student_values(&ds.y, i);
        for (r, &t) in block.times.iter().enumerate() {
            w.write_record([
                i.to_string(),
                (t / s_n).to_string(),
                (t % s_n).to_string(),
                format!("{:?}", yi[r]),
            ])
            .map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

pub fn write_design<W: Write>(ds: &GeneratedDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["row", "column", "value"]).map_err(io_err)?;
    for (i, block) in ds.design.blocks().iter().enumerate() {
        let off = ds.design.offset(i);
        for r in 0..block.n_rows() {
            for (l, &c) in block.cols.iter().enumerate() {
                let v = block.z[(r, l)];
                if v != 0.0 {
                    w.write_record([(off + r).to_string(), c.to_string(), format!("{v:?}")])
                        .map_err(io_err)?;
                }
            }
        }
    }
    w.flush().map_err(io_err)
}

/// Rebuilds the response and design from the CSV pair. Every student keeps
/// the columns it touches in the file.
pub fn read_pair<R1: Read, R2: Read>(
    scores: R1,
    design: R2,
    n_subjects: usize,
    n_times: usize,
    k: usize,
) -> Result<(PanelDesign, DVector<f64>)> {
    let mut rows: Vec<(usize, usize, f64)> = Vec::new();
    for rec in csv::Reader::from_reader(scores).records() {
        let rec = rec.map_err(io_err)?;
        let num = |j: usize| -> Result<usize> { rec[j].parse().map_err(io_err) };
        let student = num(0)?;
        let t = num(1)? * n_subjects + num(2)?;
        let y: f64 = rec[3].parse().map_err(io_err)?;
        rows.push((student, t, y));
    }
    let mut entries: Vec<Vec<(usize, f64)>> = vec![Vec::new(); rows.len()];
    for rec in csv::Reader::from_reader(design).records() {
        let rec = rec.map_err(io_err)?;
        let row: usize = rec[0].parse().map_err(io_err)?;
        let col: usize = rec[1].parse().map_err(io_err)?;
        let v: f64 = rec[2].parse().map_err(io_err)?;
        if row >= rows.len() || col >= k {
            return Err(PanelError::Dimension(format!(
                "design entry ({row}, {col}) out of range"
            )));
        }
        entries[row].push((col, v));
    }

    let mut blocks = Vec::new();
    let mut start = 0;
    while start < rows.len() {
        let student = rows[start].0;
        if student != blocks.len() {
            return Err(PanelError::Dimension(format!("scores out of order at line {start}")));
        }
        let end = start + rows[start..].iter().take_while(|r| r.0 == student).count();
        let mut cols: Vec<usize> = entries[start..end].iter().flatten().map(|e| e.0).collect();
        cols.sort_unstable();
        cols.dedup();
        let mut z = DMatrix::zeros(end - start, cols.len());
        for (r, row) in entries[start..end].iter().enumerate() {
            for &(c, v) in row {
                z[(r, cols.binary_search(&c).expect("collected above"))] = v;
            }
        }
        blocks.push(StudentBlock {
            times: rows[start..end].iter().map(|r| r.1).collect(),
            cols,
            z,
        });
        start = end;
    }
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.2));
    Ok((PanelDesign::new(n_times, k, blocks)?, y))
}
