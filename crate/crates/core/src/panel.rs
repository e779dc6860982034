//! Stacked panel designs, observation masks and the within-student projection.
//!
//! Rows of a [`PanelDesign`] are stacked student by student. Each student
//! carries a dense block restricted to the columns it touches, so designs
//! with many columns (one per teacher, say) stay cheap as long as each
//! student only loads on a few of them.

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::error::{PanelError, Result};

/// Relative singular-value tolerance for numerical rank.
pub const RANK_TOL: f64 = 1e-8;

/// One student's rows of the design.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentBlock {
    /// Measurement indices (0-based, strictly increasing) of the observed rows.
    pub times: Vec<usize>,
    /// Global column ids of the local columns (strictly increasing).
    pub cols: Vec<usize>,
    /// `times.len() x cols.len()` values.
    pub z: DMatrix<f64>,
}

impl StudentBlock {
    pub fn dense(z: DMatrix<f64>) -> Self {
        let times = (0..z.nrows()).collect();
        let cols = (0..z.ncols()).collect();
        Self { times, cols, z }
    }

    pub fn n_rows(&self) -> usize {
        self.times.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelDesign {
    n_times: usize,
    k: usize,
    blocks: Vec<StudentBlock>,
    offsets: Vec<usize>,
}

impl PanelDesign {
    /// Builds a design from per-student blocks; block `i` belongs to student `i`.
    pub fn new(n_times: usize, k: usize, blocks: Vec<StudentBlock>) -> Result<Self> {
        let mut offsets = Vec::with_capacity(blocks.len());
        let mut row = 0;
        for (i, b) in blocks.iter().enumerate() {
            if b.times.is_empty() {
                return Err(PanelError::EmptyStudent { student: i });
            }
            if b.times.len() > n_times {
                return Err(PanelError::Dimension(format!(
                    "student {i} has {} rows but T = {n_times}",
                    b.times.len()
                )));
            }
            if !strictly_increasing_below(&b.times, n_times) {
                return Err(PanelError::Dimension(format!(
                    "student {i}: measurement indices must be increasing and < {n_times}"
                )));
            }
            if !strictly_increasing_below(&b.cols, k) {
                return Err(PanelError::Dimension(format!(
                    "student {i}: column ids must be increasing and < {k}"
                )));
            }
            if b.z.nrows() != b.times.len() || b.z.ncols() != b.cols.len() {
                return Err(PanelError::Dimension(format!(
                    "student {i}: block is {}x{}, expected {}x{}",
                    b.z.nrows(),
                    b.z.ncols(),
                    b.times.len(),
                    b.cols.len()
                )));
            }
            offsets.push(row);
            row += b.times.len();
        }
        Ok(Self {
            n_times,
            k,
            blocks,
            offsets,
        })
    }

    /// Balanced design from a dense `(n*T x k)` matrix with rows ordered
    /// student-major.
    pub fn from_balanced(z: &DMatrix<f64>, n: usize, n_times: usize) -> Result<Self> {
        if z.nrows() != n * n_times {
            return Err(PanelError::Dimension(format!(
                "Z has {} rows, expected n*T = {}",
                z.nrows(),
                n * n_times
            )));
        }
        let blocks = (0..n)
            .map(|i| StudentBlock::dense(z.rows(i * n_times, n_times).into_owned()))
            .collect();
        Self::new(n_times, z.ncols(), blocks)
    }

    /// Design from a dense matrix plus explicit row maps. Rows must already
    /// be grouped by student with ids `0..n` in order.
    pub fn from_dense(z: &DMatrix<f64>, student_of: &[usize], time_of: &[usize], n_times: usize) -> Result<Self> {
        if student_of.len() != z.nrows() || time_of.len() != z.nrows() {
            return Err(PanelError::Dimension("row maps must cover every row of Z".into()));
        }
        let mut blocks: Vec<StudentBlock> = Vec::new();
        let mut start = 0;
        while start < z.nrows() {
            let s = student_of[start];
            if s != blocks.len() {
                return Err(PanelError::Dimension(format!(
                    "rows must be grouped by student in order; found student {s} at row {start}"
                )));
            }
            let mut end = start;
            while end < z.nrows() && student_of[end] == s {
                end += 1;
            }
            blocks.push(StudentBlock {
                times: time_of[start..end].to_vec(),
                cols: (0..z.ncols()).collect(),
                z: z.rows(start, end - start).into_owned(),
            });
            start = end;
        }
        Self::new(n_times, z.ncols(), blocks)
    }

    pub fn n_students(&self) -> usize {
        self.blocks.len()
    }

    /// Scores per student in the balanced case.
    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_rows(&self) -> usize {
        self.blocks.iter().map(StudentBlock::n_rows).sum()
    }

    pub fn blocks(&self) -> &[StudentBlock] {
        &self.blocks
    }

    pub fn offset(&self, student: usize) -> usize {
        self.offsets[student]
    }

    /// The rows of a stacked vector that belong to `student`.
    pub fn student_values<'a>(&self, y: &'a DVector<f64>, student: usize) -> DVectorView<'a, f64> {
        y.rows(self.offsets[student], self.blocks[student].n_rows())
    }

    pub fn student_of(&self) -> Vec<usize> {
        self.blocks
            .iter()
            .enumerate()
            .flat_map(|(i, b)| std::iter::repeat_n(i, b.n_rows()))
            .collect()
    }

    pub fn time_of(&self) -> Vec<usize> {
        self.blocks.iter().flat_map(|b| b.times.iter().copied()).collect()
    }

    /// Every student observed at every measurement index.
    pub fn is_balanced(&self) -> bool {
        self.blocks.iter().all(|b| b.times.len() == self.n_times)
    }

    pub fn check_response(&self, y: &DVector<f64>) -> Result<()> {
        if y.len() != self.n_rows() {
            return Err(PanelError::Dimension(format!(
                "response has {} entries, design has {} rows",
                y.len(),
                self.n_rows()
            )));
        }
        Ok(())
    }

    /// Materializes the full `(rows x k)` matrix. Meant for small designs.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut z = DMatrix::zeros(self.n_rows(), self.k);
        for (b, &off) in self.blocks.iter().zip(&self.offsets) {
            for (lc, &gc) in b.cols.iter().enumerate() {
                for r in 0..b.n_rows() {
                    z[(off + r, gc)] = b.z[(r, lc)];
                }
            }
        }
        z
    }

    /// Removes global columns `drop` and renumbers the rest. Returns the new
    /// design and, for each new column, its old index.
    pub fn drop_columns(&self, drop: &[usize]) -> Result<(Self, Vec<usize>)> {
        if let Some(&c) = drop.iter().find(|&&c| c >= self.k) {
            return Err(PanelError::Dimension(format!("column {c} out of range")));
        }
        let kept: Vec<usize> = (0..self.k).filter(|c| !drop.contains(c)).collect();
        let mut new_index = vec![usize::MAX; self.k];
        for (j, &c) in kept.iter().enumerate() {
            new_index[c] = j;
        }
        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                let local: Vec<usize> = (0..b.cols.len())
                    .filter(|&l| new_index[b.cols[l]] != usize::MAX)
                    .collect();
                StudentBlock {
                    times: b.times.clone(),
                    cols: local.iter().map(|&l| new_index[b.cols[l]]).collect(),
                    z: b.z.select_columns(local.iter()),
                }
            })
            .collect();
        Ok((Self::new(self.n_times, kept.len(), blocks)?, kept))
    }

    /// Keeps only the rows flagged present in `mask`, returning the reduced
    /// design and response.
    pub fn apply_mask(&self, y: &DVector<f64>, mask: &ObservationMask) -> Result<(Self, DVector<f64>)> {
        self.check_response(y)?;
        if mask.n_students() != self.n_students() {
            return Err(PanelError::Dimension("mask and design disagree on n".into()));
        }
        let mut blocks = Vec::with_capacity(self.blocks.len());
        let mut values = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            let present = mask.present(i);
            let keep: Vec<usize> = (0..b.n_rows()).filter(|&r| present[b.times[r]]).collect();
            if keep.is_empty() {
                return Err(PanelError::EmptyStudent { student: i });
            }
            let yb = self.student_values(y, i);
            values.extend(keep.iter().map(|&r| yb[r]));
            blocks.push(StudentBlock {
                times: keep.iter().map(|&r| b.times[r]).collect(),
                cols: b.cols.clone(),
                z: b.z.select_rows(keep.iter()),
            });
        }
        Ok((Self::new(self.n_times, self.k, blocks)?, DVector::from_vec(values)))
    }
}

fn strictly_increasing_below(v: &[usize], bound: usize) -> bool {
    v.windows(2).all(|w| w[0] < w[1]) && v.last().is_none_or(|&x| x < bound)
}

/// Per-student presence indicators over measurement indices `0..T`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationMask {
    n_times: usize,
    present: Vec<Vec<bool>>,
}

impl ObservationMask {
    pub fn new(n_times: usize, present: Vec<Vec<bool>>) -> Result<Self> {
        for (i, p) in present.iter().enumerate() {
            if p.len() != n_times {
                return Err(PanelError::Dimension(format!(
                    "student {i}: mask has {} entries, expected {n_times}",
                    p.len()
                )));
            }
            if !p.iter().any(|&x| x) {
                return Err(PanelError::EmptyStudent { student: i });
            }
        }
        Ok(Self { n_times, present })
    }

    pub fn all_present(n: usize, n_times: usize) -> Self {
        Self {
            n_times,
            present: vec![vec![true; n_times]; n],
        }
    }

    pub fn n_students(&self) -> usize {
        self.present.len()
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn present(&self, student: usize) -> &[bool] {
        &self.present[student]
    }

    /// Observed measurement indices of `student`.
    pub fn observed(&self, student: usize) -> Vec<usize> {
        (0..self.n_times).filter(|&t| self.present[student][t]).collect()
    }

    pub fn observed_fraction(&self) -> f64 {
        let total = self.present.len() * self.n_times;
        let seen: usize = self.present.iter().map(|p| p.iter().filter(|&&x| x).count()).sum();
        seen as f64 / total as f64
    }
}

/// Variance components of the standard one-factor model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarVarianceComponents {
    nu2: f64,
    sigma2: f64,
}

impl ScalarVarianceComponents {
    pub fn new(nu2: f64, sigma2: f64) -> Result<Self> {
        if !(nu2 >= 0.0 && nu2.is_finite()) || !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(PanelError::InvalidParameter(format!(
                "need nu2 >= 0 and sigma2 > 0, got nu2 = {nu2}, sigma2 = {sigma2}"
            )));
        }
        Ok(Self { nu2, sigma2 })
    }

    /// From an intra-class correlation with unit total variance.
    pub fn from_rho(rho: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rho) {
            return Err(PanelError::InvalidParameter(format!(
                "rho must lie in [0, 1), got {rho}"
            )));
        }
        Self::new(rho, 1.0 - rho)
    }

    pub fn nu2(&self) -> f64 {
        self.nu2
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn rho(&self) -> f64 {
        self.nu2 / (self.nu2 + self.sigma2)
    }
}

/// Subtracts each row's student mean: `(I - H_D) values`, column by column.
pub fn within_projection(values: &DMatrix<f64>, student_of: &[usize]) -> Result<DMatrix<f64>> {
    if student_of.len() != values.nrows() {
        return Err(PanelError::Dimension(format!(
            "student map has {} entries for {} rows",
            student_of.len(),
            values.nrows()
        )));
    }
    let n = student_of.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; n];
    for &s in student_of {
        counts[s] += 1;
    }
    if let Some(student) = counts.iter().position(|&c| c == 0) {
        return Err(PanelError::EmptyStudent { student });
    }
    let mut sums = DMatrix::<f64>::zeros(n, values.ncols());
    for (r, &s) in student_of.iter().enumerate() {
        for c in 0..values.ncols() {
            sums[(s, c)] += values[(r, c)];
        }
    }
    let mut out = values.clone();
    for (r, &s) in student_of.iter().enumerate() {
        for c in 0..values.ncols() {
            out[(r, c)] -= sums[(s, c)] / counts[s] as f64;
        }
    }
    Ok(out)
}

/// Within-student demeaning of a single student's block (all rows share one student).
pub(crate) fn demean_block(z: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = z.clone();
    let m = z.nrows() as f64;
    for c in 0..z.ncols() {
        let mean = z.column(c).sum() / m;
        out.column_mut(c).add_scalar_mut(-mean);
    }
    out
}

/// Numerical rank of a design, optionally augmented with student indicators.
#[derive(Debug, Clone, PartialEq)]
pub struct RankReport {
    /// Rank of `Z`, or of `[Z | D]` when student indicators are included.
    pub rank: usize,
    /// Column count of the tested matrix.
    pub n_columns: usize,
    /// Columns of `Z` that are linear combinations of earlier columns
    /// (and of the student indicators, when included).
    pub dependent_columns: Vec<usize>,
    /// Singular values of `Z` or of the within-projected `Z`, descending.
    pub singular_values: Vec<f64>,
}

impl RankReport {
    pub fn is_full_rank(&self) -> bool {
        self.rank == self.n_columns
    }
}

/// Rank diagnostic for a design. With indicators, `rank([Z|D]) = n + rank((I - H_D) Z)`.
/// Singular values below `1e-8` times the largest are treated as zero.
pub fn validate_design(design: &PanelDesign, with_student_indicators: bool) -> RankReport {
    let mut z = design.to_dense();
    if with_student_indicators {
        z = within_projection(&z, &design.student_of()).expect("design blocks are never empty");
    }
    let k = design.k();
    let mut sv: Vec<f64> = if z.nrows() == 0 || k == 0 {
        Vec::new()
    } else {
        z.clone().svd(false, false).singular_values.iter().copied().collect()
    };
    sv.sort_by(|a, b| b.total_cmp(a));
    let smax = sv.first().copied().unwrap_or(0.0);
    let cutoff = RANK_TOL * smax;
    let rank_z = sv.iter().filter(|&&s| s > cutoff && s > 0.0).count();

    // Sequential Gram-Schmidt with one re-orthogonalization pass to name the
    // offending columns.
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut dependent = Vec::new();
    for j in 0..k {
        let mut v: DVector<f64> = z.column(j).into_owned();
        for _ in 0..2 {
            for q in &basis {
                let proj = q.dot(&v);
                v.axpy(-proj, q, 1.0);
            }
        }
        let norm = v.norm();
        if norm <= cutoff || norm == 0.0 {
            dependent.push(j);
        } else {
            basis.push(v / norm);
        }
    }

    let (rank, n_columns) = if with_student_indicators {
        (rank_z + design.n_students(), k + design.n_students())
    } else {
        (rank_z, k)
    };
    RankReport {
        rank,
        n_columns,
        dependent_columns: dependent,
        singular_values: sv,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_diff;

    fn student_map(n: usize, t: usize) -> Vec<usize> {
        (0..n * t).map(|r| r / t).collect()
    }

    #[test]
    fn constant_per_student_demeans_to_zero() {
        let map = student_map(3, 4);
        let v = DMatrix::from_fn(12, 2, |r, c| (r / 4) as f64 * 3.0 + c as f64);
        let out = within_projection(&v, &map).unwrap();
        assert!(out.iter().all(|x| x.abs() < 1e-14));
    }

    #[test]
    fn projection_is_idempotent() {
        let map = student_map(4, 3);
        let v = DMatrix::from_fn(12, 3, |r, c| ((r * 7 + c * 3) % 5) as f64 - 1.3 * c as f64);
        let once = within_projection(&v, &map).unwrap();
        let twice = within_projection(&once, &map).unwrap();
        assert!(max_abs_diff(&once, &twice) < 1e-12);
    }

    #[test]
    fn projection_matches_explicit_hat_matrix() {
        // D (D'D)^{-1} D' built densely for a 4-student, T = 3 layout.
        let (n, t) = (4, 3);
        let map = student_map(n, t);
        let d = DMatrix::from_fn(n * t, n, |r, c| if map[r] == c { 1.0 } else { 0.0 });
        let dtd_inv = (d.transpose() * &d).try_inverse().unwrap();
        let h = &d * dtd_inv * d.transpose();
        let m = DMatrix::identity(n * t, n * t) - h;
        let v = DMatrix::from_fn(n * t, 2, |r, c| (r as f64 * 0.37 + c as f64).sin());
        let expected = m * &v;
        let got = within_projection(&v, &map).unwrap();
        assert!(max_abs_diff(&expected, &got) < 1e-10);
    }

    #[test]
    fn projection_rejects_missing_student() {
        let v = DMatrix::zeros(3, 1);
        let err = within_projection(&v, &[0, 2, 2]).unwrap_err();
        assert_eq!(err, PanelError::EmptyStudent { student: 1 });
    }

    #[test]
    fn student_constant_column_is_absorbed() {
        let (n, t) = (5, 3);
        let z = DMatrix::from_fn(n * t, 2, |r, c| {
            if c == 0 {
                ((r * 13) % 7) as f64
            } else {
                (r / t) as f64 * 1.5 + 1.0
            }
        });
        let design = PanelDesign::from_balanced(&z, n, t).unwrap();
        let with_d = validate_design(&design, true);
        assert!(!with_d.is_full_rank());
        assert_eq!(with_d.dependent_columns, vec![1]);
        let without = validate_design(&design, false);
        assert!(without.is_full_rank());
    }

    #[test]
    fn varying_treatment_is_full_rank() {
        let (n, t) = (6, 4);
        let z = DMatrix::from_fn(n * t, 1, |r, _| ((r * 5 + r / t) % 2) as f64);
        let design = PanelDesign::from_balanced(&z, n, t).unwrap();
        let report = validate_design(&design, true);
        assert!(report.is_full_rank(), "{report:?}");
        assert_eq!(report.rank, n + 1);
    }

    #[test]
    fn mask_drops_rows() {
        let z = DMatrix::from_fn(6, 1, |r, _| r as f64);
        let design = PanelDesign::from_balanced(&z, 2, 3).unwrap();
        let y = DVector::from_fn(6, |r, _| 10.0 + r as f64);
        let mask = ObservationMask::new(3, vec![vec![true, false, true], vec![false, true, false]]).unwrap();
        let (d2, y2) = design.apply_mask(&y, &mask).unwrap();
        assert_eq!(d2.n_rows(), 3);
        assert_eq!(d2.blocks()[0].times, vec![0, 2]);
        assert_eq!(y2.as_slice(), &[10.0, 12.0, 14.0]);
        assert!(ObservationMask::new(3, vec![vec![false; 3]]).is_err());
    }

    #[test]
    fn rho_from_components() {
        let vc = ScalarVarianceComponents::new(0.7, 0.3).unwrap();
        assert!((vc.rho() - 0.7).abs() < 1e-15);
        assert!(ScalarVarianceComponents::new(1.0, 0.0).is_err());
        assert!(ScalarVarianceComponents::from_rho(1.0).is_err());
    }
}
