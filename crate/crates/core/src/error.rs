use thiserror::Error;

/// Errors raised by the panel library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PanelError {
    #[error("matrix `{which}` is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { which: &'static str, min_eigenvalue: f64 },
    #[error("loading matrix has rank {rank}, expected {expected}")]
    RankDeficientLoadings { rank: usize, expected: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("student {student} has no observed rows")]
    EmptyStudent { student: usize },
    #[error("design is rank deficient; dependent columns {columns:?}")]
    RankDeficient { columns: Vec<usize> },
    #[error("normal matrix is singular")]
    SingularNormalMatrix,
    #[error("panel is unbalanced: {0}")]
    Unbalanced(String),
    #[error("insufficient students: n = {n}, need more than T = {t}")]
    InsufficientStudents { n: usize, t: usize },
    #[error("class {class} is empty")]
    EmptyClass { class: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T, E = PanelError> = std::result::Result<T, E>;
