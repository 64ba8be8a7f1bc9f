use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("operator is not Hermitian (max deviation {deviation:e})")]
    NotHermitian { deviation: f64 },

    #[error("operator is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("non-finite matrix entry")]
    NonFinite,

    #[error("zero operator where a nonzero one is required")]
    ZeroOperator,

    #[error("measurement is not complete (max deviation from identity {deviation:e})")]
    Incomplete { deviation: f64 },

    #[error(
        "ray grouping for party {party} is ambiguous: distance {distance:e} lies between {tol:e} and {upper:e}"
    )]
    GroupingAmbiguity {
        party: usize,
        distance: f64,
        tol: f64,
        upper: f64,
    },

    #[error("invalid LOCC tree: {0}")]
    InvalidTree(String),

    #[error("inconsistent cycle: {0}")]
    InvalidCycle(String),

    #[error("parameter out of range: {0}")]
    Parameter(String),

    #[error("epsilon {epsilon} is not below the threshold {threshold}")]
    Threshold { epsilon: f64, threshold: f64 },

    #[error("could not make local elements pairwise distinct after {attempts} attempts")]
    Distinctness { attempts: usize },

    #[error("appended branch planes intersect after {attempts} attempts")]
    PlaneIntersection { attempts: usize },

    #[error("matching is not a bijection: {0}")]
    Matching(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
