use thiserror::Error;

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid domain: lo ({0}) must be strictly less than hi ({1})")]
    InvalidDomain(f64, f64),

    #[error("number of basis functions ({num_basis}) too small for degree {degree}; need at least degree + 1")]
    BasisTooSmall { num_basis: usize, degree: usize },

    #[error("evaluation point {0} outside the basis domain [{1}, {2}]")]
    PointOutsideDomain(f64, f64, f64),

    #[error("unsupported penalty order {0}; supported orders are 0, 1, 2")]
    UnsupportedPenaltyOrder(usize),

    #[error("penalty order {order} requires more than {num_basis} basis functions")]
    PenaltyOrderTooLarge { order: usize, num_basis: usize },

    #[error("numerical rank mismatch in penalty eigendecomposition: expected {expected} near-zero eigenvalues, found {found}")]
    PenaltyRankMismatch { expected: usize, found: usize },

    #[error("matrix is not symmetric within tolerance (max asymmetry {0:.3e})")]
    NotSymmetric(f64),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("dataset is invalid: {0}")]
    InvalidDataset(String),

    #[error("grid coverage gap: common grid point {0} lies outside the observed range [{1}, {2}]")]
    CoverageGap(f64, f64, f64),

    #[error("insufficient within-subject pairs to estimate the covariance ({observed} observed cells, {required} required)")]
    InsufficientPairs { observed: usize, required: usize },

    #[error("fewer than {required} positive eigenvalues available ({available}); cannot test this hypothesis")]
    TooFewComponents { required: usize, available: usize },

    #[error("K_x must be at least d+1 = {required} for this hypothesis (got {got})")]
    KxFloorViolation { required: usize, got: usize },

    #[error("singular subject system while computing scores for subject {0}")]
    SingularSubjectSystem(String),

    #[error("fixed-effect design is rank deficient")]
    RankDeficientDesign,

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("restricted-likelihood optimization failed: {0}")]
    OptimizationFailed(String),

    #[error("null-distribution simulation requires at least one positive design eigenvalue")]
    EmptyNullSpectrum,

    #[error("family/response mismatch: {0}")]
    FamilyMismatch(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("csv parse error at line {line}: {msg}")]
    CsvFormat { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
