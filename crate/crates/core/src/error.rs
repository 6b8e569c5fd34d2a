use thiserror::Error;

/// Errors raised by the numerical pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate lattice: {0}")]
    DegenerateLattice(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("zero wave vector is not allowed here")]
    ZeroWaveVector,

    #[error("empty sample grid")]
    EmptyGrid,

    #[error("matrix is not Hermitian (defect {0:.3e})")]
    NotHermitian(f64),

    #[error("resonant entry leaked into nr at k={k:?}, 2*eta={eta_doubled:?}")]
    ResonantLeak { k: Vec<i64>, eta_doubled: Vec<i64> },

    #[error("hermiticity lost (defect {0:.3e})")]
    HermiticityLost(f64),

    #[error("operator layouts are incompatible: {0}")]
    LayoutMismatch(String),

    #[error("invalid parameters: {}", .0.join("; "))]
    InvalidParams(Vec<String>),

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("block invariance violated: {0}")]
    InvarianceViolation(String),

    #[error("degenerate fit window: {0}")]
    DegenerateWindow(String),

    #[error("time {0} is not a sample of the normal-form grid")]
    OffGrid(f64),

    #[error("cache: {0}")]
    Cache(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable name of the variant, for machine-readable diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DegenerateLattice(_) => "degenerate_lattice",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::ZeroWaveVector => "zero_wave_vector",
            Error::EmptyGrid => "empty_grid",
            Error::NotHermitian(_) => "not_hermitian",
            Error::ResonantLeak { .. } => "resonant_leak",
            Error::HermiticityLost(_) => "hermiticity_lost",
            Error::LayoutMismatch(_) => "layout_mismatch",
            Error::InvalidParams(_) => "invalid_params",
            Error::InvalidGrid(_) => "invalid_grid",
            Error::InvarianceViolation(_) => "invariance_violation",
            Error::DegenerateWindow(_) => "degenerate_window",
            Error::OffGrid(_) => "off_grid",
            Error::Cache(_) => "cache",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
