use thiserror::Error;

pub type Result<T> = std::result::Result<T, ScateError>;

#[derive(Debug, Error)]
pub enum ScateError {
    // data
    #[error("target column `{0}` not found in header")]
    MissingColumn(String),
    #[error("no complete rows left after dropping missing values")]
    EmptyAfterCleaning,
    #[error("binary classification needs exactly 2 distinct labels, found {0}")]
    NonBinaryLabels(usize),
    #[error("cannot parse value at row {row}, column {col}: {msg}")]
    ParseError { row: usize, col: usize, msg: String },
    #[error("split ratios must be positive and sum to 1, got {0:?}")]
    InvalidRatios([f64; 3]),
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("Friedman #1 needs at least 5 features, got {0}")]
    DimensionTooSmall(usize),
    #[error("column count mismatch: expected {expected}, got {got}")]
    ColumnMismatch { expected: usize, got: usize },

    // trees and ensembles
    #[error("need at least {needed} samples to fit, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("label fold is empty")]
    EmptyLabelFold,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("training set is empty")]
    EmptyTraining,
    #[error("learning rate must lie in (0, 1], got {0}")]
    BadLearningRate(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    // operators and spectra
    #[error("model and data disagree: {0}")]
    ModelDataMismatch(String),
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("eigensolver did not converge within {0} iterations")]
    ConvergenceFailure(usize),
    #[error("requested rank {requested} exceeds available rank {available}")]
    RankTooLarge { requested: usize, available: usize },
    #[error("decay fit needs at least 3 positive eigenvalues, found {0}")]
    TooFewPositive(usize),
    #[error("operation requires the full spectrum, decomposition holds {held} of {full}")]
    RequiresFullSpectrum { held: usize, full: usize },

    // networks
    #[error("invalid layer dimensions {0:?}")]
    BadDims(Vec<usize>),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    // serialization
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("CRC mismatch: stored {stored:08x}, computed {computed:08x}")]
    CrcMismatch { stored: u32, computed: u32 },
    #[error("buffer truncated")]
    Truncated,

    // pipelines
    #[error("config error: {0}")]
    Config(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<ScateError>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl ScateError {
    /// Wraps an error with the pipeline stage it came from.
    pub fn at(self, stage: &'static str) -> Self {
        ScateError::Stage { stage, source: Box::new(self) }
    }

    /// True for errors raised by configuration validation.
    pub fn is_config(&self) -> bool {
        match self {
            ScateError::Config(_) => true,
            ScateError::Stage { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

/// Attaches a stage tag to the error side of a result.
pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.at(stage))
    }
}
