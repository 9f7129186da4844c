use thiserror::Error;

/// Problems with input data: shapes, ranges, parsing, schema mismatches.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("column `{0}` is constant; min-max scaling needs min < max")]
    ConstantColumn(String),
    #[error("non-finite value in column `{column}` at row {row}")]
    NonFinite { column: String, row: usize },
    #[error("could not parse `{value}` in column `{column}` at row {row}")]
    Parse {
        column: String,
        row: usize,
        value: String,
    },
    #[error("column `{0}` not found")]
    MissingColumn(String),
    #[error("categorical column `{column}` has unseen level `{level}`")]
    UnknownLevel { column: String, level: String },
    #[error("categorical column `{column}` needs at least 2 levels, found {levels}")]
    TooFewLevels { column: String, levels: usize },
    #[error("categorical column `{column}` has {levels} levels; at most 64 are supported")]
    TooManyLevels { column: String, levels: usize },
    #[error("binary outcome must be 0 or 1, found {value} at row {row}")]
    NotBinary { row: usize, value: f64 },
    #[error("value {value} at ({row}, {col}) of the {matrix} matrix is outside [0, 1]")]
    OutOfRange {
        matrix: &'static str,
        row: usize,
        col: usize,
        value: f64,
    },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("empty dataset")]
    Empty,
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("outcome range is degenerate (min {min} >= max {max})")]
    DegenerateRange { min: f64, max: f64 },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TreeError {
    #[error("node {0} does not exist")]
    MissingNode(u64),
    #[error("node {0} is not a leaf")]
    NotALeaf(u64),
    #[error("node {0} is not an internal node with two leaf children")]
    NotPrunable(u64),
    #[error("no splittable variable remains at node {0}")]
    NoSplittableVariable(u64),
    #[error("malformed tree: {0}")]
    Malformed(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericalError {
    #[error("leaf precision matrix is not positive definite (dimension {0})")]
    NotPositiveDefinite(usize),
    #[error("non-finite value encountered: {0}")]
    NonFinite(&'static str),
}

/// Model-file decoding failures. Each failure mode has its own variant.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("model file version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u64, expected: u64 },
    #[error("model stream is truncated")]
    Truncated,
    #[error("model stream is malformed: {0}")]
    Malformed(String),
    #[error("model violates an invariant: {0}")]
    InvariantViolation(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Numerical(#[from] NumericalError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
