use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the engine can report.
///
/// Each variant maps to a stable numeric code (see [`Error::code`]) that the
/// CLI uses as its exit status and the C ABI returns as its status value.
#[derive(Debug, Error)]
pub enum Error {
    #[error("bad magic {found:?}, expected \"ATNB\"")]
    MagicMismatch { found: [u8; 4] },

    #[error("unsupported ATNB version {0}")]
    VersionUnsupported(u32),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("layer {layer} head {head} row {row} sums to {sum}, outside the 1e-3 drift budget")]
    NotRowStochastic {
        layer: usize,
        head: usize,
        row: usize,
        sum: f64,
    },

    #[error("negative attention entry {value} at layer {layer} head {head} row {row} col {col}")]
    NegativeEntry {
        layer: usize,
        head: usize,
        row: usize,
        col: usize,
        value: f64,
    },

    #[error("attention entry {value} exceeds 1 at layer {layer} head {head} row {row} col {col}")]
    EntryOutOfRange {
        layer: usize,
        head: usize,
        row: usize,
        col: usize,
        value: f64,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("stack has no CLS token at index 0 (has_cls flag unset)")]
    MissingCls,

    #[error("invalid meta blob: {0}")]
    InvalidMeta(String),

    #[error("I/O failure: {0}")]
    Io(#[from] std::io::Error),

    #[error("layer {layer} out of range for a {layers}-layer stack")]
    LayerOutOfRange { layer: usize, layers: usize },

    #[error("alpha must lie in (0, 1), got {0}")]
    AlphaOutOfRange(f64),

    #[error("tau must exceed 1, got {0}")]
    TauOutOfRange(f64),

    #[error("nothing to accumulate (zero layers)")]
    EmptyStack,

    #[error("walk did not retain per-layer history; rerun with history retention enabled")]
    HistoryNotRetained,

    #[error("the CLS token (index 0) cannot serve as the anchor")]
    SinkIsCls,

    #[error("token index {index} out of range for {n} tokens")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("stationary estimate has a non-positive entry")]
    DegeneratePhi,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("need at least 2 observations, got {0}")]
    TooShort(usize),

    #[error("need K >= 2 and 1 <= p < K, got K={k}, p={p}")]
    BadClusterCounts { k: usize, p: usize },

    #[error("background set is empty")]
    EmptyBackground,

    #[error("no features stored for layer {layer}")]
    MissingFeatures { layer: usize },

    #[error("target {target} exceeds the {available} available tokens")]
    TargetExceedsInput { target: usize, available: usize },

    #[error("margin {margin} infeasible for n={n} (needs 1/n + margin <= 1)")]
    InfeasibleMargin { n: usize, margin: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    /// Stable numeric code. `0` is reserved for success.
    pub fn code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io(_) => 3,
            Error::MagicMismatch { .. } => 10,
            Error::VersionUnsupported(_) => 11,
            Error::ShapeMismatch(_) => 12,
            Error::NotRowStochastic { .. } => 13,
            Error::NegativeEntry { .. } => 14,
            Error::EntryOutOfRange { .. } => 15,
            Error::NonFinite(_) => 16,
            Error::MissingCls => 17,
            Error::InvalidMeta(_) => 18,
            Error::LayerOutOfRange { .. } => 20,
            Error::AlphaOutOfRange(_) => 21,
            Error::TauOutOfRange(_) => 22,
            Error::EmptyStack => 23,
            Error::HistoryNotRetained => 24,
            Error::SinkIsCls => 30,
            Error::IndexOutOfRange { .. } => 31,
            Error::DegeneratePhi => 32,
            Error::LengthMismatch { .. } => 33,
            Error::TooShort(_) => 34,
            Error::BadClusterCounts { .. } => 40,
            Error::EmptyBackground => 41,
            Error::MissingFeatures { .. } => 42,
            Error::TargetExceedsInput { .. } => 43,
            Error::InfeasibleMargin { .. } => 50,
        }
    }

    /// Machine-readable name, stable across releases.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "ConfigError",
            Error::Io(_) => "IoFailure",
            Error::MagicMismatch { .. } => "MagicMismatch",
            Error::VersionUnsupported(_) => "VersionUnsupported",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::NotRowStochastic { .. } => "NotRowStochastic",
            Error::NegativeEntry { .. } => "NegativeEntry",
            Error::EntryOutOfRange { .. } => "EntryOutOfRange",
            Error::NonFinite(_) => "NonFinite",
            Error::MissingCls => "MissingCls",
            Error::InvalidMeta(_) => "InvalidMeta",
            Error::LayerOutOfRange { .. } => "LayerOutOfRange",
            Error::AlphaOutOfRange(_) => "AlphaOutOfRange",
            Error::TauOutOfRange(_) => "TauOutOfRange",
            Error::EmptyStack => "EmptyStack",
            Error::HistoryNotRetained => "HistoryNotRetained",
            Error::SinkIsCls => "SinkIsCls",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::DegeneratePhi => "DegeneratePhi",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::TooShort(_) => "TooShort",
            Error::BadClusterCounts { .. } => "BadClusterCounts",
            Error::EmptyBackground => "EmptyBackground",
            Error::MissingFeatures { .. } => "MissingFeatures",
            Error::TargetExceedsInput { .. } => "TargetExceedsInput",
            Error::InfeasibleMargin { .. } => "InfeasibleMargin",
        }
    }
}
