use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {detail}")]
    InvalidShape { op: &'static str, detail: String },

    #[error("{op}: argument outside the domain ({detail})")]
    Domain { op: &'static str, detail: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("variable is not recorded on this tape")]
    NotOnTape,

    #[error("{0} is not available in this mode")]
    Mode(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shift region at position {0} is degenerate (fitted from fewer than two instances)")]
    DegenerateRegion(usize),

    #[error("no shift region fitted for position {0}")]
    MissingRegion(usize),

    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),

    #[error("matrix is not positive semi-definite (min eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("channel {0} has zero variance")]
    ZeroVariance(usize),

    #[error("unknown domain id {0:?}")]
    UnknownDomain(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("training diverged at step {step} (loss = {loss})")]
    Diverged { step: usize, loss: f64 },

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short category name, used for CLI diagnostics.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape { .. } | Error::InvalidShape { .. } | Error::Dimension(..) => "shape",
            Error::Domain { .. } | Error::NonFinite(_) | Error::NotPsd(_) | Error::ZeroVariance(_) => {
                "numeric"
            }
            Error::NotOnTape | Error::Mode(_) => "usage",
            Error::Config(_) | Error::UnknownDomain(_) | Error::TomlDe(_) => "config",
            Error::DegenerateRegion(_) | Error::MissingRegion(_) => "adaptation",
            Error::Empty(_) => "data",
            Error::Diverged { .. } => "training",
            Error::Verification(_) => "verification",
            Error::Format(_) | Error::Io(_) | Error::TomlSer(_) | Error::Csv(_) => "io",
        }
    }

    /// Process exit code for the category.
    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "config" => 2,
            "io" => 3,
            "shape" => 4,
            "numeric" => 5,
            "training" => 6,
            "adaptation" => 7,
            "data" => 8,
            "verification" => 9,
            _ => 1,
        }
    }
}
