use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("syntax error at line {line}, column {col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },

    #[error("line {line}, column {col}: unknown variable `{name}`")]
    UnknownVariable { line: usize, col: usize, name: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid structure: {0}")]
    InvalidStructure(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("cannot read {path}: {msg}")]
    Io { path: String, msg: String },

    #[error("family is not bracket-generating at {point:?}: rank {rank} < {dim} after depth {depth}")]
    NotBracketGenerating { point: Vec<f64>, rank: usize, dim: usize, depth: usize },

    #[error("privileged chart degenerate: {0}")]
    ChartDegenerate(String),

    #[error("weighted truncation is not bracket-generating: {0}")]
    TruncationNotGenerating(String),

    #[error("bracket map not surjective onto level {level} quotient")]
    SingularQuotient { level: usize },

    #[error("stratum `{stratum}` is not equisingular: {detail} (witnesses {a:?} vs {b:?})")]
    NotEquisingular { stratum: String, detail: String, a: Vec<f64>, b: Vec<f64> },

    #[error("strata do not partition the region: coverage ratio {coverage:.4}")]
    StrataNotPartition { coverage: f64 },

    #[error("integration step failure: {0}")]
    StepFailure(String),

    #[error("no horizontal connection found within budget")]
    Unreachable,
}

impl Error {
    /// Module-qualified code used by the command-line front end.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Syntax { .. } => "vf-dsl/syntax",
            Error::UnknownVariable { .. } => "vf-dsl/unknown-variable",
            Error::DimensionMismatch(_) => "vf-dsl/dimension-mismatch",
            Error::InvalidStructure(_) => "vf-dsl/invalid-structure",
            Error::InvalidArgument(_) => "cli/invalid-argument",
            Error::Io { .. } => "cli/io",
            Error::NotBracketGenerating { .. } => "flag-analysis/not-bracket-generating",
            Error::ChartDegenerate(_) => "frames-nilpotent/chart-degenerate",
            Error::TruncationNotGenerating(_) => "frames-nilpotent/truncation-not-generating",
            Error::SingularQuotient { .. } => "popp/singular-quotient",
            Error::NotEquisingular { .. } => "popp/not-equisingular",
            Error::StrataNotPartition { .. } => "popp/strata-not-partition",
            Error::StepFailure(_) => "sr-distance/step-failure",
            Error::Unreachable => "sr-distance/unreachable",
        }
    }

    /// Input problems map to exit code 2, numerical failures to 3.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Syntax { .. }
            | Error::UnknownVariable { .. }
            | Error::DimensionMismatch(_)
            | Error::InvalidStructure(_)
            | Error::InvalidArgument(_)
            | Error::Io { .. } => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
