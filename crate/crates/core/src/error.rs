use thiserror::Error;

/// Errors raised anywhere in the assessment pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error{}: {message}", location_suffix(*line, field.as_deref()))]
    Syntax {
        line: Option<usize>,
        field: Option<String>,
        message: String,
    },
    #[error("{element} references missing bus {bus}")]
    Ref { element: String, bus: u32 },
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("unknown branch {0}")]
    UnknownBranch(String),

    #[error("power flow did not converge after {iterations} iterations (mismatch {mismatch:e})")]
    Diverged { iterations: usize, mismatch: f64 },
    #[error("singular Jacobian at iteration {0}")]
    SingularJacobian(usize),
    #[error("power flow inside dispatch diverged")]
    PfDiverged,
    #[error("operating point not converged")]
    NotConverged,
    #[error("singular block during network reduction: {0}")]
    SingularBlock(String),
    #[error("non-finite machine state at t = {t} s")]
    Step { t: f64 },
    #[error("singular network: {0}")]
    SingularNetwork(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("configuration error: {0}")]
    Config(String),
    #[error("tau_response is not set")]
    MissingTau,
    #[error("k = {k} folds exceeds {rows} rows")]
    KTooLarge { k: usize, rows: usize },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("need at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("time of instability given for a stable case")]
    NotUnstable,
    #[error("line {0} not present in labels")]
    LineNotInLabels(String),
    #[error("training data has a single class")]
    SingleClass,
    #[error("unknown label {0}")]
    UnknownLabel(String),
    #[error("no feasible dispatch: {0}")]
    Infeasible(String),

    #[error("model format version {found} not supported (expected {expected})")]
    FormatVersionMismatch { found: u32, expected: u32 },
    #[error("corrupt file: {0}")]
    CorruptFile(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(String),
}

fn location_suffix(line: Option<usize>, field: Option<&str>) -> String {
    match (line, field) {
        (Some(l), Some(f)) => format!(" at line {l}, field `{f}`"),
        (Some(l), None) => format!(" at line {l}"),
        (None, Some(f)) => format!(" in field `{f}`"),
        (None, None) => String::new(),
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    ///
    /// 2 config/usage, 3 input schema, 4 numerical failure, 5 infeasible stage.
    pub fn exit_code(&self) -> i32 {
        use Error::*;
        match self {
            Config(_) | MissingTau | KTooLarge { .. } => 2,
            Syntax { .. }
            | Ref { .. }
            | Invariant(_)
            | UnknownBranch(_)
            | LengthMismatch { .. }
            | DimensionMismatch { .. }
            | LineNotInLabels(_)
            | UnknownLabel(_)
            | NotUnstable
            | FormatVersionMismatch { .. }
            | CorruptFile(_)
            | Io { .. }
            | Csv(_) => 3,
            Diverged { .. }
            | SingularJacobian(_)
            | PfDiverged
            | NotConverged
            | SingularBlock(_)
            | Step { .. }
            | SingularNetwork(_)
            | NonFinite(_) => 4,
            Infeasible(_) | EmptyInput(_) | TooFewRows(_) | SingleClass => 5,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}
