use std::fmt;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by model construction, solvers, and trial drivers.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two distributions (or matrices) that must share a dimension do not.
    DimensionMismatch { expected: usize, got: usize },
    /// A probability vector failed validation.
    InvalidDistribution { reason: String },
    /// KL divergence is infinite: q(a) = 0 while p(a) > 0.
    InfiniteDivergence { index: usize },
    /// The graph is not connected.
    Disconnected,
    /// A graph edge references a node outside `0..sensors` or is a self-loop.
    InvalidEdge { from: usize, to: usize },
    /// Sensor cannot separate a hypothesis pair with any action.
    Indistinguishable {
        sensor: usize,
        hyp_a: usize,
        hyp_b: usize,
    },
    /// A capability value v(i, l) is zero; thresholds would degenerate.
    ZeroCapability { hypothesis: usize, sensor: usize },
    /// A consensus capability estimate is non-positive at threshold time.
    BadEstimate { sensor: usize, hypothesis: usize },
    /// A trial exceeded the step cap without reaching a decision.
    StepCapExceeded { cap: u64 },
    /// A Monte Carlo trial failed; carries the trial index so the offending
    /// stream can be replayed.
    TrialFailed { trial: u64, cause: Box<Error> },
    /// Configuration or input-file problem, with a human-readable diagnostic.
    Config(String),
    /// Filesystem problem while reading inputs or writing outputs.
    Io(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            Self::InvalidDistribution { reason } => {
                write!(f, "invalid distribution: {reason}")
            }
            Self::InfiniteDivergence { index } => {
                write!(
                    f,
                    "infinite divergence: q({index}) = 0 where p({index}) > 0"
                )
            }
            Self::Disconnected => write!(f, "graph is not connected"),
            Self::InvalidEdge { from, to } => {
                write!(f, "invalid edge ({from}, {to})")
            }
            Self::Indistinguishable {
                sensor,
                hyp_a,
                hyp_b,
            } => write!(
                f,
                "sensor {sensor} cannot distinguish hypotheses {hyp_a} and {hyp_b} with any action"
            ),
            Self::ZeroCapability { hypothesis, sensor } => write!(
                f,
                "zero capability v({hypothesis}, {sensor}); sensor contributes nothing for this hypothesis"
            ),
            Self::BadEstimate { sensor, hypothesis } => write!(
                f,
                "non-positive capability estimate at sensor {sensor} for hypothesis {hypothesis}"
            ),
            Self::StepCapExceeded { cap } => {
                write!(f, "no decision after {cap} steps; model is likely mis-specified")
            }
            Self::TrialFailed { trial, cause } => {
                write!(f, "trial {trial} failed: {cause}")
            }
            Self::Config(msg) => write!(f, "config error: {msg}"),
            Self::Io(msg) => write!(f, "io error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}
