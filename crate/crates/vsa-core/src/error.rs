//! Error types shared across the crate.

use thiserror::Error;

/// Iteration history of a failed Newton solve.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceReport {
    /// Iterations completed before the solve was abandoned.
    pub iterations: usize,
    /// Max-norm of the mismatch vector at each iteration, in order.
    pub mismatch_trace: Vec<f64>,
    /// Why the solve was abandoned.
    pub reason: DivergenceReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DivergenceReason {
    /// Iteration cap reached without meeting the tolerance.
    IterationLimit,
    /// Mismatch norm grew for three consecutive iterations.
    MismatchGrowth,
    /// PV/PQ assignments kept oscillating across outer rounds.
    BusKindOscillation,
    /// The Jacobian factorization failed mid-solve.
    SingularJacobian,
}

impl std::fmt::Display for DivergenceReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let reason = match self.reason {
            DivergenceReason::IterationLimit => "iteration limit reached",
            DivergenceReason::MismatchGrowth => "mismatch norm grew for 3 consecutive iterations",
            DivergenceReason::BusKindOscillation => "PV/PQ switching failed to settle",
            DivergenceReason::SingularJacobian => "singular Jacobian",
        };
        write!(
            f,
            "{} after {} iterations (final mismatch {:.3e})",
            reason,
            self.iterations,
            self.mismatch_trace.last().copied().unwrap_or(f64::NAN)
        )
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}, column {col}: {msg}")]
    Parse {
        line: usize,
        col: usize,
        msg: String,
    },

    #[error("missing table `{0}` in case file")]
    MissingTable(&'static str),

    #[error("{table} entry references bus {bus}, which is not defined")]
    DanglingBusRef { table: &'static str, bus: u32 },

    #[error("duplicate bus id {0}")]
    DuplicateBusId(u32),

    #[error("case has no slack bus")]
    NoSlackBus,

    #[error("case has more than one slack bus")]
    MultipleSlackBuses,

    #[error("invalid case data: {0}")]
    InvalidCase(String),

    #[error("branch index {index} out of range (case has {count} branches)")]
    BranchIndexOutOfRange { index: usize, count: usize },

    #[error("branch {0} is out of service")]
    BranchOutOfService(usize),

    #[error("load scale factor must be positive, got {0}")]
    NonPositiveFactor(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("network is split into islands: {islands:?}")]
    Islanded { islands: Vec<Vec<u32>> },

    #[error("power flow diverged: {0}")]
    Diverged(DivergenceReport),

    #[error("sensitivity system is singular (condition estimate {condition:.3e})")]
    Singular { condition: f64 },

    #[error("degenerate measurement pair: load currents are identical")]
    DegeneratePair,

    #[error("load impedance is zero")]
    ZeroLoadImpedance,

    #[error("delta-lambda must be nonzero")]
    ZeroDeltaLambda,

    #[error("K factor requires q_prev within limits: {q_prev} not in [{q_min}, {q_max}]")]
    QLimitContract { q_prev: f64, q_min: f64, q_max: f64 },

    #[error("post-contingency estimation failed at pass {pass}: {reason}")]
    EstimationFailed { pass: usize, reason: String },

    #[error("unknown branch label `{0}`")]
    UnknownBranchLabel(String),

    #[error("unknown bus {0}")]
    UnknownBus(u32),

    #[error("base case power flow failed: {0}")]
    BaseCaseDiverged(DivergenceReport),
}

pub type Result<T> = std::result::Result<T, Error>;
