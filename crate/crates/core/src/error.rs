use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not Hermitian: max|M - M†| = {defect:e} at scale {scale:e}")]
    NonHermitianInput { defect: f64, scale: f64 },

    #[error("non-finite values in {0}")]
    NonFinite(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("grid too narrow: edge magnitude {edge:e} exceeds 1e-6 of peak {peak:e}")]
    GridTooNarrow { edge: f64, peak: f64 },

    #[error("negative eigenvalue {value:e} (scale {scale:e}) in {context}")]
    NegativeEigenvalue { value: f64, scale: f64, context: String },

    #[error("detector noise matrix is singular")]
    SingularDetectorNoise,

    #[error("noise matrix is singular or not positive definite")]
    SingularNoise,

    #[error("step too large: relative change {ratio:.3e} per step exceeds 0.1 (dt = {dt:e})")]
    StepTooLarge { ratio: f64, dt: f64 },

    #[error("CFL bound violated: S_max·dt/h² = {value:.4} > 0.25")]
    CflViolation { value: f64 },

    #[error("drift resolution violated: max|v|·dt = {value:e} > h/2 = {limit:e}")]
    DriftResolution { value: f64, limit: f64 },

    #[error("measured operators do not commute: max|[O_a, O_b]| = {0:e}")]
    NonCommutingOperators(f64),

    #[error("Hamiltonian mixes the joint eigenbasis of the measured operators (defect {0:e})")]
    HamiltonianMixesEigenbasis(f64),

    #[error("auxiliary relations fail beyond 1e-12: {0}")]
    TruncationTooSmall(String),

    #[error("weak-update guard violated: sqrt(S dt)·‖B‖ = {0:.4} > 0.1")]
    GuardViolation(f64),

    #[error("outcome distribution normalization lost: total {0:.10}")]
    NormalizationLoss(f64),

    #[error("positivity lost: min eigenvalue {0:e} < -1e-6")]
    PositivityLoss(f64),

    #[error("{failed} of {total} trajectories aborted (first failure: {first})")]
    TrajectoryFailures { failed: usize, total: usize, first: String },

    #[error("closed-form update not applicable: {0}")]
    LimitNotApplicable(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("validation failed: {}", .0.join("; "))]
    ValidationFailed(Vec<String>),

    #[error("incompatible grids: {0}")]
    IncompatibleGrids(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Numerical guard trips as opposed to bad input.
    pub fn is_numerical_guard(&self) -> bool {
        matches!(
            self,
            Error::GridTooNarrow { .. }
                | Error::StepTooLarge { .. }
                | Error::CflViolation { .. }
                | Error::DriftResolution { .. }
                | Error::GuardViolation(_)
                | Error::NormalizationLoss(_)
                | Error::PositivityLoss(_)
                | Error::TrajectoryFailures { .. }
                | Error::NonFinite(_)
        )
    }
}
