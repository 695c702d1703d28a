use alloc::string::String;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("stage {stage} is outside the horizon {horizon}")]
    StageOutOfRange { stage: usize, horizon: usize },
    #[error("invalid trial state: {0}")]
    InvalidState(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("degenerate truncation: normalising mass {0:e} vanishes")]
    DegenerateTruncation(f64),
    #[error("linear program basis is numerically singular")]
    SingularBasis,
    #[error("linear program solution fails its residual check ({0:e})")]
    LpResidual(f64),
    #[error("linear program hit the pivot limit of {0}")]
    PivotLimit(usize),
    #[error("constrained problem is infeasible")]
    Infeasible,
    #[error("feasibility repair did not converge after {0} iterations")]
    RepairFailed(usize),
    #[error("cutting plane did not converge after {0} iterations")]
    IterationCap(usize),
    #[error("horizon mismatch: expected {expected}, found {found}")]
    HorizonMismatch { expected: usize, found: usize },
}

pub type Result<T> = core::result::Result<T, Error>;
