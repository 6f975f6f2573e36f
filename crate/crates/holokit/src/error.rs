use crate::numerics::ConvergenceReport;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, HoloError>;

#[derive(Debug, Clone, Error)]
pub enum HoloError {
    #[error("not enough data: need {needed} values, got {got}")]
    NotEnoughData { needed: usize, got: usize },
    #[error("point too close to the boundary (distance {distance:e})")]
    BoundaryProximity { distance: f64 },
    #[error("point outside the domain: {0}")]
    OutOfDomain(String),
    #[error("singular input: {0}")]
    Singular(String),
    #[error("boundary center is not on the unit sphere (|zeta| = {norm})")]
    InvalidCenter { norm: f64 },
    #[error("degenerate geodesic: endpoints coincide")]
    DegenerateGeodesic,
    #[error("degenerate boundary point: gradient of the defining function vanishes")]
    DegenerateBoundary,
    #[error("monotonicity violated at index {index} (jump {jump:e})")]
    MonotonicityViolation { index: usize, jump: f64 },
    #[error("metric inconsistency: {0}")]
    MetricInconsistency(String),
    #[error("limit did not converge: {what}")]
    NonConvergent { what: String, report: Option<ConvergenceReport> },
    #[error("point is not inside the horosphere (h = {value}, radius = {radius})")]
    NotInHorosphere { value: f64, radius: f64 },
    #[error("orbit trapped: no exit from the horosphere within {max_iter} iterations")]
    TrappedOrbit { max_iter: usize },
    #[error("ambiguous dimension: candidate ranks {candidates:?}")]
    AmbiguousDimension { candidates: Vec<usize> },
    #[error("squeezing certificate {radius} below floor {floor}")]
    InsufficientSqueezing { radius: f64, floor: f64 },
    #[error("chart construction failed: {0}")]
    ChartConstruction(String),
    #[error("substitution has a non-invertible linear part")]
    NonInvertibleSubstitution,
    #[error("invalid radius {radius}: must lie in (0, {upper})")]
    InvalidRadius { radius: f64, upper: f64 },
    #[error("insufficient precision: sandwich gap {gap:e} exceeds half the tolerance {eps:e}")]
    InsufficientPrecision { gap: f64, eps: f64 },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("schema error in field `{field}`: {message}")]
    Schema { field: String, message: String },
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl HoloError {
    /// Process exit status used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            HoloError::Schema { .. } | HoloError::Io(_) => 2,
            HoloError::NonConvergent { .. }
            | HoloError::TrappedOrbit { .. }
            | HoloError::AmbiguousDimension { .. } => 3,
            HoloError::InvariantViolation(_)
            | HoloError::MonotonicityViolation { .. }
            | HoloError::MetricInconsistency(_) => 4,
            _ => 5,
        }
    }

    pub(crate) fn schema(field: &str, message: impl Into<String>) -> Self {
        HoloError::Schema { field: field.to_string(), message: message.into() }
    }
}
