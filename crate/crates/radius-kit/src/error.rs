//! Error type shared across the crate.

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("information matrix must have full column rank (rank {rank} < {n})")]
    RankDeficientInfo { rank: usize, n: usize },

    #[error("solution matrix must have full row rank (rank {rank} < {s})")]
    RankDeficient { rank: usize, s: usize },

    #[error("invalid problem instance: {0}")]
    InvalidInstance(String),

    #[error("operation not defined for this norm: {0}")]
    UnsupportedNorm(String),

    #[error("l1 consistency set needs 2^m facets; m = {m} exceeds the cap of {cap}")]
    TooManyFacets { m: usize, cap: usize },

    #[error("normal equations are numerically singular")]
    SingularNormalEquations,

    #[error("linear program is infeasible")]
    Infeasible,

    #[error("linear program is unbounded in the objective direction")]
    Unbounded,

    #[error("bounding programs for the free coordinates are infeasible")]
    EmptyCylinder,

    #[error("no cylinder center is feasible at radius {r}")]
    EmptyH { r: f64 },

    #[error("exact volume oracle supports dimensions 2 and 3 only (got {0})")]
    DimensionTooLarge(usize),

    #[error("epsilon must lie in (0, 1), got {0}")]
    InvalidEpsilon(f64),

    #[error("no strictly feasible ellipsoid exists at radius {r}")]
    InfeasibleIntersection { r: f64 },

    #[error("interior-point solve failed: {0}")]
    NumericalFailure(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}
