use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("unknown attachment `{0}`")]
    UnknownAttachment(String),

    #[error("point lies on the line (distance {0:e}); distance Jacobian undefined")]
    SingularDistance(f64),

    #[error("probability {0} outside the open interval (0, 1)")]
    Probability(f64),

    #[error("covariance is not positive semidefinite (quadratic form {0:e})")]
    InvalidCovariance(f64),

    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("point set is degenerate (rank-deficient scatter)")]
    RankDeficient,

    #[error("no consensus set with at least {0} inliers")]
    NoConsensus(usize),

    #[error("point ({0:.3}, {1:.3}, {2:.3}) lies outside the voxel grid")]
    OutsideGrid(f64, f64, f64),

    #[error("no free voxels to sample candidates from")]
    NoFreeVoxels,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
