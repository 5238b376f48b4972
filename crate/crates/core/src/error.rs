use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a precondition (non-finite values, wrong sizes, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A query left the calibrated domain of a predictor.
    #[error("out of domain: {0}")]
    Domain(String),

    /// A matrix sum was too ill-conditioned to invert during fusion.
    #[error("near-singular matrix sum at input index {index} (rcond {rcond:.3e})")]
    NearSingular { index: usize, rcond: f64 },

    /// No configuration satisfies the requested bound.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// A point cannot be projected through the camera model.
    #[error("projection failed: {0}")]
    Projection(String),

    /// Newton inversion of the distortion polynomial diverged.
    #[error("undistortion failed: {0}")]
    Undistort(String),

    /// Pose estimation did not converge.
    #[error("pose estimation failed: {0}")]
    Estimation(String),

    /// A marker corner fell outside the usable image region.
    #[error("marker not visible: {0}")]
    Visibility(String),

    /// Too few samples for a statistic.
    #[error("need at least {needed} samples, got {got}")]
    SampleSize { needed: usize, got: usize },

    /// The dataset does not cover the requested fit domain.
    #[error("dataset does not cover the fit domain; empty boundary cells: {0}")]
    Coverage(String),

    /// A plan action is inconsistent with the structure or replay state.
    #[error("plan validation failed: {0}")]
    Validation(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
