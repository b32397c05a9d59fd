use thiserror::Error;

#[derive(Debug, Error)]
pub enum OedError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite model output at xi = {xi:?}, theta = {theta:?}")]
    Evaluation { xi: Vec<f64>, theta: Vec<f64> },

    #[error("Laplace fit is singular: {0}")]
    SingularFit(String),

    #[error("theta = {0:?} lies on the boundary of the uniform prior support")]
    PriorBoundary(Vec<f64>),

    #[error("non-finite gradient at iteration {iteration}")]
    NonFiniteGradient { iteration: usize },

    #[error("{0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, OedError>;
