use thiserror::Error;

use crate::model::ValidationReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    /// The age window is too short for the declared tail tolerance.
    #[error(
        "age window too short: tail bound {bound:.3e} exceeds tolerance {tol:.3e} \
         (a_max = {a_max}, need a_max >= {required_a_max:.6})"
    )]
    Grid {
        a_max: f64,
        bound: f64,
        tol: f64,
        required_a_max: f64,
    },

    #[error("model parameters violate the standing assumptions:\n{0}")]
    Invalid(ValidationReport),

    /// A functional or rate was evaluated outside its domain.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical failure at t = {t}: {detail}\n{dump}")]
    Numerical { t: f64, detail: String, dump: String },

    #[error("model is not reducible to an ODE: {0}")]
    NotReducible(String),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
