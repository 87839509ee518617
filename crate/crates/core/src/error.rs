use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke a documented precondition (shapes, ranges, empty inputs).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A NaN or infinity showed up in a value or gradient.
    #[error("non-finite {what} at node {node} ({op})")]
    NonFinite {
        what: &'static str,
        node: usize,
        op: &'static str,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::Contract(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;
