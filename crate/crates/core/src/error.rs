use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParam { field: &'static str, reason: String },

    #[error("negative bid: client {client}, server {server}")]
    NegativeBid { client: f64, server: f64 },

    #[error("bid cap violated: price {price} exceeds max client bid {cap} at budget {budget}")]
    BidCap { budget: f64, price: f64, cap: f64 },

    #[error("outcome is not a completed trade")]
    Untraded,

    #[error("non-finite value at grid index {index}")]
    NonFinite { index: usize },

    #[error("{what} did not converge after {iters} iterations (residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iters: usize,
        residual: f64,
    },

    #[error("regeneration support [{lo}, {hi}] exceeds grid maximum {b_max}")]
    SupportExceedsGrid { lo: f64, hi: f64, b_max: f64 },

    #[error("no effective server bid bound: peak {peak} below serving cost {c_serve}")]
    NoBidBound { peak: f64, c_serve: f64 },

    #[error("transition to negative budget {dest} from grid index {index}")]
    NegativeDestination { index: usize, dest: f64 },

    #[error("no mixed weather states: the two regions never trade")]
    NoMarket,

    #[error("weather trace: {0}")]
    Trace(String),

    #[error("no fixed point found; visited (z, gamma(z)): {trace:?}")]
    NoFixedPoint { trace: Vec<(f64, f64)> },

    #[error("i/o: {0}")]
    Io(String),

    #[error("{0}")]
    Invalid(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParam {
        field,
        reason: reason.into(),
    }
}
