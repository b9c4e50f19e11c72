use crate::lattice::Pos;

/// Errors raised by the lattice, polymer and estimator layers.
#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum Error {
    /// Dimension outside `1..=3` or two inputs disagree on it.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    /// A query touched a site outside the configured spatial window.
    #[error("site {x:?} at time {t} lies outside the spatial window |x| <= {limit}")]
    SpatialWindow { t: u64, x: Pos, limit: i64 },

    /// A query touched a time outside an [`crate::env::EnvironmentWindow`].
    #[error("time {t} outside the window [{start}, {end}]")]
    TimeWindow { t: u64, start: u64, end: u64 },

    /// A computation would exceed its configured work budget.
    #[error("resource cap exceeded: {needed} > {cap} ({what})")]
    ResourceCap { what: &'static str, needed: u128, cap: u128 },

    /// Rejection sampling accepted nothing.
    #[error("zero accepted samples out of {drawn} (conditioning event never occurred)")]
    ZeroAcceptance { drawn: usize },

    /// The start point does not reach the target slice.
    #[error("start is not connected to time {t}")]
    Disconnected { t: u64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
