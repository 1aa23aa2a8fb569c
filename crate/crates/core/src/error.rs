use thiserror::Error;

/// Errors raised by the model and the algorithms built on it.
///
/// Randomized algorithm misses (decode failures, overflowing regions and so
/// on) are not errors: they are reported in the result records so that a
/// failing run still produces its full, fixed access sequence.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("block address {addr} out of range (store holds {len} blocks)")]
    AddressOutOfRange { addr: usize, len: usize },

    #[error("private cache overflow: {needed} cells requested with {used}/{capacity} in use")]
    CacheOverflow {
        needed: usize,
        used: usize,
        capacity: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("precondition violated: {0}")]
    PreconditionViolation(String),

    #[error("cell is empty")]
    EmptyCell,

    #[error("slot {addr} does not hold a {expected}")]
    SlotKind { addr: usize, expected: &'static str },

    #[error("invalid routing labels: {0}")]
    InvalidLabels(String),

    #[error("failure sweep over budget: {failed} failed subarrays, budget {budget}")]
    SortFailure { failed: usize, budget: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

/// Checks a precondition, returning `PreconditionViolation` with `msg` otherwise.
pub(crate) fn require(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::PreconditionViolation(msg()))
    }
}
