use alloc::string::String;
use alloc::vec::Vec;

use crate::engine::Violation;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("input out of domain: {0}")]
    Domain(String),

    /// A caller-side contract was broken (e.g. a non-unitary matrix where a unitary is required).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Both extrema are zero, so (max - min) / (max + min) has no value.
    #[error("visibility undefined: maximum and minimum counts are both zero")]
    UndefinedVisibility,

    #[error("calibration failed: {0}")]
    Calibration(String),

    /// The drive schedule was rejected by the timing validator.
    #[error("drive schedule rejected with {} violation(s)", .0.len())]
    Schedule(Vec<Violation>),
}

macro_rules! domain {
    ($($arg:tt)*) => {
        $crate::Error::Domain(alloc::format!($($arg)*))
    };
}
pub(crate) use domain;
