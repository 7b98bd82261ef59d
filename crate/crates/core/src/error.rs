//! Error taxonomy shared by the whole pipeline.
//!
//! Three kinds matter downstream: configuration problems (bad flags, bad
//! dimensions), data problems (malformed or inconsistent input), and numeric
//! failures (NaN loss, non-finite gradients). The CLI maps them to distinct
//! exit codes.

use alloc::string::String;
use core::fmt;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CoreError {
    Config(String),
    Data(String),
    Numeric(String),
}

impl CoreError {
    pub fn config(msg: impl Into<String>) -> Self {
        CoreError::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CoreError::Data(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        CoreError::Numeric(msg.into())
    }
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::Config(m) => write!(f, "config error: {m}"),
            CoreError::Data(m) => write!(f, "data error: {m}"),
            CoreError::Numeric(m) => write!(f, "numeric error: {m}"),
        }
    }
}

impl core::error::Error for CoreError {}

pub type Result<T> = core::result::Result<T, CoreError>;
