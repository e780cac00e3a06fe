//! Crate-wide error type.
//!
//! Every fallible contract in the crate routes through [`Error`]; the CLI
//! maps variants onto single-line machine-parseable messages.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand dimensions are incompatible. Names the op and both shapes.
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// An index or target is out of range for the container it addresses.
    Index {
        op: &'static str,
        index: usize,
        len: usize,
    },
    /// Non-finite value where a finite one is required.
    Numeric { what: String },
    /// Caller broke an API precondition (e.g. backward from a non-scalar).
    Contract { what: String },
    /// Bad configuration value.
    Config { what: String },
    /// Bad input data (annotations, queries, tokens out of vocabulary, ...).
    Input { what: String },
    /// A serialized artifact failed to parse; names the file and field.
    Load { file: String, field: String, what: String },
    /// Training produced a non-finite loss or gradient.
    Diverged { step: u64, what: String },
}

pub type Result<T> = core::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, lhs, rhs } => {
                write!(f, "shape: {op}: {lhs:?} incompatible with {rhs:?}")
            }
            Error::Index { op, index, len } => {
                write!(f, "index: {op}: index {index} out of range for length {len}")
            }
            Error::Numeric { what } => write!(f, "numeric: {what}"),
            Error::Contract { what } => write!(f, "contract: {what}"),
            Error::Config { what } => write!(f, "config: {what}"),
            Error::Input { what } => write!(f, "input: {what}"),
            Error::Load { file, field, what } => {
                write!(f, "load: {file}: field {field}: {what}")
            }
            Error::Diverged { step, what } => {
                write!(f, "diverged: step {step}: {what}")
            }
        }
    }
}

impl Error {
    pub fn numeric(what: impl Into<String>) -> Self {
        Error::Numeric { what: what.into() }
    }
    pub fn contract(what: impl Into<String>) -> Self {
        Error::Contract { what: what.into() }
    }
    pub fn config(what: impl Into<String>) -> Self {
        Error::Config { what: what.into() }
    }
    pub fn input(what: impl Into<String>) -> Self {
        Error::Input { what: what.into() }
    }
    pub fn load(
        file: impl Into<String>,
        field: impl Into<String>,
        what: impl Into<String>,
    ) -> Self {
        Error::Load { file: file.into(), field: field.into(), what: what.into() }
    }
}
