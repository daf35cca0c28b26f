use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, found {found:?}")]
    Shape { context: &'static str, expected: Vec<usize>, found: Vec<usize> },

    #[error("arity mismatch in {context}: expected {expected}, found {found}")]
    Arity { context: &'static str, expected: usize, found: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown stage `{0}`")]
    UnknownStage(String),

    #[error("network `{0}` is frozen and has no trainable gradient")]
    NotDifferentiable(String),

    #[error("{0} is empty")]
    Empty(&'static str),

    #[error("at least two identity classes are required, found {0}")]
    TooFewClasses(usize),

    #[error("non-finite {quantity} at optimizer step {step}")]
    Diverged { step: usize, quantity: &'static str },

    #[error("parameter set mismatch: {0}")]
    Params(String),
}
