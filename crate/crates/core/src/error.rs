use thiserror::Error;

/// Errors surfaced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("term budget exceeded: more than {budget} monomials required")]
    TermBudgetExceeded { budget: usize },
    #[error("enumeration budget exceeded: more than {budget} search nodes visited")]
    EnumerationBudgetExceeded { budget: u64 },
    #[error("composition needs a polynomial for variable index {index}, only {provided} given")]
    ComposeArity { index: u16, provided: usize },
    #[error("index set of size {len} exceeds the supported cap of {cap}")]
    IndexSetTooLarge { len: usize, cap: usize },
    #[error("substitution would need more than {cap} fresh variables")]
    SubstitutionCap { cap: usize },
    #[error("no substitution recorded for z{index}")]
    UnmappedZ { index: u16 },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
