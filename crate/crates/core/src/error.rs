use alloc::string::String;

use crate::dataset::Domain;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("embedding dimension mismatch: expected 2, got {0}")]
    EmbeddingDim(usize),
    #[error("batch of {0} samples is too small for batch statistics (need at least 2)")]
    BatchTooSmall(usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("backward called without a retained forward context")]
    MissingContext,
    #[error("domain {domain} has {count} samples with label {label}, need at least {needed}")]
    StratumTooSmall {
        domain: Domain,
        label: u8,
        count: usize,
        needed: usize,
    },
    #[error("domain {0} has no samples")]
    EmptyDomain(Domain),
    #[error("domain {0} is degenerate (all samples share one label)")]
    DegenerateDomain(Domain),
    #[error("scores need at least one positive and one negative label")]
    SingleClass,
    #[error("cannot aggregate an empty list")]
    Empty,
    #[error("mass pool has no samples with label {0}")]
    EmptyLabelGroup(u8),
    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Diverged { epoch: usize },
    #[error("invalid config: {0}")]
    Config(String),
}
