pub mod cmi;
pub mod heaps;
pub mod io;
pub mod split;
pub mod switching;
pub mod synth;
pub mod tag;
pub mod vocab;

pub use cmi::*;
pub use heaps::*;
pub use split::*;
pub use switching::*;
pub use synth::*;
pub use tag::*;
pub use vocab::*;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("malformed token {token:?} at position {position}")]
    MalformedToken { position: usize, token: String },
    #[error("unknown language tag {0:?}")]
    UnknownTag(String),
    #[error("unknown overlap policy {0:?}")]
    UnknownPolicy(String),
    #[error("lexicon is empty")]
    EmptyLexicon,
    #[error("CMI weights must be nonnegative and sum to 1 (got w_m={w_m}, w_p={w_p})")]
    InvalidWeights { w_m: f64, w_p: f64 },
    #[error("invalid Heaps samples: {0}")]
    HeapsSamples(String),
    #[error("fitted Heaps exponent {0} is outside (0, 1)")]
    HeapsExponent(f64),
    #[error("invalid split ratio {0}:{1}")]
    InvalidSplit(u32, u32),
    #[error("infeasible synthetic corpus spec: {0}")]
    InfeasibleSynth(String),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
