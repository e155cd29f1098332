//! Training and evaluation workloads: causal language modeling,
//! sentiment classification and toy translation, plus skip-gram
//! pretraining for the unigram and bigram streams.

pub mod bleu;
pub mod embeddings;
pub mod encode;
pub mod f1;
pub mod lm;
pub mod mt;
pub mod perplexity;
pub mod report;
pub mod sentiment;
pub mod train;
pub mod vocab;

pub use bleu::*;
pub use embeddings::*;
pub use encode::*;
pub use f1::*;
pub use lm::*;
pub use mt::*;
pub use perplexity::*;
pub use report::*;
pub use sentiment::*;
pub use train::*;
pub use vocab::*;

use crate::corpus::CorpusError;
use crate::nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum TaskError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Mismatch(String),
}
