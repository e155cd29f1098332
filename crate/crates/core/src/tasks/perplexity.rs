//! Perplexity overall and per CMI bucket.

use serde::{Deserialize, Serialize};

use super::TaskError;
use crate::corpus::{CmiBucket, Utterance};

/// Anything that assigns a negative log-likelihood to each predicted
/// token of an utterance (its words plus the end marker).
pub trait TokenScorer {
    fn token_nll(&self, u: &Utterance) -> Result<Vec<f64>, TaskError>;
}

/// Uniform distribution over `vocab_size` outcomes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformScorer {
    pub vocab_size: usize,
}

impl TokenScorer for UniformScorer {
    fn token_nll(&self, u: &Utterance) -> Result<Vec<f64>, TaskError> {
        Ok(vec![(self.vocab_size as f64).ln(); u.len() + 1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerplexityRow {
    pub bucket: CmiBucket,
    pub utterances: usize,
    pub tokens: usize,
    pub perplexity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerplexityReport {
    /// Non-empty buckets in range order.
    pub rows: Vec<PerplexityRow>,
    /// Token-weighted mean of the row perplexities.
    pub average: f64,
    /// `exp` of the mean NLL over all tokens.
    pub overall: f64,
    pub tokens: usize,
    pub notes: Vec<String>,
}

/// Sum in a fixed order so the result does not depend on input order.
fn stable_sum(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs.iter().sum()
}

/// Zero-CMI utterances fall in the "0-10" row.
pub fn perplexity(scorer: &dyn TokenScorer, corpus: &[Utterance]) -> Result<PerplexityReport, TaskError> {
    if corpus.is_empty() {
        return Err(TaskError::Data("empty evaluation corpus".into()));
    }
    let mut per_bucket: Vec<(Vec<f64>, usize, usize)> = vec![(Vec::new(), 0, 0); CmiBucket::ALL.len()];
    for u in corpus {
        let nll = scorer.token_nll(u)?;
        if let Some(x) = nll.iter().find(|x| !x.is_finite()) {
            return Err(TaskError::Data(format!("non-finite token NLL {x}")));
        }
        let b = &mut per_bucket[CmiBucket::of(u.cmi).index()];
        b.1 += 1;
        b.2 += nll.len();
        b.0.extend(nll);
    }
    let mut rows = Vec::new();
    let mut notes = Vec::new();
    let mut all = Vec::new();
    for (bucket, (nll, utterances, tokens)) in CmiBucket::ALL.into_iter().zip(per_bucket) {
        if tokens == 0 {
            notes.push(format!("bucket {bucket} is empty and omitted"));
            continue;
        }
        all.extend_from_slice(&nll);
        let perplexity = (stable_sum(nll) / tokens as f64).exp();
        rows.push(PerplexityRow { bucket, utterances, tokens, perplexity });
    }
    let tokens: usize = rows.iter().map(|r| r.tokens).sum();
    let average = rows.iter().map(|r| r.perplexity * r.tokens as f64).sum::<f64>() / tokens as f64;
    let overall = (stable_sum(all) / tokens as f64).exp();
    Ok(PerplexityReport { rows, average, overall, tokens, notes })
}

impl PerplexityReport {
    /// `bucket,utterances,tokens,perplexity` rows followed by `Average`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bucket,utterances,tokens,perplexity\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{:.6}\n", r.bucket, r.utterances, r.tokens, r.perplexity));
        }
        let n: usize = self.rows.iter().map(|r| r.utterances).sum();
        s.push_str(&format!("Average,{},{},{:.6}\n", n, self.tokens, self.average));
        s
    }
}
