//! Corpus-level BLEU.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::TaskError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Smoothing {
    None,
    /// Adds one to numerator and denominator of zero-match precisions.
    #[default]
    AddOne,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuScore {
    /// In [0, 100].
    pub score: f64,
    /// Clipped matches and hypothesis n-gram totals, n = 1..=max_n.
    pub counts: Vec<(u64, u64)>,
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

fn ngrams<S: AsRef<str>>(toks: &[S], n: usize) -> HashMap<Vec<&str>, u64> {
    let mut m = HashMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *m.entry(w.iter().map(AsRef::as_ref).collect()).or_default() += 1;
        }
    }
    m
}

pub fn bleu<S: AsRef<str>>(
    hypotheses: &[Vec<S>],
    references: &[Vec<S>],
    max_n: usize,
    smoothing: Smoothing,
) -> Result<BleuScore, TaskError> {
    if hypotheses.len() != references.len() {
        return Err(TaskError::Mismatch(format!(
            "{} hypotheses for {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if hypotheses.is_empty() {
        return Err(TaskError::Data("BLEU of an empty corpus".into()));
    }
    if max_n == 0 {
        return Err(TaskError::Config("max_n must be positive".into()));
    }
    let mut counts = vec![(0u64, 0u64); max_n];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (h, r) in hypotheses.iter().zip(references) {
        hyp_len += h.len();
        ref_len += r.len();
        for (n, c) in counts.iter_mut().enumerate() {
            let hg = ngrams(h, n + 1);
            let rg = ngrams(r, n + 1);
            for (g, &k) in &hg {
                c.0 += k.min(rg.get(g).copied().unwrap_or(0));
                c.1 += k;
            }
        }
    }
    let precisions: Vec<f64> = counts
        .iter()
        .map(|&(m, t)| match smoothing {
            Smoothing::AddOne if m == 0 => 1.0 / (t + 1) as f64,
            _ if t == 0 => 0.0,
            _ => m as f64 / t as f64,
        })
        .collect();
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    let score = if precisions.iter().any(|&p| p == 0.0) {
        0.0
    } else {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / max_n as f64;
        (100.0 * brevity_penalty * log_mean.exp()).min(100.0)
    };
    Ok(BleuScore { score, counts, precisions, brevity_penalty, hyp_len, ref_len })
}
