//! Train/test split, stratified by CMI bucket.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::cmi::CmiBucket;
use super::switching::Utterance;
use super::CorpusError;
use crate::rng::rng_for;

/// `train : test` proportion, 4:1 by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRatio {
    pub train: u32,
    pub test: u32,
}

impl Default for SplitRatio {
    fn default() -> Self {
        SplitRatio { train: 4, test: 1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSplit {
    pub train: Vec<Utterance>,
    pub test: Vec<Utterance>,
    /// Buckets too small to split (sent wholesale to train).
    pub warnings: Vec<String>,
    /// Zero-CMI utterances that were dropped.
    pub discarded: usize,
}

/// Splits each CMI bucket independently at `ratio`.
///
/// Zero-CMI utterances are dropped. Within each side the original corpus
/// order is kept.
pub fn split_corpus(corpus: &[Utterance], ratio: SplitRatio, seed: u64) -> Result<CorpusSplit, CorpusError> {
    if ratio.train == 0 || ratio.test == 0 {
        return Err(CorpusError::InvalidSplit(ratio.train, ratio.test));
    }
    let mut by_bucket: [Vec<usize>; 6] = Default::default();
    let mut discarded = 0;
    for (i, u) in corpus.iter().enumerate() {
        if u.cmi == 0.0 {
            discarded += 1;
        } else {
            by_bucket[CmiBucket::of(u.cmi).index()].push(i);
        }
    }
    let mut is_test = vec![false; corpus.len()];
    let mut warnings = Vec::new();
    for (b, members) in CmiBucket::ALL.iter().zip(by_bucket.iter_mut()) {
        if members.is_empty() {
            continue;
        }
        if members.len() < 2 {
            warnings.push(format!("bucket {} has {} member(s); kept entirely in train", b, members.len()));
            continue;
        }
        let mut rng = rng_for(seed, "split", b.index() as u64);
        members.shuffle(&mut rng);
        let n_test = (members.len() as f64 * ratio.test as f64 / (ratio.train + ratio.test) as f64).round() as usize;
        for &i in members.iter().take(n_test.min(members.len() - 1)) {
            is_test[i] = true;
        }
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, u) in corpus.iter().enumerate() {
        if u.cmi == 0.0 {
            continue;
        }
        if is_test[i] {
            test.push(u.clone());
        } else {
            train.push(u.clone());
        }
    }
    Ok(CorpusSplit { train, test, warnings, discarded })
}
