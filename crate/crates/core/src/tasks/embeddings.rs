//! Skip-gram with negative sampling for the unigram and bigram streams.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::encode::{bigram_keys, Vocabularies};
use super::vocab::Vocab;
use super::TaskError;
use crate::corpus::Utterance;
use crate::nn::Model;
use crate::rng::rng_for;

fn default_lr() -> f64 {
    0.025
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkipGramConfig {
    pub dims: usize,
    pub window: usize,
    pub negative_samples: usize,
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
}

impl SkipGramConfig {
    pub fn new(dims: usize, window: usize, negative_samples: usize, epochs: usize) -> Self {
        SkipGramConfig { dims, window, negative_samples, epochs, learning_rate: default_lr() }
    }
}

/// Word vectors; the last row is the shared UNK vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub words: Vec<String>,
    pub dims: usize,
    /// `(words.len() + 1) x dims`, row-major.
    pub vectors: Vec<f64>,
}

impl EmbeddingTable {
    pub fn rows(&self) -> usize {
        self.words.len() + 1
    }

    pub fn index(&self, word: &str) -> usize {
        self.words.binary_search_by(|w| w.as_str().cmp(word)).unwrap_or(self.words.len())
    }

    pub fn vector(&self, word: &str) -> &[f64] {
        let i = self.index(word);
        &self.vectors[i * self.dims..(i + 1) * self.dims]
    }

    pub fn cosine(&self, a: &str, b: &str) -> f64 {
        let (x, y) = (self.vector(a), self.vector(b));
        let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if nx == 0.0 || ny == 0.0 {
            0.0
        } else {
            dot / (nx * ny)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipGramRun {
    pub table: EmbeddingTable,
    /// Mean loss per positive pair, one entry per epoch.
    pub epoch_loss: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Trains one table on `sequences`. `label` separates the random streams of
/// different tables trained under one seed.
pub fn train_skipgram(
    sequences: &[Vec<String>],
    cfg: &SkipGramConfig,
    seed: u64,
    label: &str,
) -> Result<SkipGramRun, TaskError> {
    if cfg.dims == 0 || cfg.window == 0 || cfg.epochs == 0 {
        return Err(TaskError::Config("dims, window and epochs must be positive".into()));
    }
    let mut freq: BTreeMap<&str, u64> = BTreeMap::new();
    for w in sequences.iter().flatten() {
        *freq.entry(w).or_default() += 1;
    }
    let words: Vec<String> = freq.keys().map(|w| w.to_string()).collect();
    let v = words.len();
    if v < cfg.negative_samples || v == 0 {
        return Err(TaskError::Data(format!(
            "vocabulary of {v} words is smaller than {} negative samples",
            cfg.negative_samples
        )));
    }
    let d = cfg.dims;
    let noise = WeightedIndex::new(freq.values().map(|&c| (c as f64).powf(0.75)))
        .map_err(|e| TaskError::Data(e.to_string()))?;
    let ids: Vec<Vec<usize>> = sequences
        .iter()
        .map(|s| s.iter().map(|w| words.binary_search(w).expect("counted word")).collect())
        .collect();

    let mut init = rng_for(seed, &format!("{label}.init"), 0);
    let mut input: Vec<f64> = (0..(v + 1) * d).map(|_| (init.random::<f64>() - 0.5) / d as f64).collect();
    let mut output = vec![0.0; v * d];
    let mut grad_in = vec![0.0; d];
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..ids.len()).collect();
        order.shuffle(&mut rng_for(seed, &format!("{label}.order"), epoch as u64));
        let mut neg_rng = rng_for(seed, &format!("{label}.neg"), epoch as u64);
        let (mut total, mut pairs) = (0.0, 0usize);
        for &s in &order {
            let seq = &ids[s];
            for (i, &center) in seq.iter().enumerate() {
                let lo = i.saturating_sub(cfg.window);
                let hi = (i + cfg.window + 1).min(seq.len());
                for j in (lo..hi).filter(|&j| j != i) {
                    let ctx = seq[j];
                    grad_in.iter_mut().for_each(|g| *g = 0.0);
                    let vin = center * d..(center + 1) * d;
                    let update = |target: usize, label: f64, input: &[f64], output: &mut [f64], grad_in: &mut [f64]| {
                        let out = &mut output[target * d..(target + 1) * d];
                        let score: f64 = input.iter().zip(out.iter()).map(|(a, b)| a * b).sum();
                        let p = sigmoid(score);
                        let loss = if label > 0.5 { -p.max(1e-12).ln() } else { -(1.0 - p).max(1e-12).ln() };
                        let g = cfg.learning_rate * (label - p);
                        for k in 0..d {
                            grad_in[k] += g * out[k];
                            out[k] += g * input[k];
                        }
                        loss
                    };
                    total += update(ctx, 1.0, &input[vin.clone()], &mut output, &mut grad_in);
                    for _ in 0..cfg.negative_samples {
                        let n = noise.sample(&mut neg_rng);
                        if n != ctx {
                            total += update(n, 0.0, &input[vin.clone()], &mut output, &mut grad_in);
                        }
                    }
                    for (x, g) in input[vin].iter_mut().zip(&grad_in) {
                        *x += g;
                    }
                    pairs += 1;
                }
            }
        }
        epoch_loss.push(if pairs == 0 { 0.0 } else { total / pairs as f64 });
    }
    // UNK row: mean of the word vectors.
    for k in 0..d {
        input[v * d + k] = (0..v).map(|w| input[w * d + k]).sum::<f64>() / v as f64;
    }
    Ok(SkipGramRun { table: EmbeddingTable { words, dims: d, vectors: input }, epoch_loss })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainedEmbeddings {
    pub unigram: SkipGramRun,
    pub bigram: SkipGramRun,
}

/// Unigram and bigram tables from one corpus.
pub fn pretrain_embeddings(corpus: &[Utterance], cfg: &SkipGramConfig, seed: u64) -> Result<PretrainedEmbeddings, TaskError> {
    let uni: Vec<Vec<String>> = corpus.iter().map(|u| u.surfaces().map(String::from).collect()).collect();
    let bi: Vec<Vec<String>> = corpus.iter().map(|u| bigram_keys(&u.tokens)).collect();
    Ok(PretrainedEmbeddings {
        unigram: train_skipgram(&uni, cfg, seed, "skipgram.uni")?,
        bigram: train_skipgram(&bi, cfg, seed, "skipgram.bi")?,
    })
}

/// Copies table rows into the embedding parameter `param` for every word
/// of `vocab` the table knows. Returns the number of rows copied.
pub fn load_embeddings(model: &mut Model, param: &str, vocab: &Vocab, table: &EmbeddingTable) -> Result<usize, TaskError> {
    let id = model
        .params
        .id(param)
        .ok_or_else(|| TaskError::Config(format!("model has no parameter {param}")))?;
    let t = model.params.value_mut(id);
    if t.cols() != table.dims {
        return Err(TaskError::Mismatch(format!("embedding width {} vs model width {}", table.dims, t.cols())));
    }
    let mut copied = 0;
    for (row, word) in vocab.tokens().iter().enumerate().take(t.rows()) {
        if table.words.binary_search(word).is_ok() {
            for (c, &x) in table.vector(word).iter().enumerate() {
                t.set(row, c, x);
            }
            copied += 1;
        }
    }
    Ok(copied)
}

/// Loads pretrained unigram (and, when the model has one, bigram) vectors
/// into the embedding tables.
pub fn apply_pretrained(model: &mut Model, vocabs: &Vocabularies, emb: &PretrainedEmbeddings) -> Result<(), TaskError> {
    load_embeddings(model, "tok_emb", &vocabs.unigram, &emb.unigram.table)?;
    if let (true, Some(bv)) = (model.spec.use_bigram_stream, vocabs.bigram.as_ref()) {
        load_embeddings(model, "bi_emb", bv, &emb.bigram.table)?;
    }
    Ok(())
}
