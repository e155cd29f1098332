//! Toy translation with an encoder-decoder stack.

use serde::{Deserialize, Serialize};

use super::bleu::{bleu, BleuScore, Smoothing};
use super::embeddings::{apply_pretrained, PretrainedEmbeddings};
use super::encode::{encoder_input, Vocabularies};
use super::train::{checkpoint_task, checkpoint_vocabs, run_training, ModelConfig, TrainConfig, TrainedModel};
use super::vocab::{Vocab, BOS, EOS};
use super::TaskError;
use crate::corpus::Utterance;
use crate::nn::{Checkpoint, ForwardCtx, Graph, Model, StackMode};

pub const MT_TASK: &str = "mt";

#[derive(Debug, Clone, PartialEq)]
pub struct TranslationPair {
    pub source: Utterance,
    pub target: Vec<String>,
}

pub fn translation_pairs(corpus: &[Utterance]) -> Result<Vec<TranslationPair>, TaskError> {
    corpus
        .iter()
        .enumerate()
        .map(|(i, u)| match &u.target {
            Some(t) if !t.is_empty() && !u.is_empty() => Ok(TranslationPair { source: u.clone(), target: t.clone() }),
            Some(_) => Err(TaskError::Data(format!("utterance {} has an empty side", i + 1))),
            None => Err(TaskError::Data(format!("utterance {} has no target", i + 1))),
        })
        .collect()
}

fn decoder_io(target: &[String], vocab: &Vocab) -> (Vec<usize>, Vec<usize>) {
    let ids = vocab.encode(target.iter().map(String::as_str));
    let input = std::iter::once(BOS).chain(ids.iter().copied()).collect();
    let output = ids.into_iter().chain(std::iter::once(EOS)).collect();
    (input, output)
}

/// Teacher-forced training.
pub fn train_mt(
    pairs: &[TranslationPair],
    model_cfg: &ModelConfig,
    train: &TrainConfig,
    seed: u64,
    pretrained: Option<&PretrainedEmbeddings>,
    on_checkpoint: &mut dyn FnMut(&Checkpoint),
) -> Result<TrainedModel, TaskError> {
    train.validate()?;
    if pairs.is_empty() {
        return Err(TaskError::Data("no translation pairs".into()));
    }
    if let Some(i) = pairs.iter().position(|p| p.target.is_empty() || p.source.is_empty()) {
        return Err(TaskError::Data(format!("pair {} has an empty side", i + 1)));
    }
    let sources: Vec<Utterance> = pairs.iter().map(|p| p.source.clone()).collect();
    let mut vocabs = Vocabularies::build(&sources, train.min_count, model_cfg.use_bigram_stream);
    vocabs.target = Some(Vocab::build(pairs.iter().flat_map(|p| p.target.iter().map(String::as_str)), train.min_count));
    let spec = model_cfg.spec(StackMode::EncoderDecoder, &vocabs, 0)?;
    let mut model = Model::new(spec, seed)?;
    if let Some(p) = pretrained {
        apply_pretrained(&mut model, &vocabs, p)?;
    }
    let tv = vocabs.target.as_ref().expect("target vocabulary");
    let data: Vec<_> = pairs.iter().map(|p| (encoder_input(&p.source, &vocabs), decoder_io(&p.target, tv))).collect();
    let run = run_training(
        &mut model,
        data.len(),
        train,
        seed,
        &mut |m: &Model, g: &mut Graph, i: usize, ctx: &mut ForwardCtx| {
            let (src, (tin, tout)) = &data[i];
            let mem = m.encode_source(g, src, ctx)?;
            let logits = m.decode_logits(g, mem, tin, ctx)?;
            Ok((g.cross_entropy(logits, tout.iter().map(|&t| Some(t)).collect(), 1.0), tout.len()))
        },
        &mut |step, m, opt| {
            on_checkpoint(&super::train::task_checkpoint(m, Some(opt), seed, step, MT_TASK, &vocabs));
        },
    )?;
    Ok(TrainedModel::finish(&model, run, seed, MT_TASK, &vocabs))
}

#[derive(Debug, Clone)]
pub struct Translator {
    pub model: Model,
    pub vocabs: Vocabularies,
}

impl Translator {
    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self, TaskError> {
        if checkpoint_task(c) != Some(MT_TASK) {
            return Err(TaskError::Mismatch(format!("checkpoint task {:?} is not {MT_TASK}", checkpoint_task(c))));
        }
        let vocabs = checkpoint_vocabs(c)?;
        if vocabs.target.is_none() {
            return Err(TaskError::Data("checkpoint has no target vocabulary".into()));
        }
        Ok(Translator { model: c.restore()?, vocabs })
    }

    fn target_vocab(&self) -> &Vocab {
        self.vocabs.target.as_ref().expect("checked on load")
    }

    /// Log-probabilities of the next target token after `prefix`.
    fn next_log_probs(&self, memory: &crate::nn::Tensor, prefix: &[usize]) -> Result<Vec<f64>, TaskError> {
        let mut g = Graph::new();
        let mem = g.constant(memory.clone());
        let logits = self.model.decode_logits(&mut g, mem, prefix, &mut ForwardCtx::eval())?;
        let p = g.softmax_rows(logits);
        Ok(g.value(p).row(prefix.len() - 1).iter().map(|x| x.max(f64::MIN_POSITIVE).ln()).collect())
    }

    fn memory(&self, source: &Utterance) -> Result<crate::nn::Tensor, TaskError> {
        let mut g = Graph::new();
        let m = self.model.encode_source(&mut g, &encoder_input(source, &self.vocabs), &mut ForwardCtx::eval())?;
        Ok(g.value(m).clone())
    }

    /// Target ids, stopping at EOS (not included) or after `max_len` tokens.
    /// `beam <= 1` is greedy.
    pub fn decode_ids(&self, source: &Utterance, max_len: usize, beam: usize) -> Result<Vec<usize>, TaskError> {
        let memory = self.memory(source)?;
        if beam <= 1 {
            let mut prefix = vec![BOS];
            while prefix.len() <= max_len {
                let lp = self.next_log_probs(&memory, &prefix)?;
                let next = argmax(&lp);
                if next == EOS {
                    break;
                }
                prefix.push(next);
            }
            return Ok(prefix[1..].to_vec());
        }
        let mut live: Vec<(Vec<usize>, f64)> = vec![(vec![BOS], 0.0)];
        let mut done: Vec<(Vec<usize>, f64)> = Vec::new();
        for _ in 0..=max_len {
            let mut cand = Vec::new();
            for (prefix, score) in &live {
                let lp = self.next_log_probs(&memory, prefix)?;
                for (t, &l) in lp.iter().enumerate() {
                    cand.push((prefix.clone(), t, score + l));
                }
            }
            cand.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.1.cmp(&b.1)));
            live.clear();
            for (mut prefix, t, s) in cand.into_iter().take(beam) {
                if t == EOS || prefix.len() > max_len {
                    if t != EOS {
                        prefix.push(t);
                    }
                    done.push((prefix, s));
                } else {
                    prefix.push(t);
                    live.push((prefix, s));
                }
            }
            if live.is_empty() {
                break;
            }
        }
        done.extend(live);
        let best = done
            .into_iter()
            .max_by(|a, b| (a.1 / a.0.len() as f64).total_cmp(&(b.1 / b.0.len() as f64)))
            .expect("at least one hypothesis");
        let mut ids = best.0[1..].to_vec();
        ids.truncate(max_len);
        Ok(ids)
    }

    pub fn translate(&self, source: &Utterance, max_len: usize, beam: usize) -> Result<Vec<String>, TaskError> {
        let v = self.target_vocab();
        Ok(self.decode_ids(source, max_len, beam)?.into_iter().map(|i| v.token(i).to_string()).collect())
    }

    /// Fraction of target tokens (EOS included) predicted correctly under
    /// teacher forcing.
    pub fn teacher_forced_accuracy(&self, pairs: &[TranslationPair]) -> Result<f64, TaskError> {
        let (mut hit, mut total) = (0, 0);
        for p in pairs {
            let (tin, tout) = decoder_io(&p.target, self.target_vocab());
            let mut g = Graph::new();
            let mem = self.model.encode_source(&mut g, &encoder_input(&p.source, &self.vocabs), &mut ForwardCtx::eval())?;
            let z = self.model.decode_logits(&mut g, mem, &tin, &mut ForwardCtx::eval())?;
            let z = g.value(z);
            for (r, &t) in tout.iter().enumerate() {
                hit += usize::from(argmax(z.row(r)) == t);
                total += 1;
            }
        }
        Ok(if total == 0 { 0.0 } else { hit as f64 / total as f64 })
    }
}

fn argmax(xs: &[f64]) -> usize {
    xs.iter().enumerate().fold(0, |b, (i, &v)| if v > xs[b] { i } else { b })
}

fn default_max_len() -> usize {
    32
}

fn default_beam() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeConfig {
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    #[serde(default = "default_beam")]
    pub beam: usize,
    #[serde(default)]
    pub smoothing: Smoothing,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig { max_len: default_max_len(), beam: default_beam(), smoothing: Smoothing::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationScore {
    pub bleu: BleuScore,
    pub token_accuracy: f64,
    pub hypotheses: Vec<Vec<String>>,
}

pub fn evaluate_mt(t: &Translator, pairs: &[TranslationPair], cfg: &DecodeConfig) -> Result<TranslationScore, TaskError> {
    let hypotheses = pairs.iter().map(|p| t.translate(&p.source, cfg.max_len, cfg.beam)).collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<Vec<String>> = pairs.iter().map(|p| p.target.clone()).collect();
    Ok(TranslationScore {
        bleu: bleu(&hypotheses, &refs, 4, cfg.smoothing)?,
        token_accuracy: t.teacher_forced_accuracy(pairs)?,
        hypotheses,
    })
}
