//! Causal language modeling.

use super::embeddings::{apply_pretrained, PretrainedEmbeddings};
use super::encode::{lm_example, LmExample, Vocabularies};
use super::perplexity::TokenScorer;
use super::train::{checkpoint_task, checkpoint_vocabs, run_training, task_checkpoint, ModelConfig, TrainConfig, TrainedModel};
use super::TaskError;
use crate::corpus::Utterance;
use crate::nn::{Checkpoint, ForwardCtx, Graph, Model, StackMode};

pub const LM_TASK: &str = "lm";

/// Trains a next-token model. `on_checkpoint` receives the intermediate
/// checkpoints requested by `train.checkpoint_every`.
pub fn train_lm(
    corpus: &[Utterance],
    model_cfg: &ModelConfig,
    train: &TrainConfig,
    seed: u64,
    pretrained: Option<&PretrainedEmbeddings>,
    on_checkpoint: &mut dyn FnMut(&Checkpoint),
) -> Result<TrainedModel, TaskError> {
    train.validate()?;
    if corpus.is_empty() {
        return Err(TaskError::Data("empty training corpus".into()));
    }
    let vocabs = Vocabularies::build(corpus, train.min_count, model_cfg.use_bigram_stream);
    let spec = model_cfg.spec(StackMode::Causal, &vocabs, 0)?;
    let mut model = Model::new(spec, seed)?;
    if let Some(p) = pretrained {
        apply_pretrained(&mut model, &vocabs, p)?;
    }
    let examples: Vec<LmExample> = corpus.iter().map(|u| lm_example(u, &vocabs)).collect();
    let run = run_training(
        &mut model,
        examples.len(),
        train,
        seed,
        &mut |m: &Model, g: &mut Graph, i: usize, ctx: &mut ForwardCtx| {
            let ex = &examples[i];
            let logits = m.lm_logits(g, &ex.input, ctx)?;
            let loss = g.cross_entropy(logits, ex.targets.iter().map(|&t| Some(t)).collect(), 1.0);
            Ok((loss, ex.targets.len()))
        },
        &mut |step, m, opt| on_checkpoint(&task_checkpoint(m, Some(opt), seed, step, LM_TASK, &vocabs)),
    )?;
    Ok(TrainedModel::finish(&model, run, seed, LM_TASK, &vocabs))
}

/// A trained causal model with its vocabularies.
#[derive(Debug, Clone)]
pub struct LmScorer {
    pub model: Model,
    pub vocabs: Vocabularies,
}

impl LmScorer {
    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self, TaskError> {
        if checkpoint_task(c).is_some_and(|t| t != LM_TASK) {
            return Err(TaskError::Mismatch(format!("checkpoint task {:?} is not {LM_TASK}", checkpoint_task(c))));
        }
        let model = c.restore()?;
        if model.spec.mode != StackMode::Causal {
            return Err(TaskError::Mismatch("checkpoint is not a causal model".into()));
        }
        Ok(LmScorer { model, vocabs: checkpoint_vocabs(c)? })
    }

    /// Next-token distributions `[n+1, vocab]` for `u`.
    pub fn probabilities(&self, u: &Utterance) -> Result<Vec<Vec<f64>>, TaskError> {
        let ex = lm_example(u, &self.vocabs);
        let mut g = Graph::new();
        let logits = self.model.lm_logits(&mut g, &ex.input, &mut ForwardCtx::eval())?;
        let p = g.softmax_rows(logits);
        Ok(g.value(p).to_rows())
    }
}

/// Post-softmax attention of one unigram-stream head.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    /// Row labels: `<bos>` followed by the utterance words.
    pub tokens: Vec<String>,
    /// Switching-point flags of the rows/columns.
    pub sp: Vec<bool>,
    pub weights: Vec<Vec<f64>>,
}

impl AttentionMap {
    /// Header cells carry a `*` suffix on switching points.
    pub fn header(&self) -> Vec<String> {
        self.tokens.iter().zip(&self.sp).map(|(t, &s)| if s { format!("{t}*") } else { t.clone() }).collect()
    }

    /// Mean column mass (averaged over rows) of SP and non-SP columns;
    /// `None` for a side without columns.
    pub fn column_mass(&self) -> (Option<f64>, Option<f64>) {
        let n = self.weights.len();
        let mass: Vec<f64> = (0..n).map(|j| self.weights.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
        let mean = |want: bool| {
            let xs: Vec<f64> = (0..n).filter(|&j| self.sp[j] == want).map(|j| mass[j]).collect();
            (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
        };
        (mean(true), mean(false))
    }
}

impl LmScorer {
    pub fn attention(&self, u: &Utterance, layer: usize, head: usize) -> Result<AttentionMap, TaskError> {
        let spec = &self.model.spec;
        if layer >= spec.n_layers || head >= spec.n_heads {
            return Err(TaskError::Config(format!(
                "layer {layer} / head {head} outside {} layers x {} heads",
                spec.n_layers, spec.n_heads
            )));
        }
        let ex = lm_example(u, &self.vocabs);
        let mut g = Graph::new();
        let mut ctx = ForwardCtx::recording();
        self.model.lm_logits(&mut g, &ex.input, &mut ctx)?;
        let weights = g.value(ctx.attention[layer][head]).to_rows();
        let tokens = std::iter::once(super::vocab::SPECIALS[super::vocab::BOS].to_string())
            .chain(u.surfaces().map(String::from))
            .collect();
        let sp = ex.input.unigram.sp_mask.clone().unwrap_or_default();
        Ok(AttentionMap { tokens, sp, weights })
    }
}

/// Mean over utterances of the SP and non-SP column masses. Utterances
/// without switching points are skipped.
pub fn sp_attention_contrast(
    scorer: &LmScorer,
    corpus: &[Utterance],
    layer: usize,
    head: usize,
) -> Result<(f64, f64, usize), TaskError> {
    let (mut sp, mut non, mut n) = (0.0, 0.0, 0);
    for u in corpus {
        if let (Some(a), Some(b)) = scorer.attention(u, layer, head)?.column_mass() {
            sp += a;
            non += b;
            n += 1;
        }
    }
    if n == 0 {
        return Err(TaskError::Data("no utterance has a switching point".into()));
    }
    Ok((sp / n as f64, non / n as f64, n))
}

impl TokenScorer for LmScorer {
    fn token_nll(&self, u: &Utterance) -> Result<Vec<f64>, TaskError> {
        let ex = lm_example(u, &self.vocabs);
        let mut g = Graph::new();
        let logits = self.model.lm_logits(&mut g, &ex.input, &mut ForwardCtx::eval())?;
        let p = g.softmax_rows(logits);
        let p = g.value(p);
        Ok(ex.targets.iter().enumerate().map(|(r, &t)| -p.get(r, t).max(f64::MIN_POSITIVE).ln()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic_corpus, SynthSpec};
    use crate::posenc::PeVariant;

    fn corpus() -> Vec<Utterance> {
        let mut s = SynthSpec::with_vocab_sizes(40, 12, 12);
        s.min_len = 10;
        s.max_len = 12;
        generate_synthetic_corpus(&s, 5).unwrap()
    }

    fn cfg() -> ModelConfig {
        let mut m = ModelConfig::new(PeVariant::SpRotary, 1, 2, 8, 16);
        m.dropout_p = 0.1;
        m
    }

    #[test]
    fn loss_falls_and_reruns_match() {
        let c = corpus();
        let mut t = TrainConfig::new(30, 4, 10);
        t.lr_scale = 2.0;
        let a = train_lm(&c, &cfg(), &t, 11, None, &mut |_| {}).unwrap();
        assert!(a.diverged_at.is_none());
        assert!(a.log.last().unwrap().loss < a.log[0].loss);
        let b = train_lm(&c, &cfg(), &t, 11, None, &mut |_| {}).unwrap();
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn intermediate_checkpoints() {
        let c = corpus();
        let mut t = TrainConfig::new(6, 2, 10);
        t.checkpoint_every = 2;
        let mut steps = Vec::new();
        let out = train_lm(&c, &cfg(), &t, 1, None, &mut |ck| steps.push(ck.rng.step)).unwrap();
        assert_eq!(steps, vec![2, 4]);
        assert_eq!(out.checkpoint.rng.step, 6);
        let s = LmScorer::from_checkpoint(&out.checkpoint).unwrap();
        let nll = s.token_nll(&c[0]).unwrap();
        assert_eq!(nll.len(), c[0].len() + 1);
        assert!(nll.iter().all(|x| x.is_finite() && *x > 0.0));
        let a = s.attention(&c[0], 0, 1).unwrap();
        assert_eq!(a.weights.len(), c[0].len() + 1);
        for row in &a.weights {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(a.header().iter().filter(|h| h.ends_with('*')).count() == c[0].sp_indices.len());
        assert!(s.attention(&c[0], 1, 0).is_err());
        assert!(s.attention(&c[0], 0, 2).is_err());
    }
}
