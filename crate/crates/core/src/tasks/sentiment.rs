//! Sentiment classification with a mean-pooled encoder.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::embeddings::{apply_pretrained, PretrainedEmbeddings};
use super::encode::{encoder_input, Vocabularies};
use super::f1::{label_index, macro_f1, MacroF1};
use super::train::{checkpoint_task, checkpoint_vocabs, run_training, ModelConfig, TrainConfig, TrainedModel};
use super::TaskError;
use crate::corpus::Utterance;
use crate::nn::{Checkpoint, ForwardCtx, Graph, Model, StackMode};
use crate::rng::rng_for;

pub const SA_TASK: &str = "sentiment";

pub fn default_labels() -> Vec<String> {
    ["positive", "negative", "neutral"].iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentimentExample {
    pub utterance: Utterance,
    /// Index into the label set.
    pub label: usize,
}

pub fn sentiment_examples(corpus: &[Utterance], labels: &[String]) -> Result<Vec<SentimentExample>, TaskError> {
    corpus
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let l = u.label.as_deref().ok_or_else(|| TaskError::Data(format!("utterance {} has no label", i + 1)))?;
            Ok(SentimentExample { utterance: u.clone(), label: label_index(labels, l)? })
        })
        .collect()
}

/// Per-class shuffled split; each class contributes `round(frac * count)`
/// examples to validation, keeping at least one for training.
pub fn stratified_split(labels: &[usize], n_labels: usize, frac: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for c in 0..n_labels {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng_for(seed, "stratify", c as u64));
        let k = ((frac * idx.len() as f64).round() as usize).min(idx.len().saturating_sub(1));
        val.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

fn default_validation() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    #[serde(default = "default_labels")]
    pub labels: Vec<String>,
    #[serde(default = "default_validation")]
    pub validation_fraction: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig { labels: default_labels(), validation_fraction: default_validation() }
    }
}

#[derive(Debug, Clone)]
pub struct ClassifierRun {
    pub trained: TrainedModel,
    pub train_accuracy: f64,
    /// Macro F1 on the held-out split, when it is non-empty.
    pub validation: Option<MacroF1>,
    /// Parameters copied from the initializing checkpoint.
    pub initialized: Vec<String>,
}

/// Trains a classifier, optionally starting from the encoder of a language
/// model checkpoint (whose vocabulary is then reused).
pub fn train_classifier(
    data: &[Utterance],
    cls: &ClassifierConfig,
    model_cfg: &ModelConfig,
    train: &TrainConfig,
    init: Option<&Checkpoint>,
    pretrained: Option<&PretrainedEmbeddings>,
    seed: u64,
) -> Result<ClassifierRun, TaskError> {
    train.validate()?;
    if !(0.0..1.0).contains(&cls.validation_fraction) {
        return Err(TaskError::Config(format!("validation_fraction {} outside [0, 1)", cls.validation_fraction)));
    }
    let n_labels = cls.labels.len();
    let examples = sentiment_examples(data, &cls.labels)?;
    let gold: Vec<usize> = examples.iter().map(|e| e.label).collect();
    let mut present = gold.clone();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(TaskError::Data(format!("training data has {} distinct label(s)", present.len())));
    }
    let (train_idx, val_idx) = stratified_split(&gold, n_labels, cls.validation_fraction, seed);
    let train_set: Vec<&SentimentExample> = train_idx.iter().map(|&i| &examples[i]).collect();

    let vocabs = match init {
        Some(c) => checkpoint_vocabs(c)?,
        None => {
            let us: Vec<Utterance> = train_set.iter().map(|e| e.utterance.clone()).collect();
            Vocabularies::build(&us, train.min_count, model_cfg.use_bigram_stream)
        }
    };
    let spec = model_cfg.spec(StackMode::Encoder, &vocabs, n_labels)?;
    let mut model = Model::new(spec, seed)?;
    if let Some(p) = pretrained {
        apply_pretrained(&mut model, &vocabs, p)?;
    }
    let initialized = match init {
        Some(c) => copy_matching(&mut model, c)?,
        None => Vec::new(),
    };
    let inputs: Vec<_> = train_set.iter().map(|e| encoder_input(&e.utterance, &vocabs)).collect();
    let run = run_training(
        &mut model,
        inputs.len(),
        train,
        seed,
        &mut |m: &Model, g: &mut Graph, i: usize, ctx: &mut ForwardCtx| {
            let logits = m.class_logits(g, &inputs[i], ctx)?;
            Ok((g.cross_entropy(logits, vec![Some(train_set[i].label)], 1.0), 1))
        },
        &mut |_, _, _| {},
    )?;
    let mut trained = TrainedModel::finish(&model, run, seed, SA_TASK, &vocabs);
    trained.checkpoint.extra.insert("labels".into(), serde_json::to_value(&cls.labels).expect("labels serialize"));
    let clf = Classifier { model, vocabs, labels: cls.labels.clone() };
    let predict = |idx: &[usize]| -> Result<Vec<usize>, TaskError> {
        idx.iter().map(|&i| clf.predict(&examples[i].utterance)).collect()
    };
    let tp = predict(&train_idx)?;
    let train_accuracy = accuracy(&tp, &train_idx.iter().map(|&i| gold[i]).collect::<Vec<_>>());
    let validation = if val_idx.is_empty() {
        None
    } else {
        let vg: Vec<usize> = val_idx.iter().map(|&i| gold[i]).collect();
        Some(macro_f1(&predict(&val_idx)?, &vg, n_labels)?)
    };
    Ok(ClassifierRun { trained, train_accuracy, validation, initialized })
}

fn copy_matching(model: &mut Model, c: &Checkpoint) -> Result<Vec<String>, TaskError> {
    let mut copied = Vec::new();
    for block in &c.params {
        let Some(id) = model.params.id(&block.name) else { continue };
        let t = model.params.value_mut(id);
        if t.shape() == block.shape.as_slice() {
            t.data_mut().copy_from_slice(&block.values);
            copied.push(block.name.clone());
        }
    }
    if copied.is_empty() {
        return Err(TaskError::Mismatch("no parameter of the initializing checkpoint fits the classifier".into()));
    }
    Ok(copied)
}

pub fn accuracy(pred: &[usize], gold: &[usize]) -> f64 {
    if gold.is_empty() {
        return 0.0;
    }
    pred.iter().zip(gold).filter(|(p, g)| p == g).count() as f64 / gold.len() as f64
}

#[derive(Debug, Clone)]
pub struct Classifier {
    pub model: Model,
    pub vocabs: Vocabularies,
    pub labels: Vec<String>,
}

impl Classifier {
    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self, TaskError> {
        if checkpoint_task(c) != Some(SA_TASK) {
            return Err(TaskError::Mismatch(format!("checkpoint task {:?} is not {SA_TASK}", checkpoint_task(c))));
        }
        let labels = c
            .extra
            .get("labels")
            .and_then(|v| serde_json::from_value(v.clone()).ok())
            .ok_or_else(|| TaskError::Data("checkpoint has no label set".into()))?;
        Ok(Classifier { model: c.restore()?, vocabs: checkpoint_vocabs(c)?, labels })
    }

    pub fn logits(&self, u: &Utterance) -> Result<Vec<f64>, TaskError> {
        let mut g = Graph::new();
        let z = self.model.class_logits(&mut g, &encoder_input(u, &self.vocabs), &mut ForwardCtx::eval())?;
        Ok(g.value(z).data().to_vec())
    }

    /// Argmax of the head logits; ties go to the lower index.
    pub fn predict(&self, u: &Utterance) -> Result<usize, TaskError> {
        let z = self.logits(u)?;
        Ok(z.iter().enumerate().fold(0, |best, (i, &v)| if v > z[best] { i } else { best }))
    }
}

/// Macro F1 and accuracy of a classifier on labeled data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationScore {
    pub labels: Vec<String>,
    pub averaging: String,
    pub f1: MacroF1,
    pub accuracy: f64,
}

fn score(pred: &[usize], gold: &[usize], labels: &[String]) -> Result<ClassificationScore, TaskError> {
    Ok(ClassificationScore {
        labels: labels.to_vec(),
        averaging: "macro".into(),
        f1: macro_f1(pred, gold, labels.len())?,
        accuracy: accuracy(pred, gold),
    })
}

pub fn evaluate_classifier(clf: &Classifier, data: &[Utterance]) -> Result<ClassificationScore, TaskError> {
    let ex = sentiment_examples(data, &clf.labels)?;
    let pred = ex.iter().map(|e| clf.predict(&e.utterance)).collect::<Result<Vec<_>, _>>()?;
    let gold: Vec<usize> = ex.iter().map(|e| e.label).collect();
    score(&pred, &gold, &clf.labels)
}

/// Always predicts the most frequent training label (lowest index on ties).
pub fn class_prior_baseline(train: &[Utterance], test: &[Utterance], labels: &[String]) -> Result<ClassificationScore, TaskError> {
    let tr = sentiment_examples(train, labels)?;
    let mut counts = vec![0usize; labels.len()];
    for e in &tr {
        counts[e.label] += 1;
    }
    let majority = counts.iter().enumerate().fold(0, |b, (i, &c)| if c > counts[b] { i } else { b });
    let te = sentiment_examples(test, labels)?;
    let gold: Vec<usize> = te.iter().map(|e| e.label).collect();
    score(&vec![majority; gold.len()], &gold, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CmiWeights, LanguageTag, Token};
    use crate::posenc::PeVariant;

    fn utt(words: &[&str], label: &str) -> Utterance {
        let toks = words.iter().map(|w| Token::new(w, LanguageTag::L1).unwrap()).collect();
        let mut u = Utterance::new(toks, &CmiWeights::default()).unwrap();
        u.label = Some(label.into());
        u
    }

    fn separable() -> Vec<Utterance> {
        let (a, b) = (["a1", "a2", "a3", "a4"], ["b1", "b2", "b3", "b4"]);
        (0..24)
            .map(|i| {
                let (set, label) = if i % 2 == 0 { (&a, "positive") } else { (&b, "negative") };
                let ws: Vec<&str> = (0..3).map(|k| set[(i / 2 + k) % 4]).collect();
                utt(&ws, label)
            })
            .collect()
    }

    #[test]
    fn split_is_stratified() {
        let labels = [0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 2];
        let (tr, va) = stratified_split(&labels, 3, 0.4, 1);
        assert_eq!(va.iter().filter(|&&i| labels[i] == 0).count(), 2);
        assert_eq!(va.iter().filter(|&&i| labels[i] == 1).count(), 2);
        assert!(tr.contains(&10));
        assert_eq!(tr.len() + va.len(), labels.len());
    }

    #[test]
    fn separable_set_is_learned() {
        let mut m = ModelConfig::new(PeVariant::Rotary, 1, 2, 8, 16);
        m.dropout_p = 0.0;
        let mut t = TrainConfig::new(60, 8, 10);
        t.lr_scale = 3.0;
        let cls = ClassifierConfig { labels: default_labels(), validation_fraction: 0.0 };
        let run = train_classifier(&separable(), &cls, &m, &t, None, None, 4).unwrap();
        assert_eq!(run.train_accuracy, 1.0);
        let clf = Classifier::from_checkpoint(&run.trained.checkpoint).unwrap();
        let s = evaluate_classifier(&clf, &separable()).unwrap();
        assert_eq!(s.accuracy, 1.0);
        // neutral never occurs and is flagged.
        assert_eq!(s.f1.flagged, vec![2]);
        let z = clf.logits(&separable()[0]).unwrap();
        let best = (0..3).max_by(|&i, &j| z[i].total_cmp(&z[j])).unwrap();
        assert_eq!(clf.predict(&separable()[0]).unwrap(), best);
    }

    #[test]
    fn single_class_rejected() {
        let data: Vec<Utterance> = (0..5).map(|_| utt(&["x", "y"], "neutral")).collect();
        let m = ModelConfig::new(PeVariant::Rotary, 1, 2, 8, 16);
        let r = train_classifier(&data, &ClassifierConfig::default(), &m, &TrainConfig::new(1, 1, 1), None, None, 0);
        assert!(matches!(r, Err(TaskError::Data(_))));
    }

    #[test]
    fn unknown_label_rejected() {
        let data = vec![utt(&["x"], "angry")];
        assert!(sentiment_examples(&data, &default_labels()).is_err());
    }
}
