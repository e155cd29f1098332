//! Evaluation reports as CSV and JSON.

use serde::{Deserialize, Serialize};

use super::mt::TranslationScore;
use super::perplexity::PerplexityReport;
use super::sentiment::ClassificationScore;
use crate::nn::ModelSpec;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub task: String,
    pub seed: u64,
    /// Hex digest of the run configuration.
    pub config_hash: String,
    pub spec: Option<ModelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perplexity: Option<PerplexityReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classification: Option<ClassificationScore>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub translation: Option<TranslationScore>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl EvalReport {
    pub fn new(task: &str, seed: u64, config_hash: &str, spec: Option<ModelSpec>) -> Self {
        EvalReport {
            schema_version: REPORT_SCHEMA_VERSION,
            task: task.into(),
            seed,
            config_hash: config_hash.into(),
            spec,
            perplexity: None,
            classification: None,
            translation: None,
            notes: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// `#`-prefixed metadata lines followed by one table per metric.
    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "# schema_version={} task={} seed={} config_hash={}\n",
            self.schema_version, self.task, self.seed, self.config_hash
        );
        for n in &self.notes {
            s.push_str(&format!("# note: {n}\n"));
        }
        if let Some(p) = &self.perplexity {
            for n in &p.notes {
                s.push_str(&format!("# note: {n}\n"));
            }
            s.push_str(&p.to_csv());
        }
        if let Some(c) = &self.classification {
            s.push_str("label,f1\n");
            for (l, f) in c.labels.iter().zip(&c.f1.per_class) {
                let flag = if c.f1.flagged.contains(&c.labels.iter().position(|x| x == l).unwrap()) { " (absent)" } else { "" };
                s.push_str(&format!("{l}{flag},{f:.6}\n"));
            }
            s.push_str(&format!("{}_f1,{:.6}\naccuracy,{:.6}\n", c.averaging, c.f1.score, c.accuracy));
        }
        if let Some(t) = &self.translation {
            s.push_str("metric,value\n");
            s.push_str(&format!("bleu,{:.6}\n", t.bleu.score));
            s.push_str(&format!("brevity_penalty,{:.6}\n", t.bleu.brevity_penalty));
            for (n, p) in t.bleu.precisions.iter().enumerate() {
                s.push_str(&format!("precision_{},{:.6}\n", n + 1, p));
            }
            s.push_str(&format!("token_accuracy,{:.6}\n", t.token_accuracy));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{perplexity, UniformScorer};
    use crate::corpus::{generate_synthetic_corpus, SynthSpec};

    #[test]
    fn round_trips_and_has_average_row() {
        let c = generate_synthetic_corpus(&SynthSpec::with_vocab_sizes(60, 10, 10), 1).unwrap();
        let mut r = EvalReport::new("lm", 7, "abc", None);
        r.perplexity = Some(perplexity(&UniformScorer { vocab_size: 9 }, &c).unwrap());
        let back: EvalReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
        let csv = r.to_csv();
        assert!(csv.starts_with("# schema_version=1 task=lm seed=7 config_hash=abc\n"));
        assert!(csv.contains("\nAverage,"));
    }
}
