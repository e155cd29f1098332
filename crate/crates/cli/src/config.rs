//! Run configuration (TOML). Relative paths resolve against the config
//! file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use codemix::corpus::{BucketMix, CmiWeights, LabelRule, OverlapPolicy, SynthSpec};
use codemix::posenc::PeVariant;
use codemix::tasks::{ClassifierConfig, DecodeConfig, ModelConfig, SkipGramConfig, TrainConfig};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub cmi: CmiWeights,
    pub synth: Option<SynthConfig>,
    pub model: Option<ModelConfig>,
    pub train: Option<TrainConfig>,
    pub pretrain: Option<SkipGramConfig>,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub decode: DecodeConfig,
    pub compare: Option<CompareConfig>,
    pub attention: Option<AttentionConfig>,
}

fn default_heaps_points() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub corpus: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    #[serde(default)]
    pub overlap_policy: OverlapPolicy,
    pub checkpoint: Option<PathBuf>,
    /// Initial checkpoint for `train-sa` (a language model).
    pub init_checkpoint: Option<PathBuf>,
    #[serde(default = "default_heaps_points")]
    pub heaps_points: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            corpus: None,
            test: None,
            lexicon: None,
            overlap_policy: OverlapPolicy::default(),
            checkpoint: None,
            init_checkpoint: None,
            heaps_points: default_heaps_points(),
        }
    }
}

fn default_l() -> usize {
    200
}

fn default_min_len() -> usize {
    8
}

fn default_max_len() -> usize {
    20
}

fn default_density() -> f64 {
    0.3
}

fn default_zipf() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_utterances: usize,
    #[serde(default = "default_l")]
    pub n_l1: usize,
    #[serde(default = "default_l")]
    pub n_l2: usize,
    /// Sizes of the post-switch sub-vocabularies.
    pub post_switch: Option<[usize; 2]>,
    #[serde(default = "default_min_len")]
    pub min_len: usize,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    #[serde(default = "default_density")]
    pub sp_density: f64,
    #[serde(default = "default_zipf")]
    pub zipf_exponent: f64,
    /// Weights of the zero-CMI bin and the six reporting buckets.
    pub mix: Option<[f64; 7]>,
    pub label_rule: Option<LabelRule>,
    #[serde(default)]
    pub translate: bool,
    /// Also write a stratified 4:1 train/test split.
    #[serde(default)]
    pub split: bool,
}

impl SynthConfig {
    pub fn spec(&self, weights: CmiWeights) -> SynthSpec {
        let mut s = SynthSpec::with_vocab_sizes(self.n_utterances, self.n_l1, self.n_l2);
        if let Some([a, b]) = self.post_switch {
            s = s.with_post_switch(a, b);
        }
        s.min_len = self.min_len;
        s.max_len = self.max_len;
        s.sp_density = self.sp_density;
        s.zipf_exponent = self.zipf_exponent;
        if let Some(m) = self.mix {
            s.target_mix = BucketMix(m);
        }
        s.weights = weights;
        s.label_rule = self.label_rule;
        s.translate = self.translate;
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompareTask {
    Lm,
    Sa,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub task: CompareTask,
    pub variants: Vec<PeVariant>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionConfig {
    /// Space-separated tokens, each optionally tagged as `word/L1`.
    pub text: String,
    #[serde(default)]
    pub layer: usize,
    #[serde(default)]
    pub head: usize,
}

impl RunConfig {
    /// Parses the file, applies the seed override and resolves paths.
    /// The returned hash covers the config as written (paths unresolved),
    /// so it does not depend on the working directory.
    pub fn load(path: &Path, seed: Option<u64>) -> Result<(Self, String), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        let hash = cfg.hash();
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.data.resolve(base);
        cfg.cmi.validate()?;
        Ok((cfg, hash))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn section<'a, T>(&self, value: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
        value.as_ref().ok_or_else(|| CliError::Config(format!("missing [{name}] section")))
    }
}

impl DataConfig {
    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.corpus,
            &mut self.test,
            &mut self.lexicon,
            &mut self.checkpoint,
            &mut self.init_checkpoint,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    /// Fails if any given input path is missing.
    pub fn check_inputs(&self) -> Result<(), CliError> {
        for (name, p) in [
            ("corpus", &self.corpus),
            ("test", &self.test),
            ("lexicon", &self.lexicon),
            ("checkpoint", &self.checkpoint),
            ("init_checkpoint", &self.init_checkpoint),
        ] {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(CliError::Config(format!("data.{name} {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn require<'a>(&self, p: &'a Option<PathBuf>, name: &str) -> Result<&'a Path, CliError> {
        p.as_deref().ok_or_else(|| CliError::Config(format!("data.{name} is required for this command")))
    }
}
