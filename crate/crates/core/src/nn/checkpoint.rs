//! Self-describing JSON checkpoints.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::model::{Model, ModelSpec};
use super::params::ParamStore;
use super::tensor::Tensor;
use super::NnError;

pub const CHECKPOINT_FORMAT: &str = "codemix-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamBlock {
    pub name: String,
    pub shape: Vec<usize>,
    /// Row-major.
    pub values: Vec<f64>,
}

/// Enough to resume every random stream: streams are derived from the
/// root seed and the step counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngState {
    pub seed: u64,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub spec: ModelSpec,
    pub params: Vec<ParamBlock>,
    #[serde(default)]
    pub optimizer: Option<AdamState>,
    pub rng: RngState,
    /// Task-level data such as vocabularies and label sets.
    #[serde(default)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl Checkpoint {
    pub fn capture(model: &Model, optimizer: Option<&AdamState>, rng: RngState) -> Self {
        let params = model
            .params
            .ids()
            .map(|id| {
                let t = model.params.value(id);
                ParamBlock { name: model.params.name(id).to_string(), shape: t.shape().to_vec(), values: t.data().to_vec() }
            })
            .collect();
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            spec: model.spec.clone(),
            params,
            optimizer: optimizer.cloned(),
            rng,
            extra: BTreeMap::new(),
        }
    }

    pub fn restore(&self) -> Result<Model, NnError> {
        let mut store = ParamStore::new();
        for b in &self.params {
            let t = Tensor::new(b.shape.clone(), b.values.clone())
                .map_err(|e| NnError::Checkpoint(format!("parameter {}: {e}", b.name)))?;
            if store.id(&b.name).is_some() {
                return Err(NnError::Checkpoint(format!("duplicate parameter {}", b.name)));
            }
            store.add(b.name.clone(), t);
        }
        let model = Model::from_params(self.spec.clone(), store)?;
        if let Some(opt) = &self.optimizer {
            let ok = opt.m.len() == model.params.len()
                && model.params.ids().all(|id| opt.m[id.index()].len() == model.params.value(id).len())
                && opt.v.iter().zip(&opt.m).all(|(v, m)| v.len() == m.len());
            if !ok {
                return Err(NnError::Checkpoint("optimizer state does not match parameters".into()));
            }
        }
        Ok(model)
    }

    pub fn write_to(&self, w: impl Write) -> Result<(), NnError> {
        serde_json::to_writer(w, self).map_err(|e| NnError::Checkpoint(e.to_string()))
    }

    pub fn read_from(r: impl Read) -> Result<Self, NnError> {
        let value: serde_json::Value = serde_json::from_reader(r).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        match (value.get("format").and_then(|v| v.as_str()), value.get("version").and_then(|v| v.as_u64())) {
            (Some(CHECKPOINT_FORMAT), Some(v)) if v == CHECKPOINT_VERSION as u64 => {}
            (Some(CHECKPOINT_FORMAT), v) => {
                return Err(NnError::Checkpoint(format!("unsupported checkpoint version {v:?}")));
            }
            _ => return Err(NnError::Checkpoint("not a checkpoint file".into())),
        }
        serde_json::from_value(value).map_err(|e| NnError::Checkpoint(e.to_string()))
    }

    /// Writes through a temporary sibling file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
            self.write_to(&mut f)?;
            f.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::StackMode;
    use crate::posenc::{PeConfig, PeVariant, SprmMode};

    fn model() -> Model {
        let spec = ModelSpec {
            mode: StackMode::Causal,
            n_layers: 1,
            n_heads: 2,
            d_model: 4,
            d_ff: 8,
            pe_config: PeConfig::new(PeVariant::Spdrpe, 4),
            dropout_p: 0.1,
            vocab_size: 6,
            bigram_vocab_size: 0,
            use_bigram_stream: false,
            target_vocab_size: 0,
            n_classes: 0,
            sprm_mode: SprmMode::Transpose,
            tie_embeddings: false,
        };
        Model::new(spec, 42).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let opt = AdamState::new(&m.params);
        let mut c = Checkpoint::capture(&m, Some(&opt), RngState { seed: 42, step: 17 });
        c.extra.insert("vocab".into(), serde_json::json!(["<pad>", "a"]));
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, c);
        let restored = back.restore().unwrap();
        assert_eq!(restored.params, m.params);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        c.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), c);
    }

    #[test]
    fn rejects_foreign_or_damaged_files() {
        assert!(Checkpoint::read_from(&b"{\"format\":\"other\"}"[..]).is_err());
        let c = Checkpoint::capture(&model(), None, RngState { seed: 0, step: 0 });
        let mut v = serde_json::to_value(&c).unwrap();
        v["version"] = serde_json::json!(99);
        assert!(matches!(
            Checkpoint::read_from(serde_json::to_vec(&v).unwrap().as_slice()),
            Err(NnError::Checkpoint(m)) if m.contains("version")
        ));
        let mut bad = c.clone();
        bad.params[0].values.pop();
        assert!(bad.restore().is_err());
        let mut missing = c.clone();
        missing.params.pop();
        assert!(missing.restore().is_err());
    }
}
