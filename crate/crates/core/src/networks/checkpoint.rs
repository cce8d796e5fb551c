use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::model::{Model, Network};
use crate::datamodel::FeatureSchema;
use crate::error::{Error, Result};
use crate::numerics::ParamStore;
use crate::textmatch::Vocabulary;

const FORMAT: &str = "searchrank-checkpoint/1";

/// Self-describing model file: config echo, schema and its hash, vocabulary,
/// seed, structure and every parameter tensor.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    config: ModelConfig,
    seed: u64,
    schema_hash: String,
    schema: FeatureSchema,
    vocab: serde_json::Value,
    network: Network,
    params: ParamStore,
}

/// Everything needed to score new data with a trained model.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub schema: FeatureSchema,
    pub vocab: Vocabulary,
    pub seed: u64,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = CheckpointFile {
            format: FORMAT.into(),
            config: self.model.network.config.clone(),
            seed: self.seed,
            schema_hash: self.schema.hash(),
            schema: self.schema.clone(),
            vocab: self.vocab.to_json(),
            network: self.model.network.clone(),
            params: self.model.store.clone(),
        };
        let bytes = serde_json::to_vec(&file)?;
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file: CheckpointFile = serde_json::from_slice(&std::fs::read(path)?)?;
        if file.format != FORMAT {
            return Err(Error::Config(format!(
                "{}: unsupported checkpoint format `{}`",
                path.display(),
                file.format
            )));
        }
        let mut schema = file.schema;
        schema.reindex();
        let actual = schema.hash();
        if actual != file.schema_hash || actual != file.network.schema_hash {
            return Err(Error::Config(format!(
                "{}: schema hash mismatch (recorded {}, computed {})",
                path.display(),
                file.schema_hash,
                actual
            )));
        }
        let max_id = file.network.params().iter().map(|p| p.index()).max().unwrap_or(0);
        if max_id >= file.params.len() {
            return Err(Error::Data(format!("{}: parameter table is truncated", path.display())));
        }
        for id in file.network.params() {
            if !file.params.get(id).is_finite() {
                return Err(Error::NonFinite {
                    kernel: format!("checkpoint:{}", file.params.name(id)),
                });
            }
        }
        Ok(Self {
            model: Model {
                network: file.network,
                store: file.params,
            },
            schema,
            vocab: Vocabulary::from_json(&file.vocab)?,
            seed: file.seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::model::tests::{random_examples, tiny_config, tiny_schema};
    use crate::networks::BottomKind;
    use crate::textmatch::MatchingMode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn checkpoint(bottom: BottomKind) -> Checkpoint {
        let vocab = Vocabulary::build(["a b c d e f g"], 10);
        let model = Model::new(&tiny_schema(), vocab.len(), &tiny_config(bottom, MatchingMode::Cross), 3).unwrap();
        Checkpoint {
            model,
            schema: tiny_schema(),
            vocab,
            seed: 3,
        }
    }

    #[test]
    fn round_trip_preserves_predictions() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ex = random_examples(&mut rng, 5);
        for bottom in [BottomKind::Dcn, BottomKind::Ftt] {
            let ck = checkpoint(bottom);
            let path = dir.path().join("model.json");
            ck.save(&path).unwrap();
            let back = Checkpoint::load(&path).unwrap();
            assert_eq!(back.model.store, ck.model.store);
            assert_eq!(back.model.network, ck.model.network);
            assert_eq!(back.model.predict(&ex).unwrap(), ck.model.predict(&ex).unwrap());
            assert_eq!(back.vocab.len(), ck.vocab.len());
        }
    }

    #[test]
    fn tampered_schema_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        checkpoint(BottomKind::Dcn).save(&path).unwrap();
        let mut v: serde_json::Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
        v["schema"]["continuous"][0]["mean"] = serde_json::json!(42.0);
        std::fs::write(&path, serde_json::to_vec(&v).unwrap()).unwrap();
        let err = Checkpoint::load(&path).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }
}
