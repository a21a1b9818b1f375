//! Saving and restoring trained models.
//!
//! A checkpoint is a directory:
//!
//! ```text
//! config.json         model spec and initialization seed
//! manifest.txt        one `name<TAB>d0xd1...` line per parameter, in store order
//! tensors/<name>.bin  little-endian f64 values
//! vocab.txt
//! labels.txt          classification only
//! ```

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, LabelSet};
use crate::model::{Model, ModelError, ModelSpec};
use crate::seqpack::{PackError, Vocab};
use crate::tensor::ParamStore;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Vocab(#[from] PackError),
    #[error(transparent)]
    Labels(#[from] CorpusError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointConfig {
    pub spec: ModelSpec,
    pub seed: u64,
}

/// A model with its parameters and the vocabularies it was trained with.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: CheckpointConfig,
    pub model: Model,
    pub store: ParamStore,
    pub vocab: Vocab,
    pub labels: Option<LabelSet>,
}

/// Builds a freshly initialized model from `seed`.
pub fn init_model(spec: &ModelSpec, seed: u64) -> Result<(Model, ParamStore), ModelError> {
    let mut store = ParamStore::new();
    let model = Model::new(spec, &mut store, &mut ChaCha8Rng::seed_from_u64(seed))?;
    Ok((model, store))
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

fn shape_text(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<(), CheckpointError> {
        let tensors = dir.join("tensors");
        fs::create_dir_all(&tensors).map_err(io_err(&tensors))?;

        let path = dir.join("config.json");
        let json = serde_json::to_string_pretty(&self.config).map_err(|e| format_err(&path, e.to_string()))?;
        fs::write(&path, json + "\n").map_err(io_err(&path))?;

        let mut manifest = String::new();
        for id in self.store.ids() {
            let name = self.store.name(id);
            let value = self.store.value(id);
            manifest.push_str(&format!("{name}\t{}\n", shape_text(value.shape())));
            let bytes: Vec<u8> = value.data().iter().flat_map(|x| x.to_le_bytes()).collect();
            let path = tensors.join(format!("{name}.bin"));
            fs::write(&path, bytes).map_err(io_err(&path))?;
        }
        let path = dir.join("manifest.txt");
        fs::write(&path, manifest).map_err(io_err(&path))?;

        self.vocab.save(&dir.join("vocab.txt"))?;
        if let Some(labels) = &self.labels {
            labels.save(&dir.join("labels.txt"))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, CheckpointError> {
        let path = dir.join("config.json");
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let config: CheckpointConfig = serde_json::from_str(&text).map_err(|e| format_err(&path, e.to_string()))?;
        let (model, mut store) = init_model(&config.spec, config.seed)?;

        let path = dir.join("manifest.txt");
        let manifest = fs::read_to_string(&path).map_err(io_err(&path))?;
        let entries: Vec<&str> = manifest.lines().filter(|l| !l.is_empty()).collect();
        if entries.len() != store.len() {
            return Err(format_err(
                &path,
                format!("{} parameters listed, model has {}", entries.len(), store.len()),
            ));
        }
        for (line, id) in entries.iter().zip(store.ids().collect::<Vec<_>>()) {
            let (name, shape) = line
                .split_once('\t')
                .ok_or_else(|| format_err(&path, format!("malformed line {line:?}")))?;
            let expected = store.name(id);
            if name != expected {
                return Err(format_err(&path, format!("found parameter {name}, expected {expected}")));
            }
            let want_shape = shape_text(store.value(id).shape());
            if shape != want_shape {
                return Err(format_err(&path, format!("{name} has shape {shape}, model expects {want_shape}")));
            }
            let tpath = dir.join("tensors").join(format!("{name}.bin"));
            let bytes = fs::read(&tpath).map_err(io_err(&tpath))?;
            let value = store.value_mut(id);
            if bytes.len() != value.len() * 8 {
                return Err(format_err(
                    &tpath,
                    format!("{} bytes for {} values", bytes.len(), value.len()),
                ));
            }
            for (x, chunk) in value.data_mut().iter_mut().zip(bytes.chunks_exact(8)) {
                *x = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
            }
        }

        let vocab = Vocab::load(&dir.join("vocab.txt"))?;
        if vocab.len() != config.spec.encoder.vocab_size {
            return Err(format_err(
                &dir.join("vocab.txt"),
                format!("{} tokens, model expects {}", vocab.len(), config.spec.encoder.vocab_size),
            ));
        }
        let lpath = dir.join("labels.txt");
        let labels = if lpath.exists() { Some(LabelSet::load(&lpath)?) } else { None };
        Ok(Self {
            config,
            model,
            store,
            vocab,
            labels,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::model::{ModelKind, Task};
    use crate::seqpack::Document;

    fn checkpoint(kind: ModelKind, task: Task) -> Checkpoint {
        let docs = vec![Document::new("d", vec!["a b.".into(), "c a.".into()])];
        let vocab = Vocab::build(&docs, 50).unwrap();
        let enc = EncoderConfig {
            num_layers: 1,
            num_heads: 2,
            hidden_dim: 4,
            ff_dim: 8,
            vocab_size: vocab.len(),
            max_positions: 32,
            dropout: 0.1,
        };
        let spec = ModelSpec::new(kind, task, enc, 3);
        let (model, mut store) = init_model(&spec, 11).unwrap();
        // move away from the seed's initial values
        for id in store.ids().collect::<Vec<_>>() {
            for (i, x) in store.value_mut(id).data_mut().iter_mut().enumerate() {
                *x += 1e-3 * (i as f64).sin() + f64::EPSILON;
            }
        }
        let labels = (task == Task::Classify).then(|| LabelSet::new(["x", "y", "z"]).unwrap());
        Checkpoint {
            config: CheckpointConfig { spec, seed: 11 },
            model,
            store,
            vocab,
            labels,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for (kind, task) in [
            (ModelKind::Joint, Task::Classify),
            (ModelKind::Joint, Task::Summarize),
            (ModelKind::ClsBaseline, Task::Summarize),
            (ModelKind::ClsCrf, Task::Classify),
        ] {
            let ck = checkpoint(kind, task);
            let dir = tempfile::tempdir().unwrap();
            ck.save(dir.path()).unwrap();
            let back = Checkpoint::load(dir.path()).unwrap();
            assert!(back.store.bit_eq(&ck.store));
            assert_eq!(back.config, ck.config);
            assert_eq!(back.model, ck.model);
            assert_eq!(back.vocab, ck.vocab);
            assert_eq!(back.labels, ck.labels);
        }
    }

    #[test]
    fn load_rejects_mismatches() {
        let ck = checkpoint(ModelKind::Joint, Task::Classify);
        let dir = tempfile::tempdir().unwrap();
        ck.save(dir.path()).unwrap();
        let t = dir.path().join("tensors/head.output.bias.bin");
        let bytes = fs::read(&t).unwrap();
        fs::write(&t, &bytes[..8]).unwrap();
        assert!(matches!(Checkpoint::load(dir.path()), Err(CheckpointError::Format { .. })));
        fs::write(&t, bytes).unwrap();

        let m = dir.path().join("manifest.txt");
        let text = fs::read_to_string(&m).unwrap();
        fs::write(&m, text.replacen("4x", "5x", 1)).unwrap();
        let err = Checkpoint::load(dir.path()).unwrap_err().to_string();
        assert!(err.contains("shape"), "{err}");
    }
}
