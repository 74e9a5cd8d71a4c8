//! Self-contained JSON checkpoints: settings, tag set, vocabulary and every
//! parameter tensor as name, shape and flat data.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bpe::BpeVocabulary;
use crate::classifier::{Architecture, Hyperparams, Model, TagSet};
use crate::error::{Error, Result};
use crate::integration::{LabelKind, NBestList, StrategyKind};

pub const FORMAT: &str = "nbest-slu-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Stored {
    format: String,
    version: u32,
    strategy: StrategyKind,
    label: LabelKind,
    n: usize,
    architecture: Architecture,
    hyperparams: Hyperparams,
    tags: TagSet,
    vocabulary: BpeVocabulary,
    tensors: Vec<StoredTensor>,
}

pub fn checkpoint_to_string(model: &Model) -> String {
    let stored = Stored {
        format: FORMAT.to_string(),
        version: VERSION,
        strategy: model.strategy,
        label: model.label,
        n: model.n,
        architecture: model.arch,
        hyperparams: model.hyper.clone(),
        tags: model.tags.clone(),
        vocabulary: model.vocab.clone(),
        tensors: model
            .named_tensors()
            .into_iter()
            .map(|(name, t)| StoredTensor {
                name,
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            })
            .collect(),
    };
    let mut text = serde_json::to_string(&stored).expect("checkpoint serializes");
    text.push('\n');
    text
}

pub fn checkpoint_from_str(text: &str) -> Result<Model> {
    let header: Header =
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("unreadable checkpoint: {e}")))?;
    if header.format != FORMAT {
        return Err(Error::Checkpoint(format!(
            "not a checkpoint (format {:?})",
            header.format
        )));
    }
    if header.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "checkpoint version {} is not supported (expected {VERSION})",
            header.version
        )));
    }
    let stored: Stored =
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("unreadable checkpoint: {e}")))?;
    // The random init only fixes the shapes; every value is overwritten.
    let mut model = Model::init(
        &mut ChaCha8Rng::seed_from_u64(0),
        stored.strategy,
        stored.label,
        stored.n,
        stored.architecture,
        stored.hyperparams,
        stored.vocabulary,
        stored.tags,
    )?;
    let names: Vec<(String, Vec<usize>)> = model
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    if names.len() != stored.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {}",
            names.len(),
            stored.tensors.len()
        )));
    }
    for ((name, shape), (slot, t)) in names.iter().zip(model.tensors_mut().into_iter().zip(stored.tensors)) {
        if *name != t.name || *shape != t.shape {
            return Err(Error::Checkpoint(format!(
                "tensor {} {:?} does not match expected {name} {shape:?}",
                t.name, t.shape
            )));
        }
        if t.data.len() != slot.len() {
            return Err(Error::Checkpoint(format!("tensor {name} has {} values", t.data.len())));
        }
        slot.data_mut().copy_from_slice(&t.data);
    }
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_to_string(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_str(&text)
}

/// Fails when the corpus carries a label the model cannot predict.
pub fn check_corpus_tags(model: &Model, corpus: &[NBestList]) -> Result<()> {
    let mut unknown: Vec<&str> = corpus
        .iter()
        .map(|r| r.label(model.label()))
        .filter(|t| model.tags().index(t).is_err())
        .collect();
    unknown.sort_unstable();
    unknown.dedup();
    if unknown.is_empty() {
        Ok(())
    } else {
        Err(Error::Checkpoint(format!(
            "corpus tags {unknown:?} are not in the checkpoint tag set {:?}",
            model.tags().names()
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::bm_predict;

    fn model(hidden: Option<usize>) -> Model {
        let vocab = BpeVocabulary::train(&["play muse", "weather today"], 10).unwrap();
        let tags = TagSet::new(vec!["Music".into(), "Weather".into()]).unwrap();
        let arch = Architecture {
            embed_dim: 3,
            hidden_dim: 4,
            mlp_hidden: hidden,
        };
        Model::init(
            &mut ChaCha8Rng::seed_from_u64(5),
            StrategyKind::PoolingAvg,
            LabelKind::Domain,
            5,
            arch,
            Hyperparams::default(),
            vocab,
            tags,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_byte_identical() {
        for hidden in [None, Some(3)] {
            let m = model(hidden);
            let a = checkpoint_to_string(&m);
            let loaded = checkpoint_from_str(&a).unwrap();
            assert_eq!(loaded, m);
            assert_eq!(checkpoint_to_string(&loaded), a);
            for text in ["play muse", "weather today", "zzz"] {
                assert_eq!(bm_predict(&m, text).unwrap(), bm_predict(&loaded, text).unwrap());
            }
        }
    }

    #[test]
    fn rejects_version_and_truncation() {
        let text = checkpoint_to_string(&model(None));
        let bumped = text.replacen("\"version\":1", "\"version\":99", 1);
        match checkpoint_from_str(&bumped) {
            Err(Error::Checkpoint(msg)) => assert!(msg.contains("version 99"), "{msg}"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            checkpoint_from_str(&text[..text.len() / 2]),
            Err(Error::Checkpoint(_))
        ));
        assert!(checkpoint_from_str("").is_err());
    }

    #[test]
    fn corpus_tag_check() {
        let m = model(None);
        let rec = |domain: &str| NBestList {
            id: "x".into(),
            transcription: None,
            domain: domain.into(),
            intent: "I".into(),
            nbest: vec![crate::integration::Hypothesis::new("play")],
        };
        assert!(check_corpus_tags(&m, &[rec("Music"), rec("Weather")]).is_ok());
        let err = check_corpus_tags(&m, &[rec("Music"), rec("Video")]).unwrap_err();
        assert!(err.to_string().contains("Video"));
    }
}
