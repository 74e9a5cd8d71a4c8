use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Architecture, Model, ModelInput, TagSet};
use crate::bpe::{BpeVocabulary, UNK_ID};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::integration::{build_combined_text, LabelKind, NBestList, StrategyConfig};
use crate::nn::{OptimizerKind, OptimizerState, Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// BPE merges learned when no vocabulary is supplied.
    pub merges: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            optimizer: OptimizerKind::Adam,
            lr: 1e-3,
            epochs: 10,
            batch_size: 32,
            seed: 0,
            merges: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub strategy: StrategyConfig,
    pub label: LabelKind,
    pub arch: Architecture,
    pub hyper: Hyperparams,
}

impl TrainConfig {
    pub fn new(strategy: StrategyConfig) -> Self {
        TrainConfig {
            strategy,
            label: LabelKind::Domain,
            arch: Architecture::default(),
            hyper: Hyperparams::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingTrace {
    /// Mean loss of each mini-batch, in step order.
    pub batch_losses: Vec<f64>,
    /// Mean per-example loss over each epoch.
    pub epoch_losses: Vec<f64>,
}

pub(crate) fn encode_nonempty(vocab: &BpeVocabulary, text: &str) -> Vec<u32> {
    let ids = vocab.encode(text).ids;
    if ids.is_empty() {
        vec![UNK_ID]
    } else {
        ids
    }
}

/// Texts a strategy consumes at training time, used to learn the BPE merges.
fn training_texts<'a>(corpus: &'a [NBestList], cfg: &StrategyConfig) -> Result<Vec<&'a str>> {
    if cfg.kind.trains_on_nbest() {
        Ok(corpus.iter().flat_map(|r| r.top(cfg.n)).collect())
    } else {
        corpus.iter().map(NBestList::transcription).collect()
    }
}

/// Model input a strategy trains on for one record: the transcription for
/// single-text strategies, the joined text for combined-sentence, and the
/// hypothesis stack for pooling.
pub fn training_input(record: &NBestList, cfg: &StrategyConfig, vocab: &BpeVocabulary) -> Result<ModelInput> {
    let n = cfg.n.max(1);
    if let Some(mode) = cfg.kind.pool_mode() {
        return Ok(ModelInput::Pooled {
            hypotheses: record.top(n).map(|t| encode_nonempty(vocab, t)).collect(),
            n,
            mode,
        });
    }
    let text = if cfg.kind.trains_on_nbest() {
        build_combined_text(record, n)
    } else {
        record.transcription()?.to_string()
    };
    Ok(ModelInput::Sequence(encode_nonempty(vocab, &text)))
}

pub fn training_examples(
    corpus: &[NBestList],
    cfg: &StrategyConfig,
    label: LabelKind,
    vocab: &BpeVocabulary,
    tags: &TagSet,
) -> Result<Vec<(ModelInput, usize)>> {
    corpus
        .iter()
        .map(|r| Ok((training_input(r, cfg, vocab)?, tags.index(r.label(label))?)))
        .collect()
}

/// Loss and parameter gradients (in [`Model::named_tensors`] order) for one
/// example.
pub fn example_gradient(model: &Model, input: &ModelInput, target: usize) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let p = model.forward(&mut tape, &bound, input)?;
    let loss = tape.nll(p, target)?;
    let grads = tape.backward(loss)?;
    let tensors = model.named_tensors();
    let out = bound
        .vars()
        .into_iter()
        .zip(tensors)
        .map(|(v, (_, t))| grads.tensor(v, t))
        .collect();
    Ok((tape.value(loss).data()[0], out))
}

/// Mean loss and summed-then-averaged gradients of a batch. Per-example
/// work may run in parallel; the reduction is sequential in batch order.
pub fn batch_gradient(model: &Model, batch: &[&(ModelInput, usize)], exec: Execution) -> Result<(f64, Vec<Tensor>)> {
    let results = exec.map(batch, |(input, target)| example_gradient(model, input, *target));
    let mut loss_sum = 0.0;
    let mut sum: Option<Vec<Tensor>> = None;
    for r in results {
        let (loss, grads) = r?;
        loss_sum += loss;
        match &mut sum {
            None => sum = Some(grads),
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(&grads) {
                    for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                        *x += y;
                    }
                }
            }
        }
    }
    let mut grads = sum.ok_or(Error::Empty("batch"))?;
    let scale = 1.0 / batch.len() as f64;
    for g in &mut grads {
        for x in g.data_mut() {
            *x *= scale;
        }
    }
    Ok((loss_sum * scale, grads))
}

/// Trains a model for `cfg.strategy` on `corpus`.
///
/// Learns a vocabulary unless one is given and derives the tag set from the
/// corpus unless one is given (records with other tags are then an error).
/// Everything random flows from `cfg.hyper.seed`.
pub fn train_model(
    corpus: &[NBestList],
    cfg: &TrainConfig,
    vocab: Option<BpeVocabulary>,
    tags: Option<TagSet>,
) -> Result<(Model, TrainingTrace)> {
    if corpus.is_empty() {
        return Err(Error::Empty("training corpus"));
    }
    cfg.strategy.validate()?;
    let hyper = &cfg.hyper;
    if hyper.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    for r in corpus {
        r.validate()?;
    }
    let tags = match tags {
        Some(t) => t,
        None => TagSet::from_labels(corpus.iter().map(|r| r.label(cfg.label)))?,
    };
    let vocab = match vocab {
        Some(v) => v,
        None => BpeVocabulary::train(&training_texts(corpus, &cfg.strategy)?, hyper.merges)?,
    };
    let examples = training_examples(corpus, &cfg.strategy, cfg.label, &vocab, &tags)?;

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut model = Model::init(
        &mut rng,
        cfg.strategy.kind,
        cfg.label,
        cfg.strategy.n,
        cfg.arch,
        hyper.clone(),
        vocab,
        tags,
    )?;
    let mut opt = OptimizerState::new(hyper.optimizer, hyper.lr)?;
    let mut trace = TrainingTrace::default();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let exec = Execution::default();

    for _ in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut epoch_total = 0.0;
        for chunk in order.chunks(hyper.batch_size) {
            let batch: Vec<&(ModelInput, usize)> = chunk.iter().map(|&i| &examples[i]).collect();
            let (loss, grads) = batch_gradient(&model, &batch, exec)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite("training loss"));
            }
            opt.step(&mut model.tensors_mut(), &grads)?;
            trace.batch_losses.push(loss);
            epoch_total += loss * chunk.len() as f64;
        }
        trace.epoch_losses.push(epoch_total / examples.len() as f64);
    }
    Ok((model, trace))
}
