//! Softmax head over an utterance (or pooled) embedding, and the complete
//! model that maps text or an n-best list to a tag distribution.

mod train;

pub use train::{
    batch_gradient, example_gradient, train_model, training_examples, training_input, Hyperparams, TrainConfig,
    TrainingTrace,
};

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bpe::BpeVocabulary;
use crate::encoder::{encode_utterance, BoundEncoder, EncoderParams, INIT_SCALE};
use crate::error::{Error, Result};
use crate::integration::{stack_and_pad, LabelKind, StrategyKind};
use crate::nn::{BoundLinear, Linear, PoolMode, Tape, Tensor, Var};

/// Ordered tag names; the position of a name is its index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct TagSet {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl TryFrom<Vec<String>> for TagSet {
    type Error = Error;

    fn try_from(names: Vec<String>) -> Result<Self> {
        TagSet::new(names)
    }
}

impl From<TagSet> for Vec<String> {
    fn from(t: TagSet) -> Self {
        t.names
    }
}

impl TagSet {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Empty("tag set"));
        }
        let mut index = HashMap::new();
        for (i, n) in names.iter().enumerate() {
            if index.insert(n.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate tag {n:?}")));
            }
        }
        Ok(TagSet { names, index })
    }

    /// Sorted, de-duplicated tags of `labels`.
    pub fn from_labels<'a>(labels: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let set: std::collections::BTreeSet<&str> = labels.into_iter().collect();
        TagSet::new(set.into_iter().map(str::to_string).collect())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownTag(name.to_string()))
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TagDistribution {
    pub probs: Vec<f64>,
}

impl TagDistribution {
    /// Index of the largest probability; the first one on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }

    pub fn confidence(&self) -> f64 {
        self.probs[self.argmax()]
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Affine output layer, optionally preceded by one tanh hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub hidden: Option<Linear>,
    pub output: Linear,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundMlp {
    hidden: Option<BoundLinear>,
    output: BoundLinear,
}

impl MlpParams {
    pub fn init<R: Rng>(rng: &mut R, input_dim: usize, tags: usize, hidden: Option<usize>) -> Self {
        let hidden = hidden.map(|h| Linear::init(rng, h, input_dim, INIT_SCALE, 0.0));
        let top_in = hidden.as_ref().map_or(input_dim, Linear::d_out);
        let mut output = Linear::init(rng, tags, top_in, INIT_SCALE, 0.0);
        for b in output.bias.data_mut() {
            *b = rng.gen_range(-INIT_SCALE..=INIT_SCALE);
        }
        MlpParams { hidden, output }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.as_ref().unwrap_or(&self.output).d_in()
    }

    pub fn num_tags(&self) -> usize {
        self.output.d_out()
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> BoundMlp {
        BoundMlp {
            hidden: self.hidden.as_ref().map(|h| h.bind(tape)),
            output: self.output.bind(tape),
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        if let Some(h) = &self.hidden {
            out.push(("mlp.hidden.weight".to_string(), &h.weight));
            out.push(("mlp.hidden.bias".to_string(), &h.bias));
        }
        out.push(("mlp.output.weight".to_string(), &self.output.weight));
        out.push(("mlp.output.bias".to_string(), &self.output.bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        if let Some(h) = &mut self.hidden {
            out.push(&mut h.weight);
            out.push(&mut h.bias);
        }
        out.push(&mut self.output.weight);
        out.push(&mut self.output.bias);
        out
    }

    /// `softmax(W·v + b)` without recording gradients.
    pub fn classify(&self, v: &[f64]) -> Result<TagDistribution> {
        if v.len() != self.input_dim() {
            return Err(Error::Dimension {
                op: "classify_embedding",
                left: vec![v.len()],
                right: vec![self.input_dim()],
            });
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let x = tape.leaf(Tensor::vector(v.to_vec())?);
        let p = classify_embedding(&mut tape, &bound, x)?;
        Ok(TagDistribution {
            probs: tape.value(p).data().to_vec(),
        })
    }
}

impl BoundMlp {
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        if let Some(h) = &self.hidden {
            out.push(h.weight);
            out.push(h.bias);
        }
        out.push(self.output.weight);
        out.push(self.output.bias);
        out
    }
}

/// Records `softmax(W·v + b)` and returns the probability node.
pub fn classify_embedding(tape: &mut Tape<'_>, mlp: &BoundMlp, v: Var) -> Result<Var> {
    let mut x = v;
    if let Some(h) = &mlp.hidden {
        let z = h.apply(tape, x)?;
        x = tape.tanh(z);
    }
    let logits = mlp.output.apply(tape, x)?;
    tape.softmax(logits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Width of the optional MLP hidden layer.
    #[serde(default)]
    pub mlp_hidden: Option<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            embed_dim: 64,
            hidden_dim: 128,
            mlp_hidden: None,
        }
    }
}

/// Model input after tokenization.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelInput {
    /// One id sequence (a single text or a delimiter-joined n-best list).
    Sequence(Vec<u32>),
    /// Per-hypothesis id sequences, stacked to `n` rows and pooled.
    Pooled {
        hypotheses: Vec<Vec<u32>>,
        n: usize,
        mode: PoolMode,
    },
}

#[derive(Debug, Clone, Copy)]
pub struct BoundModel {
    pub encoder: BoundEncoder,
    pub mlp: BoundMlp,
}

impl BoundModel {
    /// Parameter handles in [`Model::named_tensors`] order.
    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.encoder.vars();
        v.extend(self.mlp.vars());
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub tag: usize,
    pub confidence: f64,
}

/// Tokenizer, BiLSTM encoder and MLP head plus the settings they were
/// trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub(crate) strategy: StrategyKind,
    pub(crate) label: LabelKind,
    pub(crate) n: usize,
    pub(crate) arch: Architecture,
    pub(crate) hyper: Hyperparams,
    pub(crate) vocab: BpeVocabulary,
    pub(crate) tags: TagSet,
    pub(crate) encoder: EncoderParams,
    pub(crate) mlp: MlpParams,
}

impl Model {
    /// Freshly initialized parameters.
    #[allow(clippy::too_many_arguments)]
    pub fn init<R: Rng>(
        rng: &mut R,
        strategy: StrategyKind,
        label: LabelKind,
        n: usize,
        arch: Architecture,
        hyper: Hyperparams,
        vocab: BpeVocabulary,
        tags: TagSet,
    ) -> Result<Self> {
        if arch.embed_dim == 0 || arch.hidden_dim == 0 || arch.mlp_hidden == Some(0) || n == 0 {
            return Err(Error::invalid("model dimensions and n must be positive"));
        }
        let encoder = EncoderParams::init(rng, vocab.len(), arch.embed_dim, arch.hidden_dim);
        let mlp = MlpParams::init(rng, encoder.output_dim(), tags.len(), arch.mlp_hidden);
        Ok(Model {
            strategy,
            label,
            n,
            arch,
            hyper,
            vocab,
            tags,
            encoder,
            mlp,
        })
    }

    /// Assembles a model from stored parts, checking every shape.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        strategy: StrategyKind,
        label: LabelKind,
        n: usize,
        arch: Architecture,
        hyper: Hyperparams,
        vocab: BpeVocabulary,
        tags: TagSet,
        encoder: EncoderParams,
        mlp: MlpParams,
    ) -> Result<Self> {
        encoder.validate()?;
        let expect = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::invalid(format!("inconsistent model: {what}")))
            }
        };
        expect(encoder.vocab_size() == vocab.len(), "embedding rows vs vocabulary")?;
        expect(encoder.embed_dim() == arch.embed_dim, "embedding width")?;
        expect(encoder.hidden_dim() == arch.hidden_dim, "hidden width")?;
        expect(mlp.input_dim() == encoder.output_dim(), "mlp input width")?;
        expect(mlp.num_tags() == tags.len(), "mlp output vs tag set")?;
        expect(
            mlp.hidden.as_ref().map(Linear::d_out) == arch.mlp_hidden,
            "mlp hidden layer",
        )?;
        if let Some(h) = &mlp.hidden {
            expect(mlp.output.d_in() == h.d_out(), "mlp hidden/output widths")?;
        }
        expect(n > 0, "n")?;
        Ok(Model {
            strategy,
            label,
            n,
            arch,
            hyper,
            vocab,
            tags,
            encoder,
            mlp,
        })
    }

    pub fn strategy(&self) -> StrategyKind {
        self.strategy
    }

    pub fn label(&self) -> LabelKind {
        self.label
    }

    /// Hypothesis budget used in training.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn vocab(&self) -> &BpeVocabulary {
        &self.vocab
    }

    pub fn tags(&self) -> &TagSet {
        &self.tags
    }

    pub fn encoder(&self) -> &EncoderParams {
        &self.encoder
    }

    pub fn mlp(&self) -> &MlpParams {
        &self.mlp
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut v = self.encoder.named_tensors();
        v.extend(self.mlp.named_tensors());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.encoder.tensors_mut();
        v.extend(self.mlp.tensors_mut());
        v
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> BoundModel {
        BoundModel {
            encoder: self.encoder.bind(tape),
            mlp: self.mlp.bind(tape),
        }
    }

    /// Token ids for one hypothesis; text that encodes to nothing becomes a
    /// single unknown token.
    pub fn encode_text(&self, text: &str) -> Vec<u32> {
        train::encode_nonempty(&self.vocab, text)
    }

    /// Records the full forward pass and returns the probability node.
    pub fn forward(&self, tape: &mut Tape<'_>, bound: &BoundModel, input: &ModelInput) -> Result<Var> {
        let embedding = match input {
            ModelInput::Sequence(ids) => encode_utterance(tape, &bound.encoder, ids)?,
            ModelInput::Pooled { hypotheses, n, mode } => {
                let rows = hypotheses
                    .iter()
                    .take(*n)
                    .map(|ids| encode_utterance(tape, &bound.encoder, ids))
                    .collect::<Result<Vec<_>>>()?;
                let stacked = stack_and_pad(&rows, *n)?;
                tape.pool(&stacked, *mode)?
            }
        };
        classify_embedding(tape, &bound.mlp, embedding)
    }

    pub fn distribution(&self, input: &ModelInput) -> Result<TagDistribution> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let p = self.forward(&mut tape, &bound, input)?;
        Ok(TagDistribution {
            probs: tape.value(p).data().to_vec(),
        })
    }

    /// Single-text distribution, with empty text mapped to the unknown token.
    pub fn text_distribution(&self, text: &str) -> Result<TagDistribution> {
        self.distribution(&ModelInput::Sequence(self.encode_text(text)))
    }

    /// Pooled distribution over `texts` (already limited to the budget),
    /// stacked to `n` rows.
    pub fn pooled_distribution(&self, texts: &[&str], mode: PoolMode, n: usize) -> Result<TagDistribution> {
        let hypotheses = texts.iter().map(|t| self.encode_text(t)).collect();
        self.distribution(&ModelInput::Pooled { hypotheses, n, mode })
    }

    /// Mean cross-entropy over labelled inputs.
    pub fn mean_loss(&self, examples: &[(ModelInput, usize)]) -> Result<f64> {
        let mut total = 0.0;
        for (input, target) in examples {
            let p = self.distribution(input)?;
            total += crate::nn::cross_entropy(&Tensor::vector(p.probs)?, *target)?;
        }
        Ok(total / examples.len().max(1) as f64)
    }
}

/// Baseline mapping: text → BPE → BiLSTM → `[h_1b, h_mf]` → softmax.
pub fn bm_predict(model: &Model, text: &str) -> Result<Prediction> {
    let ids = model.vocab.encode(text).ids;
    if ids.is_empty() {
        return Err(Error::Empty("bm_predict text"));
    }
    let d = model.distribution(&ModelInput::Sequence(ids))?;
    Ok(Prediction {
        tag: d.argmax(),
        confidence: d.confidence(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mlp(w: Vec<f64>, b: Vec<f64>, tags: usize, d: usize) -> MlpParams {
        MlpParams {
            hidden: None,
            output: Linear {
                weight: Tensor::matrix(tags, d, w).unwrap(),
                bias: Tensor::vector(b).unwrap(),
            },
        }
    }

    #[test]
    fn zero_head_is_uniform() {
        let m = mlp(vec![0.0; 8], vec![0.0; 4], 4, 2);
        let d = m.classify(&[0.3, -1.0]).unwrap();
        assert_eq!(d.probs, vec![0.25; 4]);
        assert!(m.classify(&[1.0]).is_err());
    }

    #[test]
    fn hand_computed_two_tag_case() {
        // logits = [0.5·1 − 1·2 + 0.1, 2·1 + 0.5·2 − 0.3] = [−1.4, 2.7]
        let m = mlp(vec![0.5, -1.0, 2.0, 0.5], vec![0.1, -0.3], 2, 2);
        let d = m.classify(&[1.0, 2.0]).unwrap();
        assert_eq!(d.argmax(), 1);
        let e = (-1.4f64).exp() + 2.7f64.exp();
        assert!((d.probs[1] - 2.7f64.exp() / e).abs() < 1e-12);
    }

    #[test]
    fn bias_shift_leaves_distribution_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = MlpParams::init(&mut rng, 6, 5, None);
        let v: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut shifted = m.clone();
        for b in shifted.output.bias.data_mut() {
            *b += 4.25;
        }
        let a = m.classify(&v).unwrap();
        let b = shifted.classify(&v).unwrap();
        assert!((a.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for (x, y) in a.probs.iter().zip(&b.probs) {
            assert!((x - y).abs() < 1e-12);
        }
        let logits =
            crate::nn::affine_transform(&Tensor::vector(v.clone()).unwrap(), &m.output.weight, &m.output.bias).unwrap();
        assert_eq!(argmax(logits.data()), a.argmax());
    }

    #[test]
    fn hidden_layer_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = MlpParams::init(&mut rng, 6, 3, Some(5));
        assert_eq!(m.input_dim(), 6);
        assert_eq!(m.num_tags(), 3);
        assert_eq!(m.named_tensors().len(), 4);
        let d = m.classify(&[0.1; 6]).unwrap();
        assert!((d.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tag_set_rules() {
        let t = TagSet::from_labels(["b", "a", "b"]).unwrap();
        assert_eq!(t.names(), &["a".to_string(), "b".to_string()]);
        assert_eq!(t.index("b").unwrap(), 1);
        assert!(matches!(t.index("c"), Err(Error::UnknownTag(_))));
        assert!(TagSet::new(vec!["x".into(), "x".into()]).is_err());
        assert!(TagSet::new(vec![]).is_err());
    }

    #[test]
    fn argmax_prefers_first() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    }
}
