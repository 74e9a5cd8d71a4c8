//! Byte-pair embeddings and a single-layer bidirectional LSTM.
//!
//! Both directions start from zero hidden and cell states and own disjoint
//! parameter sets. The utterance embedding is `[h_1b, h_mf]`: the backward
//! state at the first position next to the forward state at the last.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{BoundLinear, Linear, Tape, Tensor, Var};

/// Scale of the uniform initializer for embeddings and weight matrices.
pub const INIT_SCALE: f64 = 0.1;
pub const FORGET_BIAS_INIT: f64 = 1.0;

/// Gate blocks of one LSTM direction; each maps `[x_t, h_prev]` to `d_h`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub input: Linear,
    pub forget: Linear,
    pub output: Linear,
    pub cell: Linear,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundLstm {
    input: BoundLinear,
    forget: BoundLinear,
    output: BoundLinear,
    cell: BoundLinear,
    hidden_dim: usize,
}

impl LstmParams {
    pub fn init<R: Rng>(rng: &mut R, embed_dim: usize, hidden_dim: usize) -> Self {
        let d_in = embed_dim + hidden_dim;
        LstmParams {
            input: Linear::init(rng, hidden_dim, d_in, INIT_SCALE, 0.0),
            forget: Linear::init(rng, hidden_dim, d_in, INIT_SCALE, FORGET_BIAS_INIT),
            output: Linear::init(rng, hidden_dim, d_in, INIT_SCALE, 0.0),
            cell: Linear::init(rng, hidden_dim, d_in, INIT_SCALE, 0.0),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.input.d_out()
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> BoundLstm {
        BoundLstm {
            input: self.input.bind(tape),
            forget: self.forget.bind(tape),
            output: self.output.bind(tape),
            cell: self.cell.bind(tape),
            hidden_dim: self.hidden_dim(),
        }
    }

    fn linears(&self) -> [&Linear; 4] {
        [&self.input, &self.forget, &self.output, &self.cell]
    }

    fn linears_mut(&mut self) -> [&mut Linear; 4] {
        [&mut self.input, &mut self.forget, &mut self.output, &mut self.cell]
    }
}

impl BoundLstm {
    fn vars(&self, out: &mut Vec<Var>) {
        for l in [&self.input, &self.forget, &self.output, &self.cell] {
            out.push(l.weight);
            out.push(l.bias);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    /// `V × d_e` embedding table.
    pub embedding: Tensor,
    pub forward: LstmParams,
    pub backward: LstmParams,
}

/// Tape handles for every encoder parameter.
#[derive(Debug, Clone, Copy)]
pub struct BoundEncoder {
    pub embedding: Var,
    pub forward: BoundLstm,
    pub backward: BoundLstm,
}

impl EncoderParams {
    pub fn init<R: Rng>(rng: &mut R, vocab_size: usize, embed_dim: usize, hidden_dim: usize) -> Self {
        let table = (0..vocab_size * embed_dim)
            .map(|_| rng.gen_range(-INIT_SCALE..=INIT_SCALE))
            .collect();
        EncoderParams {
            embedding: Tensor::from_parts(vec![vocab_size, embed_dim], table),
            forward: LstmParams::init(rng, embed_dim, hidden_dim),
            backward: LstmParams::init(rng, embed_dim, hidden_dim),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.embedding.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.forward.hidden_dim()
    }

    /// Size of the utterance embedding, `2·d_h`.
    pub fn output_dim(&self) -> usize {
        2 * self.hidden_dim()
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> BoundEncoder {
        BoundEncoder {
            embedding: tape.leaf_ref(&self.embedding),
            forward: self.forward.bind(tape),
            backward: self.backward.bind(tape),
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("encoder.embedding".to_string(), &self.embedding)];
        for (dir, lstm) in [("forward", &self.forward), ("backward", &self.backward)] {
            for (gate, l) in ["input", "forget", "output", "cell"].iter().zip(lstm.linears()) {
                out.push((format!("encoder.{dir}.{gate}.weight"), &l.weight));
                out.push((format!("encoder.{dir}.{gate}.bias"), &l.bias));
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.embedding];
        for lstm in [&mut self.forward, &mut self.backward] {
            for l in lstm.linears_mut() {
                out.push(&mut l.weight);
                out.push(&mut l.bias);
            }
        }
        out
    }

    /// Checks the gate shapes against the embedding table.
    pub fn validate(&self) -> Result<()> {
        if self.embedding.shape().len() != 2 {
            return Err(Error::invalid("embedding must be a matrix"));
        }
        let (d_e, d_h) = (self.embed_dim(), self.hidden_dim());
        for lstm in [&self.forward, &self.backward] {
            for l in lstm.linears() {
                if l.weight.shape() != [d_h, d_e + d_h] || l.bias.shape() != [d_h] {
                    return Err(Error::Dimension {
                        op: "encoder gate",
                        left: l.weight.shape().to_vec(),
                        right: vec![d_h, d_e + d_h],
                    });
                }
            }
        }
        Ok(())
    }
}

impl BoundEncoder {
    /// Parameter handles in the same order as [`EncoderParams::named_tensors`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out = vec![self.embedding];
        self.forward.vars(&mut out);
        self.backward.vars(&mut out);
        out
    }
}

/// Per-position forward and backward hidden states.
#[derive(Debug, Clone)]
pub struct HiddenStateSequence {
    pub forward: Vec<Var>,
    pub backward: Vec<Var>,
}

impl HiddenStateSequence {
    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }
}

pub fn embed_ids(tape: &mut Tape<'_>, enc: &BoundEncoder, ids: &[u32]) -> Result<Vec<Var>> {
    ids.iter().map(|&id| tape.gather(enc.embedding, id as usize)).collect()
}

/// One gated update: returns `(h_t, c_t)`.
pub fn lstm_step(tape: &mut Tape<'_>, lstm: &BoundLstm, x: Var, h_prev: Var, c_prev: Var) -> Result<(Var, Var)> {
    let z = tape.concat(&[x, h_prev])?;
    let i = lstm.input.apply(tape, z)?;
    let i = tape.sigmoid(i);
    let f = lstm.forget.apply(tape, z)?;
    let f = tape.sigmoid(f);
    let o = lstm.output.apply(tape, z)?;
    let o = tape.sigmoid(o);
    let g = lstm.cell.apply(tape, z)?;
    let g = tape.tanh(g);
    let kept = tape.mul(f, c_prev)?;
    let written = tape.mul(i, g)?;
    let c = tape.add(kept, written)?;
    let squashed = tape.tanh(c);
    let h = tape.mul(o, squashed)?;
    Ok((h, c))
}

/// Runs one direction over `inputs` in the order given, from zero state.
pub fn run_direction(tape: &mut Tape<'_>, lstm: &BoundLstm, inputs: &[Var]) -> Result<Vec<Var>> {
    let mut h = tape.leaf(Tensor::zeros(vec![lstm.hidden_dim]));
    let mut c = tape.leaf(Tensor::zeros(vec![lstm.hidden_dim]));
    let mut states = Vec::with_capacity(inputs.len());
    for &x in inputs {
        (h, c) = lstm_step(tape, lstm, x, h, c)?;
        states.push(h);
    }
    Ok(states)
}

pub fn bilstm_encode(tape: &mut Tape<'_>, enc: &BoundEncoder, ids: &[u32]) -> Result<HiddenStateSequence> {
    if ids.is_empty() {
        return Err(Error::Empty("bilstm_encode"));
    }
    let inputs = embed_ids(tape, enc, ids)?;
    let forward = run_direction(tape, &enc.forward, &inputs)?;
    let reversed: Vec<Var> = inputs.iter().rev().copied().collect();
    let mut backward = run_direction(tape, &enc.backward, &reversed)?;
    backward.reverse();
    Ok(HiddenStateSequence { forward, backward })
}

/// `[h_1b, h_mf]`.
pub fn utterance_output_vector(tape: &mut Tape<'_>, states: &HiddenStateSequence) -> Result<Var> {
    let (Some(&first_b), Some(&last_f)) = (states.backward.first(), states.forward.last()) else {
        return Err(Error::Empty("utterance_output_vector"));
    };
    tape.concat(&[first_b, last_f])
}

/// Embedding of one id sequence, start to finish.
pub fn encode_utterance(tape: &mut Tape<'_>, enc: &BoundEncoder, ids: &[u32]) -> Result<Var> {
    let states = bilstm_encode(tape, enc, ids)?;
    utterance_output_vector(tape, &states)
}
