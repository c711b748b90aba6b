//! ASR sub-network: a speech encoder over frame matrices and an
//! autoregressive token decoder that cross-attends to the encoder output.
//!
//! The decoder state `h_l` at step `l` is computed from the speech states and
//! the prefix `BOS w_1 … w_{l−1}`; it predicts `w_l`. The sequence of these
//! states is the hidden trace consumed by the NLU sub-network.

mod beam;

pub use beam::{beam_search, greedy_decode, BeamConfig, Hypothesis, StepScorer};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tagging::{words_from_subtokens, Vocab};
use crate::tensorcore::layers::{add_positional, BlockConfig, Embedding, Linear, TransformerStack};
use crate::tensorcore::math::log_softmax;
use crate::tensorcore::{AttentionMask, Graph, ParamStore, Shape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeechEncoderConfig {
    pub frame_dim: usize,
    pub blocks: BlockConfig,
    /// Disabling makes the encoder permutation-equivariant over frames.
    pub positional: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub blocks: BlockConfig,
    pub vocab_size: usize,
    /// Longest decoder input (BOS plus generated tokens before the last).
    pub max_len: usize,
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        self.blocks.validate()?;
        if self.max_len < 2 {
            return Err(Error::Config(format!("max decode length {} is below 2", self.max_len)));
        }
        if self.vocab_size < 3 {
            return Err(Error::Config(format!("vocabulary of {} tokens is too small", self.vocab_size)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SpeechEncoder {
    pub input: Linear,
    pub stack: TransformerStack,
    pub cfg: SpeechEncoderConfig,
}

impl SpeechEncoder {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &SpeechEncoderConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.blocks.validate()?;
        if cfg.frame_dim == 0 {
            return Err(Error::Config("frame dimension must be positive".into()));
        }
        Ok(SpeechEncoder {
            input: Linear::new(store, &format!("{name}.input"), cfg.frame_dim, cfg.blocks.dm, rng)?,
            stack: TransformerStack::new(store, &format!("{name}.blocks"), &cfg.blocks, false, rng)?,
            cfg: cfg.clone(),
        })
    }

    /// `T × d` frames to `T × dm` states.
    pub fn forward(&self, g: &mut Graph, frames: Tensor) -> Result<Tensor> {
        if frames.rows() == 0 {
            return Err(Error::Validation("speech input has no frames".into()));
        }
        if frames.cols() != self.cfg.frame_dim {
            return Err(Error::Dimension(format!(
                "frames of width {} for an encoder expecting {}",
                frames.cols(),
                self.cfg.frame_dim
            )));
        }
        if g.data(frames).iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("speech input contains non-finite values".into()));
        }
        let mut x = self.input.forward(g, frames)?;
        if self.cfg.positional {
            x = add_positional(g, x)?;
        }
        self.stack.forward(g, x, None, None)
    }
}

/// Causal transformer decoder with cross-attention to a memory sequence and
/// an output projection over a token vocabulary.
#[derive(Clone, Debug)]
pub struct TokenDecoder {
    pub embed: Embedding,
    pub stack: TransformerStack,
    pub output: Linear,
    pub cfg: DecoderConfig,
}

/// States and loss of a teacher-forced pass.
#[derive(Clone, Copy, Debug)]
pub struct TeacherForced {
    /// One row per predicted target token (including the final EOS).
    pub states: Tensor,
    pub loss: Tensor,
}

impl TokenDecoder {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &DecoderConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let dm = cfg.blocks.dm;
        Ok(TokenDecoder {
            embed: Embedding::new(store, &format!("{name}.embed"), cfg.vocab_size, dm, rng)?,
            stack: TransformerStack::new(store, &format!("{name}.blocks"), &cfg.blocks, true, rng)?,
            output: Linear::new(store, &format!("{name}.output"), dm, cfg.vocab_size, rng)?,
            cfg: cfg.clone(),
        })
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        match tokens.iter().find(|&&t| t >= self.cfg.vocab_size) {
            Some(t) => Err(Error::Vocabulary(format!(
                "token id {t} outside vocabulary of {}",
                self.cfg.vocab_size
            ))),
            None => Ok(()),
        }
    }

    /// Decoder states for every position of `inputs`; row `i` sees
    /// `inputs[..=i]` and the whole memory.
    pub fn states(&self, g: &mut Graph, memory: Tensor, inputs: &[usize]) -> Result<Tensor> {
        if inputs.is_empty() {
            return Err(Error::Validation("decoder prefix is empty".into()));
        }
        if inputs.len() > self.cfg.max_len {
            return Err(Error::Length(format!(
                "decoder input of {} tokens exceeds the maximum {}",
                inputs.len(),
                self.cfg.max_len
            )));
        }
        self.check_tokens(inputs)?;
        let x = self.embed.forward(g, inputs)?;
        let x = add_positional(g, x)?;
        let mask = AttentionMask::causal(inputs.len());
        self.stack.forward(g, x, Some(&mask), Some(memory))
    }

    pub fn logits(&self, g: &mut Graph, states: Tensor) -> Result<Tensor> {
        self.output.forward(g, states)
    }

    /// `target` is `BOS … EOS`; the loss is the mean cross-entropy of
    /// predicting `target[1..]` from its prefixes.
    pub fn teacher_forced(&self, g: &mut Graph, memory: Tensor, target: &[usize]) -> Result<TeacherForced> {
        if target.len() < 2 {
            return Err(Error::Validation("teacher-forcing target needs BOS and EOS".into()));
        }
        self.check_tokens(target)?;
        let states = self.states(g, memory, &target[..target.len() - 1])?;
        let logits = self.logits(g, states)?;
        let loss = g.softmax_cross_entropy(logits, &target[1..], None)?;
        Ok(TeacherForced { states, loss })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsrConfig {
    pub encoder: SpeechEncoderConfig,
    pub decoder: DecoderConfig,
}

impl AsrConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.blocks.validate()?;
        self.decoder.validate()?;
        if self.encoder.blocks.dm != self.decoder.blocks.dm {
            return Err(Error::Config(format!(
                "encoder width {} differs from decoder width {}",
                self.encoder.blocks.dm, self.decoder.blocks.dm
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct AsrSubnet {
    pub encoder: SpeechEncoder,
    pub decoder: TokenDecoder,
}

impl AsrSubnet {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &AsrConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        Ok(AsrSubnet {
            encoder: SpeechEncoder::new(store, &format!("{name}.encoder"), &cfg.encoder, rng)?,
            decoder: TokenDecoder::new(store, &format!("{name}.decoder"), &cfg.decoder, rng)?,
        })
    }

    pub fn dm(&self) -> usize {
        self.encoder.cfg.blocks.dm
    }

    pub fn encode_speech(&self, g: &mut Graph, frames: Tensor) -> Result<Tensor> {
        self.encoder.forward(g, frames)
    }

    /// Hidden state and log-probabilities for the next token after `prefix`.
    pub fn decode_step(&self, g: &mut Graph, h_e: Tensor, prefix: &[usize]) -> Result<(Tensor, Tensor)> {
        let states = self.decoder.states(g, h_e, prefix)?;
        let last = g.slice_rows(states, prefix.len() - 1, 1)?;
        let logits = self.decoder.logits(g, last)?;
        Ok((last, g.log_softmax(logits)))
    }

    pub fn teacher_forced_nll(&self, g: &mut Graph, h_e: Tensor, target: &[usize]) -> Result<Tensor> {
        Ok(self.decoder.teacher_forced(g, h_e, target)?.loss)
    }

    /// Speech states as plain values (inference, dropout off).
    pub fn encode_values(&self, store: &ParamStore, frames: &[f64], frame_dim: usize) -> Result<EncodedSpeech> {
        if frames.is_empty() {
            return Err(Error::Validation("speech input has no frames".into()));
        }
        if frame_dim == 0 || frames.len() % frame_dim != 0 {
            return Err(Error::Dimension(format!(
                "{} frame values do not form rows of {frame_dim}",
                frames.len()
            )));
        }
        let mut g = Graph::with_params(store);
        let x = g.input(Shape::new(frames.len() / frame_dim, frame_dim), frames.to_vec())?;
        let h = self.encode_speech(&mut g, x)?;
        Ok(EncodedSpeech {
            rows: h.rows(),
            dm: h.cols(),
            data: g.data(h).to_vec(),
        })
    }
}

/// Encoder output kept outside any graph.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSpeech {
    pub rows: usize,
    pub dm: usize,
    pub data: Vec<f64>,
}

impl EncodedSpeech {
    pub fn to_graph(&self, g: &mut Graph) -> Result<Tensor> {
        g.input(Shape::new(self.rows, self.dm), self.data.clone())
    }
}

/// Step scorer running a [`TokenDecoder`] over a fixed memory.
pub struct DecoderScorer<'a> {
    pub store: &'a ParamStore,
    pub decoder: &'a TokenDecoder,
    pub memory: &'a EncodedSpeech,
    pub bos: usize,
    pub eos: usize,
}

impl StepScorer for DecoderScorer<'_> {
    fn vocab_size(&self) -> usize {
        self.decoder.cfg.vocab_size
    }

    fn max_len(&self) -> usize {
        self.decoder.cfg.max_len
    }

    fn bos(&self) -> usize {
        self.bos
    }

    fn eos(&self) -> usize {
        self.eos
    }

    fn step(&self, prefix: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut g = Graph::with_params(self.store);
        let mem = self.memory.to_graph(&mut g)?;
        let states = self.decoder.states(&mut g, mem, prefix)?;
        let hidden = g.row(states, prefix.len() - 1).to_vec();
        let last = g.slice_rows(states, prefix.len() - 1, 1)?;
        let logits = self.decoder.logits(&mut g, last)?;
        Ok((hidden, log_softmax(g.data(logits))))
    }
}

/// Teacher-forced hidden trace for `tokens` (without BOS): entry `i` is the
/// state computed from `BOS tokens[..i]`, exactly as beam search records it.
pub fn force_decode(
    store: &ParamStore,
    decoder: &TokenDecoder,
    memory: &EncodedSpeech,
    bos: usize,
    tokens: &[usize],
) -> Result<Vec<Vec<f64>>> {
    if tokens.is_empty() {
        return Err(Error::Validation("cannot force-decode an empty transcript".into()));
    }
    decoder.check_tokens(tokens)?;
    let mut inputs = Vec::with_capacity(tokens.len());
    inputs.push(bos);
    inputs.extend_from_slice(&tokens[..tokens.len() - 1]);
    let mut g = Graph::with_params(store);
    let mem = memory.to_graph(&mut g)?;
    let states = decoder.states(&mut g, mem, &inputs)?;
    Ok((0..tokens.len()).map(|i| g.row(states, i).to_vec()).collect())
}

/// One line of a decode dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeRecord {
    pub id: String,
    pub tokens: Vec<usize>,
    pub text: String,
    pub log_prob: f64,
    pub entropies: Vec<f64>,
}

impl DecodeRecord {
    pub fn from_hypothesis(id: &str, hyp: &Hypothesis, vocab: &Vocab) -> Result<Self> {
        let pieces = vocab.decode(hyp.output_tokens(vocab.eos()))?;
        Ok(DecodeRecord {
            id: id.to_string(),
            tokens: hyp.tokens.clone(),
            text: words_from_subtokens(&pieces).join(" "),
            log_prob: hyp.log_prob,
            entropies: hyp.entropies.clone(),
        })
    }
}
