use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, Prediction, Prepared, Source, Task, Trained};
use crate::asr::{AsrSubnet, BeamConfig, DecoderScorer, EncodedSpeech, Hypothesis, TokenDecoder};
use crate::error::Result;
use crate::tagging::{is_marker, parse_enriched_sequence, CONTINUATION};
use crate::tensorcore::layers::TransformerStack;
use crate::tensorcore::{Graph, ParamStore, Shape, Tensor};

/// Joins continuation subtokens onto the preceding word. A continuation
/// right after a marker (or at the start) begins a new word.
pub fn enriched_words<S: AsRef<str>>(tokens: &[S]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut joinable = false;
    for t in tokens {
        let t = t.as_ref();
        if is_marker(t) {
            out.push(t.to_string());
            joinable = false;
        } else if let Some(rest) = t.strip_prefix(CONTINUATION) {
            if joinable {
                out.last_mut().unwrap().push_str(rest);
            } else {
                out.push(rest.to_string());
                joinable = true;
            }
        } else {
            out.push(t.to_string());
            joinable = true;
        }
    }
    out
}

/// Parses a generated enriched token sequence into a prediction.
fn parse_output(trained: &Trained, id: &str, hyp: &Hypothesis, source: Source) -> Result<Prediction> {
    let tokens = hyp.output_tokens(trained.task.vocab.eos());
    let pieces = trained.task.vocab.decode(tokens)?;
    let parse = parse_enriched_sequence(&enriched_words(&pieces));
    Ok(Prediction {
        id: id.to_string(),
        subtokens: pieces.into_iter().filter(|p| !is_marker(p)).collect(),
        empty_output: parse.words.is_empty(),
        words: parse.words,
        spans: parse.spans,
        log_likelihood: hyp.log_prob,
        source,
        repaired: parse.malformed,
    })
}

fn best(trained: &Trained, decoder: &TokenDecoder, memory: &EncodedSpeech, beam: BeamConfig) -> Result<Hypothesis> {
    let scorer = DecoderScorer {
        store: &trained.store,
        decoder,
        memory,
        bos: trained.task.vocab.bos(),
        eos: trained.task.vocab.eos(),
    };
    trained.beam(&scorer, beam)
}

/// One encoder-decoder from speech frames to the enriched transcript.
#[derive(Clone, Debug)]
pub struct DirectNet {
    pub seq2seq: AsrSubnet,
}

impl DirectNet {
    pub fn new(store: &mut ParamStore, model: &ModelConfig, task: &Task, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(DirectNet {
            seq2seq: AsrSubnet::new(store, "direct", &model.asr(task.frame_dim, task.vocab.len()), rng)?,
        })
    }

    pub(super) fn loss(&self, g: &mut Graph, ex: &Prepared, frame_dim: usize) -> Result<Tensor> {
        let x = ex.frames(g, frame_dim)?;
        let h_e = self.seq2seq.encode_speech(g, x)?;
        Ok(self.seq2seq.decoder.teacher_forced(g, h_e, &ex.enriched)?.loss)
    }

    pub fn encode_values(&self, store: &ParamStore, frames: &[f64], frame_dim: usize) -> Result<EncodedSpeech> {
        self.seq2seq.encode_values(store, frames, frame_dim)
    }

    pub(super) fn predict(&self, trained: &Trained, id: &str, enc: &EncodedSpeech, beam: BeamConfig) -> Result<Prediction> {
        let hyp = best(trained, &self.seq2seq.decoder, enc, beam)?;
        parse_output(trained, id, &hyp, Source::Beam)
    }
}

/// The compositional ASR sub-network followed by an encoder-decoder that
/// generates the enriched transcript from the decoder states.
#[derive(Clone, Debug)]
pub struct CompositionalDirectNet {
    pub asr: AsrSubnet,
    pub nlu: TransformerStack,
    pub generator: TokenDecoder,
    pub speech_attention: bool,
}

impl CompositionalDirectNet {
    pub fn new(store: &mut ParamStore, model: &ModelConfig, task: &Task, rng: &mut ChaCha8Rng) -> Result<Self> {
        let asr = AsrSubnet::new(store, "asr", &model.asr(task.frame_dim, task.vocab.len()), rng)?;
        let nlu = TransformerStack::new(
            store,
            "nlu.blocks",
            &model.blocks(model.nlu_layers),
            model.speech_attention,
            rng,
        )?;
        let generator = TokenDecoder::new(store, "nlu.generator", &model.decoder(task.vocab.len()), rng)?;
        Ok(CompositionalDirectNet {
            asr,
            nlu,
            generator,
            speech_attention: model.speech_attention,
        })
    }

    fn encode_nlu(&self, g: &mut Graph, h_asr: Tensor, h_e: Tensor) -> Result<Tensor> {
        let memory = self.speech_attention.then_some(h_e);
        self.nlu.forward(g, h_asr, None, memory)
    }

    pub(super) fn loss(&self, g: &mut Graph, ex: &Prepared, frame_dim: usize, alpha: f64) -> Result<Tensor> {
        let x = ex.frames(g, frame_dim)?;
        let h_e = self.asr.encode_speech(g, x)?;
        let tf = self.asr.decoder.teacher_forced(g, h_e, &ex.transcript)?;
        let h_asr = g.slice_rows(tf.states, 0, ex.n_subtokens())?;
        let h_nlu = self.encode_nlu(g, h_asr, h_e)?;
        let gen = self.generator.teacher_forced(g, h_nlu, &ex.enriched)?;
        let weighted = g.scale(gen.loss, alpha);
        g.add(tf.loss, weighted)
    }

    pub(super) fn label(
        &self,
        trained: &Trained,
        id: &str,
        enc: &EncodedSpeech,
        trace: &[Vec<f64>],
        source: Source,
        beam: BeamConfig,
    ) -> Result<Prediction> {
        let h_nlu = {
            let mut g = Graph::with_params(&trained.store);
            let h_asr = g.input(Shape::new(trace.len(), self.asr.dm()), trace.concat())?;
            let h_e = enc.to_graph(&mut g)?;
            let h = self.encode_nlu(&mut g, h_asr, h_e)?;
            EncodedSpeech {
                rows: h.rows(),
                dm: h.cols(),
                data: g.data(h).to_vec(),
            }
        };
        let hyp = best(trained, &self.generator, &h_nlu, beam)?;
        parse_output(trained, id, &hyp, source)
    }
}
