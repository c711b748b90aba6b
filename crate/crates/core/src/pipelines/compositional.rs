use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, Prepared, Task};
use crate::asr::{AsrSubnet, EncodedSpeech};
use crate::error::Result;
use crate::nlu::{NluConfig, NluSubnet};
use crate::tensorcore::{Graph, ParamStore, Shape, Tensor};

/// ASR sub-network composed with a tagging NLU sub-network through the
/// decoder hidden states.
#[derive(Clone, Debug)]
pub struct CompositionalNet {
    pub asr: AsrSubnet,
    pub nlu: NluSubnet,
}

impl CompositionalNet {
    /// ASR parameters are registered (and drawn from `rng`) before the NLU
    /// ones, so the ASR initialization matches an ASR-only model.
    pub fn new(store: &mut ParamStore, model: &ModelConfig, task: &Task, rng: &mut ChaCha8Rng) -> Result<Self> {
        let asr = AsrSubnet::new(store, "asr", &model.asr(task.frame_dim, task.vocab.len()), rng)?;
        let nlu_cfg = NluConfig {
            blocks: model.blocks(model.nlu_layers),
            speech_attention: model.speech_attention,
            head: model.head,
            num_tags: task.num_tags(),
        };
        let nlu = NluSubnet::new(store, "nlu", &nlu_cfg, rng)?;
        Ok(CompositionalNet { asr, nlu })
    }

    /// `L_asr + α·L_nlu` with the decoder teacher-forced on the gold
    /// transcript. The NLU reads the states that predicted each subtoken.
    pub(super) fn loss(&self, g: &mut Graph, ex: &Prepared, frame_dim: usize, alpha: f64) -> Result<Tensor> {
        let x = ex.frames(g, frame_dim)?;
        let h_e = self.asr.encode_speech(g, x)?;
        let tf = self.asr.decoder.teacher_forced(g, h_e, &ex.transcript)?;
        let h_asr = g.slice_rows(tf.states, 0, ex.n_subtokens())?;
        let h_nlu = self.nlu.encode(g, h_asr, Some(h_e))?;
        let nlu_loss = self.nlu.head_loss(g, h_nlu, &ex.tags)?;
        let weighted = g.scale(nlu_loss, alpha);
        g.add(tf.loss, weighted)
    }

    /// Tag indices and their log-likelihood for one decoder-state trace.
    pub fn tag(&self, store: &ParamStore, enc: &EncodedSpeech, trace: &[Vec<f64>]) -> Result<(Vec<usize>, f64)> {
        let mut g = Graph::with_params(store);
        let h_asr = g.input(Shape::new(trace.len(), self.asr.dm()), trace.concat())?;
        let h_e = enc.to_graph(&mut g)?;
        let h_nlu = self.nlu.encode(&mut g, h_asr, Some(h_e))?;
        self.nlu.head_decode(store, &mut g, h_nlu)
    }
}
