use rand_chacha::ChaCha8Rng;

use super::{train_loop, ModelConfig, Prepared, Task, TrainConfig};
use crate::asr::AsrSubnet;
use crate::error::Result;
use crate::nlu::{NluConfig, NluSubnet};
use crate::tensorcore::layers::{add_positional, Embedding};
use crate::tensorcore::optim::Adam;
use crate::tensorcore::{Graph, ParamStore, Tensor};

/// Separately trained recognizer and text-only tagger. The tagger sees
/// token embeddings of the transcript and nothing of the speech.
#[derive(Clone, Debug)]
pub struct CascadedNet {
    pub asr: AsrSubnet,
    pub embed: Embedding,
    pub nlu: NluSubnet,
    /// Parameters with a smaller index belong to the recognizer.
    asr_params: usize,
}

impl CascadedNet {
    pub fn new(store: &mut ParamStore, model: &ModelConfig, task: &Task, rng: &mut ChaCha8Rng) -> Result<Self> {
        let asr = AsrSubnet::new(store, "asr", &model.asr(task.frame_dim, task.vocab.len()), rng)?;
        let asr_params = store.len();
        let embed = Embedding::new(store, "text.embed", task.vocab.len(), model.dm, rng)?;
        let nlu_cfg = NluConfig {
            blocks: model.blocks(model.nlu_layers),
            speech_attention: false,
            head: model.head,
            num_tags: task.num_tags(),
        };
        let nlu = NluSubnet::new(store, "text.nlu", &nlu_cfg, rng)?;
        Ok(CascadedNet {
            asr,
            embed,
            nlu,
            asr_params,
        })
    }

    fn text_states(&self, g: &mut Graph, tokens: &[usize]) -> Result<Tensor> {
        let x = self.embed.forward(g, tokens)?;
        let x = add_positional(g, x)?;
        self.nlu.encode(g, x, None)
    }

    /// Trains the recognizer, then the tagger on gold transcripts, each for
    /// the full step budget with the other half frozen. Returns the
    /// recognizer's losses followed by the tagger's.
    pub(super) fn fit(
        &self,
        store: &mut ParamStore,
        cfg: &TrainConfig,
        data: &[Prepared],
        frame_dim: usize,
    ) -> Result<Vec<f64>> {
        let ids: Vec<_> = store.ids().collect();
        let mut adam = Adam::new(cfg.optim.clone(), store)?;
        for &id in &ids[self.asr_params..] {
            adam.freeze(id);
        }
        let mut losses = train_loop(store, &mut adam, cfg, data.len(), 0, |g, i| {
            let x = data[i].frames(g, frame_dim)?;
            let h_e = self.asr.encode_speech(g, x)?;
            Ok(self.asr.decoder.teacher_forced(g, h_e, &data[i].transcript)?.loss)
        })?;
        let mut adam = Adam::new(cfg.optim.clone(), store)?;
        for &id in &ids[..self.asr_params] {
            adam.freeze(id);
        }
        losses.extend(train_loop(store, &mut adam, cfg, data.len(), 1, |g, i| {
            let ex = &data[i];
            let h = self.text_states(g, &ex.transcript[1..ex.transcript.len() - 1])?;
            self.nlu.head_loss(g, h, &ex.tags)
        })?);
        Ok(losses)
    }

    pub fn tag(&self, store: &ParamStore, tokens: &[usize]) -> Result<(Vec<usize>, f64)> {
        let mut g = Graph::with_params(store);
        let h = self.text_states(&mut g, tokens)?;
        self.nlu.head_decode(store, &mut g, h)
    }
}
