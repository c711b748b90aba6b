//! NLU sub-network: a transformer encoder over decoder states, optionally
//! cross-attending to speech states, with a CRF or per-position softmax head
//! over the subtoken tag set.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::crf::{self, CrfParams, CrfWeights};
use crate::error::{Error, Result};
use crate::tensorcore::layers::{BlockConfig, Linear, TransformerStack};
use crate::tensorcore::math::{argmax, log_softmax};
use crate::tensorcore::{Graph, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    Crf,
    Token,
}

impl std::str::FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "crf" => Ok(HeadKind::Crf),
            "token" => Ok(HeadKind::Token),
            other => Err(Error::Config(format!("unknown head kind {other:?} (expected crf or token)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NluConfig {
    pub blocks: BlockConfig,
    pub speech_attention: bool,
    pub head: HeadKind,
    /// Size of the subtoken tag set, `2L + 2`.
    pub num_tags: usize,
}

#[derive(Clone, Debug)]
pub struct NluSubnet {
    pub stack: TransformerStack,
    pub emission: Linear,
    pub crf: Option<CrfParams>,
    pub cfg: NluConfig,
}

impl NluSubnet {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &NluConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        if cfg.num_tags < 2 {
            return Err(Error::Config(format!("{} tags are too few to classify", cfg.num_tags)));
        }
        let stack = TransformerStack::new(store, &format!("{name}.blocks"), &cfg.blocks, cfg.speech_attention, rng)?;
        let emission = Linear::new(store, &format!("{name}.emission"), cfg.blocks.dm, cfg.num_tags, rng)?;
        let crf = match cfg.head {
            HeadKind::Crf => Some(CrfParams::new(store, &format!("{name}.crf"), cfg.num_tags, rng)?),
            HeadKind::Token => None,
        };
        Ok(NluSubnet {
            stack,
            emission,
            crf,
            cfg: cfg.clone(),
        })
    }

    /// One output row per input state. `h_e` is ignored when speech
    /// attention is off.
    pub fn encode(&self, g: &mut Graph, h_asr: Tensor, h_e: Option<Tensor>) -> Result<Tensor> {
        if h_asr.rows() == 0 {
            return Err(Error::Validation("NLU input has no positions".into()));
        }
        let memory = if self.cfg.speech_attention {
            Some(h_e.ok_or_else(|| Error::Config("speech attention is on but no speech states were given".into()))?)
        } else {
            None
        };
        self.stack.forward(g, h_asr, None, memory)
    }

    pub fn emissions(&self, g: &mut Graph, h_nlu: Tensor) -> Result<Tensor> {
        self.emission.forward(g, h_nlu)
    }

    /// CRF negative log-likelihood, or mean per-position cross-entropy.
    pub fn head_loss(&self, g: &mut Graph, h_nlu: Tensor, gold: &[usize]) -> Result<Tensor> {
        if gold.len() != h_nlu.rows() {
            return Err(Error::Alignment(format!(
                "{} gold tags for {} positions",
                gold.len(),
                h_nlu.rows()
            )));
        }
        let em = self.emissions(g, h_nlu)?;
        match &self.crf {
            Some(p) => {
                let t = p.tensors(g);
                crf::nll_loss(g, em, &t, gold)
            }
            None => g.softmax_cross_entropy(em, gold, None),
        }
    }

    pub fn crf_weights(&self, store: &ParamStore) -> Option<CrfWeights> {
        self.crf.as_ref().map(|p| p.weights(store))
    }

    /// Best tag sequence and its log-likelihood from row-major emissions.
    pub fn decode_emissions(&self, store: &ParamStore, em: &[f64]) -> Result<(Vec<usize>, f64)> {
        match self.crf_weights(store) {
            Some(w) => crf_head_decode(&w, em),
            None => token_head_decode(em, self.cfg.num_tags),
        }
    }

    pub fn head_decode(&self, store: &ParamStore, g: &mut Graph, h_nlu: Tensor) -> Result<(Vec<usize>, f64)> {
        let em = self.emissions(g, h_nlu)?;
        self.decode_emissions(store, g.data(em))
    }
}

pub fn crf_head_decode(w: &CrfWeights, em: &[f64]) -> Result<(Vec<usize>, f64)> {
    let (path, _) = w.viterbi_decode(em)?;
    let ll = w.sequence_log_likelihood(em, &path);
    Ok((path, ll))
}

/// Per-position argmax; the log-likelihood sums the chosen tags' log-softmax.
pub fn token_head_decode(em: &[f64], num_tags: usize) -> Result<(Vec<usize>, f64)> {
    if em.is_empty() || num_tags == 0 || em.len() % num_tags != 0 {
        return Err(Error::Dimension(format!(
            "{} emission values do not form rows of {num_tags} tags",
            em.len()
        )));
    }
    let mut tags = Vec::with_capacity(em.len() / num_tags);
    let mut ll = 0.0;
    for row in em.chunks(num_tags) {
        let lp = log_softmax(row);
        let t = argmax(&lp);
        ll += lp[t];
        tags.push(t);
    }
    Ok((tags, ll.min(0.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asr::{AsrConfig, AsrSubnet, DecoderConfig, SpeechEncoderConfig};
    use crate::tensorcore::math::logsumexp;
    use crate::tensorcore::testutil::{max_param_grad_error, random_values};
    use crate::tensorcore::{seeded_rng, Shape};

    fn blocks(dm: usize) -> BlockConfig {
        BlockConfig {
            layers: 1,
            dm,
            heads: 2,
            ff_dim: 2 * dm,
            dropout: 0.0,
        }
    }

    fn nlu(head: HeadKind, speech: bool, tags: usize, seed: u64) -> (ParamStore, NluSubnet) {
        let cfg = NluConfig {
            blocks: blocks(4),
            speech_attention: speech,
            head,
            num_tags: tags,
        };
        let mut store = ParamStore::new();
        let n = NluSubnet::new(&mut store, "nlu", &cfg, &mut seeded_rng(seed)).unwrap();
        (store, n)
    }

    fn input(g: &mut Graph, rows: usize, seed: u64) -> Tensor {
        g.input(Shape::new(rows, 4), random_values(seed, rows * 4)).unwrap()
    }

    #[test]
    fn speech_attention_off_ignores_speech_states() {
        let (store, n) = nlu(HeadKind::Crf, false, 6, 1);
        let mut g = Graph::with_params(&store);
        let h = input(&mut g, 3, 2);
        let a = input(&mut g, 5, 3);
        let b = input(&mut g, 7, 4);
        let out_a = n.encode(&mut g, h, Some(a)).unwrap();
        let out_b = n.encode(&mut g, h, Some(b)).unwrap();
        let out_none = n.encode(&mut g, h, None).unwrap();
        assert_eq!(out_a.shape(), Shape::new(3, 4));
        assert_eq!(g.data(out_a), g.data(out_b));
        assert_eq!(g.data(out_a), g.data(out_none));
    }

    #[test]
    fn speech_attention_on_requires_and_uses_speech_states() {
        let (store, n) = nlu(HeadKind::Crf, true, 6, 1);
        let mut g = Graph::with_params(&store);
        let h = input(&mut g, 3, 2);
        assert!(matches!(n.encode(&mut g, h, None), Err(Error::Config(_))));
        let a = input(&mut g, 5, 3);
        let b = input(&mut g, 5, 4);
        let out_a = n.encode(&mut g, h, Some(a)).unwrap();
        let out_b = n.encode(&mut g, h, Some(b)).unwrap();
        assert_ne!(g.data(out_a), g.data(out_b));
    }

    /// Sum of absolute NLU-loss gradients on speech-encoder parameters when
    /// the decoder-state input is replaced by constants.
    fn speech_encoder_grad(speech: bool) -> f64 {
        let mut store = ParamStore::new();
        let mut rng = seeded_rng(5);
        let asr = AsrSubnet::new(
            &mut store,
            "asr",
            &AsrConfig {
                encoder: SpeechEncoderConfig {
                    frame_dim: 3,
                    blocks: blocks(4),
                    positional: true,
                },
                decoder: DecoderConfig {
                    blocks: blocks(4),
                    vocab_size: 5,
                    max_len: 6,
                },
            },
            &mut rng,
        )
        .unwrap();
        let cfg = NluConfig {
            blocks: blocks(4),
            speech_attention: speech,
            head: HeadKind::Crf,
            num_tags: 4,
        };
        let n = NluSubnet::new(&mut store, "nlu", &cfg, &mut rng).unwrap();
        let mut g = Graph::with_params(&store);
        let x = g.input(Shape::new(4, 3), random_values(6, 12)).unwrap();
        let h_e = asr.encode_speech(&mut g, x).unwrap();
        let h_asr = g.constant(Shape::new(3, 4), 0.5);
        let h = n.encode(&mut g, h_asr, Some(h_e)).unwrap();
        let loss = n.head_loss(&mut g, h, &[1, 2, 0]).unwrap();
        g.backward(loss).unwrap();
        store
            .iter()
            .filter(|(_, p)| p.name.starts_with("asr.encoder"))
            .map(|(id, _)| g.param_grad(id).map_or(0.0, |gr| gr.iter().map(|v| v.abs()).sum()))
            .sum()
    }

    #[test]
    fn speech_gradient_path_exists_only_with_attention() {
        assert!(speech_encoder_grad(true) > 1e-8);
        assert_eq!(speech_encoder_grad(false), 0.0);
    }

    #[test]
    fn token_head_uniform_logits_give_log_tag_count() {
        let (mut store, n) = nlu(HeadKind::Token, false, 6, 1);
        let w = n.emission.weight;
        store.get_mut(w).data.iter_mut().for_each(|v| *v = 0.0);
        let mut g = Graph::with_params(&store);
        let h = input(&mut g, 4, 2);
        let loss = n.head_loss(&mut g, h, &[0, 5, 2, 1]).unwrap();
        assert!((g.scalar(loss) - 6f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_transition_crf_factorizes_into_position_softmaxes() {
        let (crf_store, crf_head) = nlu(HeadKind::Crf, false, 5, 7);
        let (tok_store, tok_head) = nlu(HeadKind::Token, false, 5, 7);
        let gold = [4, 0, 2];
        let mut g = Graph::with_params(&crf_store);
        let h = input(&mut g, 3, 8);
        let crf_loss = crf_head.head_loss(&mut g, h, &gold).unwrap();
        let crf_loss = g.scalar(crf_loss);
        let em = crf_head.emissions(&mut g, h).unwrap();
        let em = g.data(em).to_vec();
        // brute force: posterior of the gold path over all 125 paths
        let w = crf_head.crf_weights(&crf_store).unwrap();
        let mut scores = Vec::new();
        for a in 0..5 {
            for b in 0..5 {
                for c in 0..5 {
                    scores.push(em[a] + em[5 + b] + em[10 + c]);
                }
            }
        }
        let brute = logsumexp(&scores) - (em[4] + em[5] + em[12]);
        assert!((crf_loss - brute).abs() < 1e-10);

        let mut g2 = Graph::with_params(&tok_store);
        let h2 = input(&mut g2, 3, 8);
        let tok_loss = tok_head.head_loss(&mut g2, h2, &gold).unwrap();
        // same seed, same shapes: identical encoder and emission weights
        assert!((crf_loss - 3.0 * g2.scalar(tok_loss)).abs() < 1e-10);
        let (crf_tags, crf_ll) = crf_head_decode(&w, &em).unwrap();
        let (tok_tags, tok_ll) = token_head_decode(&em, 5).unwrap();
        assert_eq!(crf_tags, tok_tags);
        assert!((crf_ll - tok_ll).abs() < 1e-10);
    }

    #[test]
    fn head_gradients_match_finite_differences() {
        for head in [HeadKind::Crf, HeadKind::Token] {
            let (mut store, n) = nlu(head, true, 4, 9);
            if let Some(p) = &n.crf {
                store.get_mut(p.transitions).data = random_values(10, 16);
                store.get_mut(p.start).data = random_values(11, 4);
            }
            let err = max_param_grad_error(&store, 3, |g| {
                let h = input(g, 3, 12);
                let m = input(g, 4, 13);
                let enc = n.encode(g, h, Some(m))?;
                n.head_loss(g, enc, &[3, 1, 1])
            });
            assert!(err < 1e-4, "{head:?}: {err}");
        }
    }

    #[test]
    fn token_head_decode_example() {
        let (tags, ll) = token_head_decode(&[1.0, 3.0, 2.0], 3).unwrap();
        assert_eq!(tags, vec![1]);
        assert!((ll - log_softmax(&[1.0, 3.0, 2.0])[1]).abs() < 1e-15);
    }

    #[test]
    fn crf_head_decode_is_exhaustive_argmax_with_nonpositive_likelihood() {
        for seed in 0..10 {
            let w = CrfWeights {
                num_tags: 3,
                transitions: random_values(seed, 9),
                start: random_values(seed + 100, 3),
                end: random_values(seed + 200, 3),
            };
            let em = random_values(seed + 300, 12);
            let (path, ll) = crf_head_decode(&w, &em).unwrap();
            assert!(ll <= 0.0);
            let mut best = (vec![], f64::NEG_INFINITY);
            for i in 0..81usize {
                let p = vec![i / 27, i / 9 % 3, i / 3 % 3, i % 3];
                let s = w.score(&em, &p);
                if s > best.1 {
                    best = (p, s);
                }
            }
            assert_eq!(path, best.0);
        }
    }

    #[test]
    fn length_mismatch_is_an_alignment_error() {
        let (store, n) = nlu(HeadKind::Token, false, 4, 1);
        let mut g = Graph::with_params(&store);
        let h = input(&mut g, 3, 2);
        assert!(matches!(n.head_loss(&mut g, h, &[0, 1]), Err(Error::Alignment(_))));
    }

    #[test]
    fn decode_length_equals_input_length() {
        for head in [HeadKind::Crf, HeadKind::Token] {
            let (store, n) = nlu(head, false, 6, 3);
            for rows in 1..6 {
                let mut g = Graph::with_params(&store);
                let h = input(&mut g, rows, rows as u64);
                let enc = n.encode(&mut g, h, None).unwrap();
                let (tags, ll) = n.head_decode(&store, &mut g, enc).unwrap();
                assert_eq!(tags.len(), rows);
                assert!(ll <= 0.0);
            }
        }
    }
}
