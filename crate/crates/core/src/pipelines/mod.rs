//! The four systems under comparison and everything needed to train them,
//! run them, and probe them.
//!
//! * compositional: ASR sub-network whose decoder states feed an NLU
//!   sub-network that tags every subtoken; trained jointly.
//! * compositional-direct: same ASR sub-network, but the NLU side decodes
//!   the marker-enriched transcript instead of a tag sequence.
//! * direct: one encoder-decoder from speech to the enriched transcript.
//! * cascaded: ASR and a text-only tagger trained separately and piped
//!   through the recognized tokens.

mod cascaded;
mod compositional;
pub mod config;
mod enriched;

use std::collections::HashMap;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::asr::{
    beam_search, AsrConfig, AsrSubnet, BeamConfig, DecoderConfig, DecoderScorer, EncodedSpeech, Hypothesis,
    SpeechEncoderConfig,
};
use crate::error::{Error, Result};
use crate::metrics::{micro_f1, score_corpus, Annotated, F1Mode, F1Score};
use crate::nlu::HeadKind;
use crate::synthdata::{Corpus, Example};
use crate::tagging::{
    align_to_subtokens, build_enriched_sequence, bio_to_spans, collapse_from_subtokens, is_marker, spans_to_bio, EntitySpan,
    LabelSet, SubwordSplitter, Tag, Tokenization, Vocab,
};
use crate::tensorcore::checkpoint::{self, CheckpointMeta};
use crate::tensorcore::layers::BlockConfig;
use crate::tensorcore::math::splitmix64;
use crate::tensorcore::optim::{Adam, OptimConfig};
use crate::tensorcore::{seeded_rng, GradBuffer, Graph, ParamStore, Shape, Tensor};

pub use cascaded::CascadedNet;
pub use compositional::CompositionalNet;
pub use enriched::{enriched_words, CompositionalDirectNet, DirectNet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum System {
    Compositional,
    CompositionalDirect,
    Direct,
    Cascaded,
}

impl System {
    pub const ALL: [System; 4] = [
        System::Compositional,
        System::CompositionalDirect,
        System::Direct,
        System::Cascaded,
    ];

    pub fn name(self) -> &'static str {
        match self {
            System::Compositional => "compositional",
            System::CompositionalDirect => "compositional-direct",
            System::Direct => "direct",
            System::Cascaded => "cascaded",
        }
    }
}

impl FromStr for System {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        System::ALL
            .into_iter()
            .find(|sys| sys.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown system {s:?}")))
    }
}

/// Architecture hyperparameters shared by all systems.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dm: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub nlu_layers: usize,
    /// Longest decoder input; 0 sizes it from the training data.
    pub max_len: usize,
    pub positional: bool,
    pub speech_attention: bool,
    pub head: HeadKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dm: 32,
            heads: 4,
            ff_dim: 64,
            dropout: 0.1,
            encoder_layers: 2,
            decoder_layers: 1,
            nlu_layers: 3,
            max_len: 0,
            positional: true,
            speech_attention: true,
            head: HeadKind::Crf,
        }
    }
}

impl ModelConfig {
    pub fn blocks(&self, layers: usize) -> BlockConfig {
        BlockConfig {
            layers,
            dm: self.dm,
            heads: self.heads,
            ff_dim: self.ff_dim,
            dropout: self.dropout,
        }
    }

    pub fn asr(&self, frame_dim: usize, vocab_size: usize) -> AsrConfig {
        AsrConfig {
            encoder: SpeechEncoderConfig {
                frame_dim,
                blocks: self.blocks(self.encoder_layers),
                positional: self.positional,
            },
            decoder: self.decoder(vocab_size),
        }
    }

    pub fn decoder(&self, vocab_size: usize) -> DecoderConfig {
        DecoderConfig {
            blocks: self.blocks(self.decoder_layers),
            vocab_size,
            max_len: self.max_len,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of the NLU loss in `L_asr + α·L_nlu`.
    pub alpha: f64,
    pub optim: OptimConfig,
    pub batch_size: usize,
    pub max_steps: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.1,
            optim: OptimConfig {
                lr: 4e-3,
                ..OptimConfig::default()
            },
            batch_size: 16,
            max_steps: 2500,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be a finite value ≥ 0, got {}", self.alpha)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        self.optim.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Beam,
    Injected,
    GroundTruthTranscript,
}

/// One line of a prediction dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub words: Vec<String>,
    /// Subtokens the transcript was decoded or injected as.
    #[serde(default)]
    pub subtokens: Vec<String>,
    pub spans: Vec<EntitySpan>,
    /// Sequence log-likelihood of the label output.
    pub log_likelihood: f64,
    pub source: Source,
    /// The recognizer produced no tokens.
    #[serde(default)]
    pub empty_output: bool,
    /// Tags or markers that had to be dropped to form spans.
    #[serde(default)]
    pub repaired: usize,
}

impl Prediction {
    fn empty(id: &str, source: Source) -> Self {
        Prediction {
            id: id.to_string(),
            words: Vec::new(),
            subtokens: Vec::new(),
            spans: Vec::new(),
            log_likelihood: 0.0,
            source,
            empty_output: true,
            repaired: 0,
        }
    }
}

pub fn write_predictions(path: &Path, preds: &[Prediction]) -> Result<()> {
    let mut out = String::new();
    for p in preds {
        out.push_str(&serde_json::to_string(p).map_err(|e| Error::Parse(e.to_string()))?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}

/// Tokenizer, vocabulary and tag inventory shared by every system.
#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub labels: LabelSet,
    pub vocab: Vocab,
    pub frame_dim: usize,
    pub splitter: SubwordSplitter,
}

/// An external transcript, as words or as already-split subtokens.
#[derive(Clone, Debug, PartialEq)]
pub enum Transcript {
    Words(Vec<String>),
    Subtokens(Vec<String>),
}

impl Task {
    pub fn from_corpus(corpus: &Corpus) -> Self {
        Task {
            labels: corpus.labels.clone(),
            vocab: corpus.vocab.clone(),
            frame_dim: corpus.frame_dim,
            splitter: SubwordSplitter::default(),
        }
    }

    pub fn num_tags(&self) -> usize {
        self.labels.aligned_size()
    }

    pub fn tokenize(&self, transcript: &Transcript) -> Tokenization {
        match transcript {
            Transcript::Words(w) => self.splitter.tokenize(w),
            Transcript::Subtokens(s) => Tokenization::from_subtokens(s),
        }
    }

    fn check_example(&self, ex: &Example) -> Result<()> {
        if ex.words.is_empty() {
            return Err(Error::Data(format!("utterance {} has no transcript", ex.id)));
        }
        self.check_example_frames(ex)
    }

    /// Decoder target `BOS tokens EOS`.
    fn target(&self, tokens: &[String]) -> Result<Vec<usize>> {
        let mut t = vec![self.vocab.bos()];
        t.extend(self.vocab.encode(tokens)?);
        t.push(self.vocab.eos());
        Ok(t)
    }

    fn prepare(&self, ex: &Example) -> Result<Prepared> {
        self.check_example(ex)?;
        let tok = ex.tokenization(&self.splitter);
        let word_tags = spans_to_bio(&self.labels, &ex.spans, ex.words.len())?;
        let tags = align_to_subtokens(&word_tags, &tok)?
            .into_iter()
            .map(|t| self.labels.tag_index(t))
            .collect();
        let enriched: Vec<String> = build_enriched_sequence(&ex.words, &ex.spans)
            .iter()
            .flat_map(|w| {
                if is_marker(w) {
                    vec![w.clone()]
                } else {
                    self.splitter.split(w)
                }
            })
            .collect();
        Ok(Prepared {
            frames: ex.frames.clone(),
            n_frames: ex.n_frames(),
            transcript: self.target(&tok.subtokens)?,
            tags,
            enriched: self.target(&enriched)?,
        })
    }

    /// Turns subtoken tag indices into word-level spans.
    fn spans_from_tags(&self, subtokens: &[String], tags: &[usize]) -> Result<(Tokenization, Vec<EntitySpan>, usize)> {
        let tok = Tokenization::from_subtokens(subtokens);
        let tags: Vec<Tag> = tags.iter().map(|&t| self.labels.tag_from_index(t)).collect::<Result<_>>()?;
        let (word_tags, ignored) = collapse_from_subtokens(&tags, &tok)?;
        let spans = bio_to_spans(&self.labels, &word_tags, &tok.words);
        Ok((tok, spans, ignored))
    }
}

/// Per-utterance training material.
struct Prepared {
    frames: Vec<f64>,
    n_frames: usize,
    /// `BOS subtokens EOS`.
    transcript: Vec<usize>,
    /// Subtoken tag indices.
    tags: Vec<usize>,
    /// `BOS enriched-subtokens EOS`.
    enriched: Vec<usize>,
}

impl Prepared {
    fn n_subtokens(&self) -> usize {
        self.transcript.len() - 2
    }

    fn frames(&self, g: &mut Graph, frame_dim: usize) -> Result<Tensor> {
        g.input(Shape::new(self.n_frames, frame_dim), self.frames.clone())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean batch loss before each update; entry 0 is the loss at initialization.
    pub losses: Vec<f64>,
}

/// Seeds for the batch order and per-example dropout.
const ORDER_STREAM: u64 = 0x6f72_6465_72;

/// Runs `max_steps` Adam updates. Each step draws `batch_size` examples from
/// a per-epoch shuffle, builds one graph per example and averages gradients.
fn train_loop<F>(
    store: &mut ParamStore,
    adam: &mut Adam,
    cfg: &TrainConfig,
    n_examples: usize,
    stream: u64,
    mut loss_fn: F,
) -> Result<Vec<f64>>
where
    F: FnMut(&mut Graph, usize) -> Result<Tensor>,
{
    if n_examples == 0 {
        return Err(Error::Data("no training utterances".into()));
    }
    let mut order_rng = seeded_rng(splitmix64(cfg.seed ^ ORDER_STREAM ^ stream));
    let mut order: Vec<usize> = (0..n_examples).collect();
    let mut pos = n_examples;
    let mut losses = Vec::with_capacity(cfg.max_steps as usize);
    for step in 0..cfg.max_steps {
        let mut grads = GradBuffer::zeros_like(store);
        let mut total = 0.0;
        for b in 0..cfg.batch_size {
            if pos == n_examples {
                order.shuffle(&mut order_rng);
                pos = 0;
            }
            let i = order[pos];
            pos += 1;
            let mut g = Graph::with_params(store);
            g.set_train(true, splitmix64(cfg.seed ^ splitmix64(step ^ (b as u64) << 32)));
            let loss = loss_fn(&mut g, i)?;
            let value = g.scalar(loss);
            if !value.is_finite() {
                return Err(Error::Validation(format!("training loss became {value} at step {step}")));
            }
            total += value;
            g.backward(loss)?;
            g.accumulate_param_grads(&mut grads);
        }
        grads.scale(1.0 / cfg.batch_size as f64);
        adam.step(store, &mut grads);
        losses.push(total / cfg.batch_size as f64);
    }
    Ok(losses)
}

#[derive(Clone, Debug)]
pub enum Net {
    Compositional(CompositionalNet),
    CompositionalDirect(CompositionalDirectNet),
    Direct(DirectNet),
    Cascaded(CascadedNet),
}

/// A trained system: architecture, parameters and the task inventory.
#[derive(Clone, Debug)]
pub struct Trained {
    pub system: System,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub task: Task,
    pub store: ParamStore,
    pub net: Net,
}

#[derive(Serialize, Deserialize)]
struct CheckpointConfig {
    system: System,
    model: ModelConfig,
    train: TrainConfig,
    labels: Vec<String>,
    vocab: Vec<String>,
    frame_dim: usize,
}

/// Room left after the longest training target.
const LENGTH_SLACK: usize = 4;

fn build_net(system: System, model: &ModelConfig, task: &Task, store: &mut ParamStore, seed: u64) -> Result<Net> {
    let mut rng = seeded_rng(seed);
    Ok(match system {
        System::Compositional => Net::Compositional(CompositionalNet::new(store, model, task, &mut rng)?),
        System::CompositionalDirect => {
            Net::CompositionalDirect(CompositionalDirectNet::new(store, model, task, &mut rng)?)
        }
        System::Direct => Net::Direct(DirectNet::new(store, model, task, &mut rng)?),
        System::Cascaded => Net::Cascaded(CascadedNet::new(store, model, task, &mut rng)?),
    })
}

/// Options for running a trained system over a corpus split.
#[derive(Clone, Debug)]
pub enum DecodeMode {
    Beam,
    /// External transcripts keyed by utterance id.
    Inject(HashMap<String, Transcript>),
    GoldTranscript,
}

impl Trained {
    pub fn fit(system: System, model: &ModelConfig, train: &TrainConfig, corpus: &Corpus) -> Result<(Self, TrainReport)> {
        train.validate()?;
        let task = Task::from_corpus(corpus);
        let prepared: Vec<Prepared> = corpus.train.iter().map(|ex| task.prepare(ex)).collect::<Result<_>>()?;
        let mut model = model.clone();
        if model.max_len == 0 {
            let longest = prepared
                .iter()
                .map(|p| p.transcript.len().max(if system.uses_enriched() { p.enriched.len() } else { 0 }))
                .max()
                .unwrap_or(2);
            model.max_len = longest - 1 + LENGTH_SLACK;
        }
        let mut store = ParamStore::new();
        let net = build_net(system, &model, &task, &mut store, train.seed)?;
        let frame_dim = task.frame_dim;
        let alpha = train.alpha;
        let losses = match &net {
            Net::Compositional(n) => {
                let mut adam = Adam::new(train.optim.clone(), &store)?;
                train_loop(&mut store, &mut adam, train, prepared.len(), 0, |g, i| {
                    n.loss(g, &prepared[i], frame_dim, alpha)
                })?
            }
            Net::CompositionalDirect(n) => {
                let mut adam = Adam::new(train.optim.clone(), &store)?;
                train_loop(&mut store, &mut adam, train, prepared.len(), 0, |g, i| {
                    n.loss(g, &prepared[i], frame_dim, alpha)
                })?
            }
            Net::Direct(n) => {
                let mut adam = Adam::new(train.optim.clone(), &store)?;
                train_loop(&mut store, &mut adam, train, prepared.len(), 0, |g, i| {
                    n.loss(g, &prepared[i], frame_dim)
                })?
            }
            Net::Cascaded(n) => n.fit(&mut store, train, &prepared, frame_dim)?,
        };
        let trained = Trained {
            system,
            model,
            train: train.clone(),
            task,
            store,
            net,
        };
        Ok((trained, TrainReport { losses }))
    }

    /// Mean loss of the first training batch at initialization, without
    /// updating anything.
    pub fn initial_loss(system: System, model: &ModelConfig, train: &TrainConfig, corpus: &Corpus) -> Result<f64> {
        let cfg = TrainConfig {
            max_steps: 1,
            ..train.clone()
        };
        let (_, report) = Trained::fit(system, model, &cfg, corpus)?;
        Ok(report.losses[0])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let cfg = CheckpointConfig {
            system: self.system,
            model: self.model.clone(),
            train: self.train.clone(),
            labels: self.task.labels.labels().to_vec(),
            vocab: self.task.vocab.tokens().to_vec(),
            frame_dim: self.task.frame_dim,
        };
        let value = serde_json::to_value(&cfg).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let meta = CheckpointMeta::new(value, self.train.max_steps, self.train.seed);
        checkpoint::save(path, &meta, &self.store)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, saved) = checkpoint::load(path)?;
        if checkpoint::config_hash(&meta.config) != meta.config_hash {
            return Err(Error::Checkpoint("configuration hash does not match its contents".into()));
        }
        let cfg: CheckpointConfig =
            serde_json::from_value(meta.config).map_err(|e| Error::Checkpoint(format!("configuration: {e}")))?;
        let task = Task {
            labels: LabelSet::new(&cfg.labels)?,
            vocab: Vocab::from_list(cfg.vocab)?,
            frame_dim: cfg.frame_dim,
            splitter: SubwordSplitter::default(),
        };
        let mut store = ParamStore::new();
        let net = build_net(cfg.system, &cfg.model, &task, &mut store, cfg.train.seed)?;
        if store.load_matching(&saved) != store.len() || saved.len() != store.len() {
            return Err(Error::Checkpoint("parameters do not match the recorded architecture".into()));
        }
        Ok(Trained {
            system: cfg.system,
            model: cfg.model,
            train: cfg.train,
            task,
            store,
            net,
        })
    }

    fn beam(&self, scorer: &DecoderScorer<'_>, beam: BeamConfig) -> Result<Hypothesis> {
        beam_search(scorer, beam)?
            .into_iter()
            .next()
            .ok_or_else(|| Error::Validation("beam search returned no hypothesis".into()))
    }

    fn encode(&self, ex: &Example) -> Result<EncodedSpeech> {
        self.task.check_example_frames(ex)?;
        match &self.net {
            Net::Compositional(n) => n.asr.encode_values(&self.store, &ex.frames, ex.frame_dim),
            Net::CompositionalDirect(n) => n.asr.encode_values(&self.store, &ex.frames, ex.frame_dim),
            Net::Cascaded(n) => n.asr.encode_values(&self.store, &ex.frames, ex.frame_dim),
            Net::Direct(n) => n.encode_values(&self.store, &ex.frames, ex.frame_dim),
        }
    }

    fn asr(&self) -> Option<&AsrSubnet> {
        match &self.net {
            Net::Compositional(n) => Some(&n.asr),
            Net::CompositionalDirect(n) => Some(&n.asr),
            Net::Cascaded(n) => Some(&n.asr),
            Net::Direct(_) => None,
        }
    }

    /// Full inference from speech with beam search.
    pub fn predict(&self, ex: &Example, beam: BeamConfig) -> Result<Prediction> {
        let enc = self.encode(ex)?;
        if let Net::Direct(n) = &self.net {
            return n.predict(self, &ex.id, &enc, beam);
        }
        let asr = self.asr().expect("non-direct systems have an ASR sub-network");
        let scorer = DecoderScorer {
            store: &self.store,
            decoder: &asr.decoder,
            memory: &enc,
            bos: self.task.vocab.bos(),
            eos: self.task.vocab.eos(),
        };
        let hyp = self.beam(&scorer, beam)?;
        let tokens = hyp.output_tokens(self.task.vocab.eos()).to_vec();
        if tokens.is_empty() {
            return Ok(Prediction::empty(&ex.id, Source::Beam));
        }
        let trace = &hyp.hidden_trace[..tokens.len()];
        self.label(&ex.id, &enc, &tokens, trace, Source::Beam, beam)
    }

    /// Inference on an external transcript: the ASR decoder is force-decoded
    /// over it and only the label side runs freely.
    pub fn predict_injected(
        &self,
        ex: &Example,
        transcript: &Transcript,
        source: Source,
        beam: BeamConfig,
    ) -> Result<Prediction> {
        let asr = self.asr().ok_or_else(|| {
            Error::Config("the direct system has no recognizer states to inject a transcript into".into())
        })?;
        let tok = self.task.tokenize(transcript);
        if tok.subtokens.is_empty() {
            return Err(Error::Validation(format!("utterance {}: injected transcript is empty", ex.id)));
        }
        let tokens = self.task.vocab.encode(&tok.subtokens)?;
        let enc = self.encode(ex)?;
        let trace = crate::asr::force_decode(&self.store, &asr.decoder, &enc, self.task.vocab.bos(), &tokens)?;
        self.label(&ex.id, &enc, &tokens, &trace, source, beam)
    }

    /// Label side of the composed systems, given recognized tokens and the
    /// decoder states that produced them.
    fn label(
        &self,
        id: &str,
        enc: &EncodedSpeech,
        tokens: &[usize],
        trace: &[Vec<f64>],
        source: Source,
        beam: BeamConfig,
    ) -> Result<Prediction> {
        let subtokens: Vec<String> = self.task.vocab.decode(tokens)?;
        match &self.net {
            Net::Compositional(n) => {
                let (tags, ll) = n.tag(&self.store, enc, trace)?;
                let (tok, spans, repaired) = self.task.spans_from_tags(&subtokens, &tags)?;
                Ok(Prediction {
                    id: id.to_string(),
                    words: tok.words,
                    subtokens,
                    spans,
                    log_likelihood: ll,
                    source,
                    empty_output: false,
                    repaired,
                })
            }
            Net::Cascaded(n) => {
                let (tags, ll) = n.tag(&self.store, tokens)?;
                let (tok, spans, repaired) = self.task.spans_from_tags(&subtokens, &tags)?;
                Ok(Prediction {
                    id: id.to_string(),
                    words: tok.words,
                    subtokens,
                    spans,
                    log_likelihood: ll,
                    source,
                    empty_output: false,
                    repaired,
                })
            }
            Net::CompositionalDirect(n) => n.label(self, id, enc, trace, source, beam),
            Net::Direct(_) => unreachable!("direct predictions never reach the label side"),
        }
    }

    pub fn predict_mode(&self, ex: &Example, mode: &DecodeMode, beam: BeamConfig) -> Result<Prediction> {
        match mode {
            DecodeMode::Beam => self.predict(ex, beam),
            DecodeMode::GoldTranscript => {
                self.predict_injected(ex, &Transcript::Words(ex.words.clone()), Source::GroundTruthTranscript, beam)
            }
            DecodeMode::Inject(map) => {
                let t = map
                    .get(&ex.id)
                    .ok_or_else(|| Error::Data(format!("no injected transcript for utterance {}", ex.id)))?;
                self.predict_injected(ex, t, Source::Injected, beam)
            }
        }
    }

    /// Runs over `examples` on up to `workers` threads; output keeps the
    /// input order.
    pub fn decode_all(
        &self,
        examples: &[Example],
        mode: &DecodeMode,
        beam: BeamConfig,
        workers: usize,
    ) -> Result<Vec<Prediction>> {
        parallel_map(examples, workers, |ex| self.predict_mode(ex, mode, beam))
    }

    /// Recognition and labeling scored in isolation from one checkpoint.
    pub fn probe_subnets(&self, examples: &[Example], beam: BeamConfig, workers: usize) -> Result<ProbeReport> {
        let beam_preds = self.decode_all(examples, &DecodeMode::Beam, beam, workers)?;
        let gold_preds = self.decode_all(examples, &DecodeMode::GoldTranscript, beam, workers)?;
        Ok(ProbeReport::new(examples, &beam_preds, &gold_preds)?)
    }
}

impl System {
    fn uses_enriched(self) -> bool {
        matches!(self, System::Direct | System::CompositionalDirect)
    }
}

impl Task {
    fn check_example_frames(&self, ex: &Example) -> Result<()> {
        if ex.frame_dim != self.frame_dim {
            return Err(Error::Data(format!(
                "utterance {} has {}-dim frames, expected {}",
                ex.id, ex.frame_dim, self.frame_dim
            )));
        }
        Ok(())
    }
}

/// Scores of the recognizer and of the labeler on gold transcripts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub asr_wer: f64,
    pub nlu_f1: F1Score,
    pub end_to_end_f1: F1Score,
}

impl ProbeReport {
    pub fn new(examples: &[Example], beam: &[Prediction], gold: &[Prediction]) -> Result<Self> {
        let refs: Vec<Annotated> = examples.iter().map(Annotated::from).collect();
        let recognized: Vec<Annotated> = beam.iter().map(Annotated::from).collect();
        let asr = score_corpus(&refs, &recognized)?;
        let gold_spans: Vec<Vec<EntitySpan>> = examples.iter().map(|e| e.spans.clone()).collect();
        let span_lists = |preds: &[Prediction]| -> Vec<Vec<EntitySpan>> { preds.iter().map(|p| p.spans.clone()).collect() };
        Ok(ProbeReport {
            asr_wer: asr.wer,
            nlu_f1: micro_f1(&gold_spans, &span_lists(gold), F1Mode::Full)?,
            end_to_end_f1: micro_f1(&gold_spans, &span_lists(beam), F1Mode::Full)?,
        })
    }
}

impl From<&Example> for Annotated {
    fn from(ex: &Example) -> Self {
        Annotated {
            words: ex.words.clone(),
            spans: ex.spans.clone(),
        }
    }
}

impl From<&Prediction> for Annotated {
    fn from(p: &Prediction) -> Self {
        Annotated {
            words: p.words.clone(),
            spans: p.spans.clone(),
        }
    }
}

/// Order-preserving map over a bounded pool of scoped threads.
pub fn parallel_map<T: Sync, U: Send, F>(items: &[T], workers: usize, f: F) -> Result<Vec<U>>
where
    F: Fn(&T) -> Result<U> + Sync,
{
    let workers = workers.max(1).min(items.len().max(1));
    if workers == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    let results: Vec<Result<Vec<U>>> = std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| s.spawn(|| part.iter().map(&f).collect::<Result<Vec<U>>>()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}
