//! Seeded synthetic spoken-NER corpus.
//!
//! Utterances are drawn from slot templates filled from per-label lexicons.
//! Each subtoken piece has a fixed random frame signature; an utterance's
//! frames repeat each piece's signature a random number of times and add
//! Gaussian noise. Confusable piece pairs get near-identical signatures,
//! which produces recognition errors.
//!
//! A lexicon entry listed under more than one label is a heteronym: it is
//! spelled the same under every label but pronounced differently, modelled
//! as a label-specific offset added to all of its frames. Inside templates
//! whose carrier words do not reveal the label, only the audio tells the
//! readings apart.

mod io;

pub use io::{read_corpus, read_split, write_corpus, FRAMES_MAGIC};

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tagging::{
    close_marker, open_marker, spans_to_bio, EntitySpan, LabelSet, SubwordSplitter, Tag, Tokenization, Vocab,
    CONTINUATION,
};
use crate::tensorcore::seeded_rng;

/// Slot that takes any label, chosen uniformly.
pub const ANY_SLOT: &str = "ANY";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub labels: Vec<String>,
    /// Label to entries; an entry may span several words.
    pub lexicons: BTreeMap<String, Vec<String>>,
    /// Words and `{LABEL}` / `{ANY}` slots separated by spaces.
    pub templates: Vec<String>,
    pub frames_per_token: (usize, usize),
    pub frame_dim: usize,
    /// Standard deviation of per-frame Gaussian noise.
    pub noise: f64,
    /// Piece pairs (without continuation prefix) with near-identical signatures.
    pub confusable_pairs: Vec<(String, String)>,
    /// Scale of the perturbation separating a confusable partner from its twin.
    pub confusable_spread: f64,
    /// Norm of the label-specific heteronym reading cue.
    pub heteronym_shift: f64,
    /// Frames of boundary tone carrying the cue after a heteronym mention.
    /// With 0 the cue is added to the mention's own frames instead.
    pub cue_frames: usize,
    /// Probability that a slot whose label has heteronyms is filled by one.
    pub heteronym_rate: f64,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
}

fn strings(words: &[&str]) -> Vec<String> {
    words.iter().map(|w| w.to_string()).collect()
}

impl Default for SynthConfig {
    fn default() -> Self {
        let first = [
            "marlon", "belda", "venka", "garo", "sonia", "tavi", "rilo", "fano", "kelsa", "deno", "mika", "lusa",
            "zoya", "nelma", "tesen", "wenda", "kari", "dora", "lena", "mibo", "sabel", "tiva", "yaro", "coren",
        ];
        let mut per = strings(&first);
        per.extend(strings(&[
            "marlon delgan",
            "sonia fersen",
            "kari bracor",
            "tavi hatan",
            "lena delgan",
            "garo fersen",
        ]));
        let loc = strings(&[
            "belville", "marford", "sonberg", "tanton", "galia", "roville", "denford", "kaberg", "vaton", "zoria",
            "lanville", "wenberg", "diton", "lumia", "calford", "noberg", "riton", "faville", "menia", "toberg",
        ]);
        let date = strings(&[
            "soday", "vaday", "riday", "kelday", "loday", "zaday", "tiday", "noday", "next soday", "next vaday",
            "next riday", "next loday",
        ]);
        let org = strings(&[
            "bravex", "cormix", "delus", "galex", "sonix", "tavus", "venex", "marix", "belus", "datix", "kelix",
            "zonus", "canex", "domix", "lanus", "fasex",
        ]);
        let mut lexicons = BTreeMap::from([
            ("PER".to_string(), per),
            ("LOC".to_string(), loc),
            ("DATE".to_string(), date),
            ("ORG".to_string(), org),
        ]);
        let heteronyms = [
            ("dalo", "PER", "LOC"),
            ("ferna", "PER", "ORG"),
            ("lisen", "LOC", "ORG"),
            ("vimo", "PER", "LOC"),
            ("bora", "LOC", "ORG"),
            ("tesa", "PER", "ORG"),
            ("ganli", "PER", "LOC"),
            ("rona", "LOC", "ORG"),
        ];
        for (w, a, b) in heteronyms {
            lexicons.get_mut(a).unwrap().push(w.to_string());
            lexicons.get_mut(b).unwrap().push(w.to_string());
        }
        let templates = strings(&[
            "call {PER}",
            "call {PER} now",
            "send a text to {PER}",
            "email {PER} about the meet",
            "remind me to call {PER}",
            "ring {PER} please",
            "meet {PER} in {LOC}",
            "call {PER} on {DATE}",
            "weather in {LOC}",
            "drive to {LOC}",
            "find a shop near {LOC}",
            "book a walk in {LOC}",
            "fly to {LOC} on {DATE}",
            "set an alarm for {DATE}",
            "what is on {DATE}",
            "remind me on {DATE}",
            "open email from {ORG}",
            "news about {ORG}",
            "check the {ORG} list",
            "tell me about {ANY}",
            "show me {ANY}",
            "find {ANY} please",
            "ask about {ANY} now",
            "what is {ANY}",
            "any news on {ANY}",
            "start a note on {ANY}",
            "check on {ANY}",
            "get me {ANY}",
            "open {ANY} now",
            "what about {ANY}",
            "show the {ANY} list",
        ]);
        let pairs = [
            ("lon", "lan"),
            ("bel", "del"),
            ("ven", "wen"),
            ("ga", "ka"),
            ("son", "sen"),
            ("ta", "da"),
            ("ri", "li"),
            ("fa", "va"),
            ("mo", "no"),
            ("in", "on"),
        ];
        SynthConfig {
            seed: 7,
            labels: strings(&["PER", "LOC", "DATE", "ORG"]),
            lexicons,
            templates,
            frames_per_token: (2, 4),
            frame_dim: 16,
            noise: 1.3,
            confusable_pairs: pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
            confusable_spread: 0.35,
            heteronym_shift: 2.0,
            cue_frames: 2,
            heteronym_rate: 0.8,
            n_train: 2000,
            n_dev: 300,
            n_test: 300,
        }
    }
}

enum Piece {
    Word(String),
    Slot(String),
}

fn parse_template(t: &str) -> Vec<Piece> {
    t.split_whitespace()
        .map(|w| match w.strip_prefix('{').and_then(|r| r.strip_suffix('}')) {
            Some(label) => Piece::Slot(label.to_string()),
            None => Piece::Word(w.to_string()),
        })
        .collect()
}

fn sound_of(subtoken: &str) -> &str {
    subtoken.strip_prefix(CONTINUATION).unwrap_or(subtoken)
}

impl SynthConfig {
    pub fn validate(&self) -> Result<LabelSet> {
        let labels = LabelSet::new(&self.labels)?;
        let (lo, hi) = self.frames_per_token;
        if lo < 1 || hi < lo {
            return Err(Error::Config(format!("frames-per-token range ({lo}, {hi}) is invalid")));
        }
        if self.frame_dim == 0 {
            return Err(Error::Config("frame dimension must be positive".into()));
        }
        if !(self.noise >= 0.0 && self.confusable_spread >= 0.0 && self.heteronym_shift >= 0.0) {
            return Err(Error::Config("noise, spread and shift must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.heteronym_rate) {
            return Err(Error::Config(format!("heteronym rate {} outside [0,1]", self.heteronym_rate)));
        }
        if self.n_train == 0 {
            return Err(Error::Config("the training split needs at least one utterance".into()));
        }
        if self.templates.is_empty() {
            return Err(Error::Config("no templates".into()));
        }
        for label in self.lexicons.keys() {
            if labels.label_index(label).is_none() {
                return Err(Error::Config(format!("lexicon for undeclared label {label}")));
            }
        }
        let function = self.function_words();
        for t in &self.templates {
            for p in parse_template(t) {
                if let Piece::Slot(l) = p {
                    if l == ANY_SLOT {
                        if self.lexicons.values().all(Vec::is_empty) {
                            return Err(Error::Config(format!("template {t:?} needs a non-empty lexicon")));
                        }
                    } else if self.lexicons.get(&l).is_none_or(Vec::is_empty) {
                        return Err(Error::Config(format!("template {t:?} uses empty lexicon {l}")));
                    }
                }
            }
        }
        for entry in self.lexicons.values().flatten() {
            for w in entry.split_whitespace() {
                if function.contains(w) && w != "next" {
                    return Err(Error::Config(format!("lexicon word {w:?} is also a template word")));
                }
            }
        }
        Ok(labels)
    }

    fn function_words(&self) -> BTreeSet<String> {
        self.templates
            .iter()
            .flat_map(|t| parse_template(t))
            .filter_map(|p| match p {
                Piece::Word(w) => Some(w),
                Piece::Slot(_) => None,
            })
            .collect()
    }

    /// Every distinct word the generator can emit.
    pub fn word_list(&self) -> BTreeSet<String> {
        let mut words = self.function_words();
        for entry in self.lexicons.values().flatten() {
            words.extend(entry.split_whitespace().map(str::to_string));
        }
        words
    }

    /// Entries listed under more than one label.
    pub fn heteronyms(&self) -> BTreeSet<String> {
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for entries in self.lexicons.values() {
            let unique: BTreeSet<&str> = entries.iter().map(String::as_str).collect();
            for e in unique {
                *seen.entry(e).or_default() += 1;
            }
        }
        seen.into_iter().filter(|(_, c)| *c > 1).map(|(e, _)| e.to_string()).collect()
    }

    /// Subtokens of every word plus the marker pair of every label.
    pub fn vocab(&self, splitter: &SubwordSplitter) -> Result<Vocab> {
        let subs: BTreeSet<String> = self.word_list().iter().flat_map(|w| splitter.split(w)).collect();
        let markers: Vec<String> = self
            .labels
            .iter()
            .flat_map(|l| [open_marker(l), close_marker(l)])
            .collect();
        Vocab::build(subs.iter().map(String::as_str), markers.iter().map(String::as_str))
    }
}

/// One utterance: frames and its gold transcript and spans.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub frame_dim: usize,
    /// Row-major `n_frames × frame_dim`; values are exactly representable as f32.
    pub frames: Vec<f64>,
    pub words: Vec<String>,
    pub spans: Vec<EntitySpan>,
}

impl Example {
    pub fn n_frames(&self) -> usize {
        self.frames.len() / self.frame_dim
    }

    pub fn tags(&self, labels: &LabelSet) -> Result<Vec<Tag>> {
        spans_to_bio(labels, &self.spans, self.words.len())
    }

    pub fn tokenization(&self, splitter: &SubwordSplitter) -> Tokenization {
        splitter.tokenize(&self.words)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub labels: LabelSet,
    pub vocab: Vocab,
    pub frame_dim: usize,
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
}

pub const SPLITS: [&str; 3] = ["train", "dev", "test"];

impl Corpus {
    pub fn split(&self, name: &str) -> Result<&[Example]> {
        match name {
            "train" => Ok(&self.train),
            "dev" => Ok(&self.dev),
            "test" => Ok(&self.test),
            other => Err(Error::Config(format!("unknown split {other:?} (expected train, dev or test)"))),
        }
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    let n = Normal::new(0.0, 1.0).unwrap();
    (0..dim).map(|_| scale * n.sample(rng)).collect()
}

/// Acoustic model of the synthetic world: one signature per piece sound and
/// one pronunciation offset per label.
struct Acoustics {
    signatures: BTreeMap<String, Vec<f64>>,
    label_shift: Vec<Vec<f64>>,
}

impl Acoustics {
    fn new(cfg: &SynthConfig, splitter: &SubwordSplitter, rng: &mut ChaCha8Rng) -> Result<Self> {
        let d = cfg.frame_dim;
        let sounds: BTreeSet<String> = cfg
            .word_list()
            .iter()
            .flat_map(|w| splitter.split(w))
            .map(|s| sound_of(&s).to_string())
            .collect();
        let mut signatures: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for s in &sounds {
            signatures.insert(s.clone(), gaussian_vec(rng, d, 1.0));
        }
        for (a, b) in &cfg.confusable_pairs {
            let base = signatures
                .get(a)
                .ok_or_else(|| Error::Config(format!("confusable piece {a:?} is never spoken")))?
                .clone();
            if !signatures.contains_key(b) {
                return Err(Error::Config(format!("confusable piece {b:?} is never spoken")));
            }
            let delta = gaussian_vec(rng, d, cfg.confusable_spread);
            signatures.insert(b.clone(), base.iter().zip(&delta).map(|(x, e)| x + e).collect());
        }
        let label_shift = cfg
            .labels
            .iter()
            .map(|_| {
                let v = gaussian_vec(rng, d, 1.0);
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                v.iter().map(|x| cfg.heteronym_shift * x / norm).collect()
            })
            .collect();
        Ok(Acoustics {
            signatures,
            label_shift,
        })
    }
}

/// Draws the train, dev and test splits in that order from one seeded stream.
pub fn generate_corpus(cfg: &SynthConfig) -> Result<Corpus> {
    let labels = cfg.validate()?;
    let splitter = SubwordSplitter::default();
    let vocab = cfg.vocab(&splitter)?;
    let mut rng = seeded_rng(cfg.seed);
    let acoustics = Acoustics::new(cfg, &splitter, &mut rng)?;
    let templates: Vec<Vec<Piece>> = cfg.templates.iter().map(|t| parse_template(t)).collect();
    let heteronyms = cfg.heteronyms();
    let slot_labels: Vec<String> = cfg
        .labels
        .iter()
        .filter(|l| cfg.lexicons.get(*l).is_some_and(|e| !e.is_empty()))
        .cloned()
        .collect();
    let mut pools: HashMap<&str, (Vec<&String>, Vec<&String>)> = HashMap::new();
    for (label, entries) in &cfg.lexicons {
        let (het, plain): (Vec<&String>, Vec<&String>) = entries.iter().partition(|e| heteronyms.contains(*e));
        pools.insert(label, (het, plain));
    }
    let noise = Normal::new(0.0, 1.0).unwrap();
    let gen = |prefix: &str, n: usize, rng: &mut ChaCha8Rng| -> Result<Vec<Example>> {
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let template = &templates[rng.random_range(0..templates.len())];
            let mut words: Vec<String> = Vec::new();
            let mut spans = Vec::new();
            // per word: label index of an on-word cue
            let mut shifted: Vec<Option<usize>> = Vec::new();
            // per word: label index of a cue that follows it
            let mut cue_after: Vec<Option<usize>> = Vec::new();
            for piece in template {
                match piece {
                    Piece::Word(w) => {
                        words.push(w.clone());
                        shifted.push(None);
                        cue_after.push(None);
                    }
                    Piece::Slot(slot) => {
                        let label = if slot == ANY_SLOT {
                            &slot_labels[rng.random_range(0..slot_labels.len())]
                        } else {
                            slot
                        };
                        let (het, plain) = &pools[label.as_str()];
                        let use_het = !het.is_empty() && (plain.is_empty() || rng.random_bool(cfg.heteronym_rate));
                        let pool = if use_het { het } else { plain };
                        let entry = pool[rng.random_range(0..pool.len())];
                        let li = labels.label_index(label).unwrap();
                        let start = words.len();
                        for w in entry.split_whitespace() {
                            words.push(w.to_string());
                            shifted.push(use_het.then_some(li));
                            cue_after.push(None);
                        }
                        *cue_after.last_mut().unwrap() = use_het.then_some(li);
                        spans.push((label.clone(), start, words.len() - 1));
                    }
                }
            }
            let spans: Vec<EntitySpan> = spans
                .into_iter()
                .map(|(l, s, e)| EntitySpan::new(&l, s, e, &words))
                .collect();
            let d = cfg.frame_dim;
            let mut frames = Vec::new();
            let on_word = cfg.cue_frames == 0;
            for ((w, shift), cue) in words.iter().zip(&shifted).zip(&cue_after) {
                for sub in splitter.split(w) {
                    let sig = &acoustics.signatures[sound_of(&sub)];
                    let reps = rng.random_range(cfg.frames_per_token.0..=cfg.frames_per_token.1);
                    for _ in 0..reps {
                        for k in 0..d {
                            let mut v = sig[k] + cfg.noise * noise.sample(rng);
                            if let (true, Some(li)) = (on_word, shift) {
                                v += acoustics.label_shift[*li][k];
                            }
                            frames.push(v as f32 as f64);
                        }
                    }
                }
                if let (false, Some(li)) = (on_word, cue) {
                    for _ in 0..cfg.cue_frames {
                        for k in 0..d {
                            let v = acoustics.label_shift[*li][k] + cfg.noise * noise.sample(rng);
                            frames.push(v as f32 as f64);
                        }
                    }
                }
            }
            out.push(Example {
                id: format!("{prefix}-{i:05}"),
                frame_dim: d,
                frames,
                words,
                spans,
            });
        }
        Ok(out)
    };
    let train = gen("train", cfg.n_train, &mut rng)?;
    let dev = gen("dev", cfg.n_dev, &mut rng)?;
    let test = gen("test", cfg.n_test, &mut rng)?;
    Ok(Corpus {
        labels,
        vocab,
        frame_dim: cfg.frame_dim,
        train,
        dev,
        test,
    })
}
