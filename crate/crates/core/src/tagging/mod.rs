//! Label-set algebra: BIO tags, subtoken alignment with the null tag,
//! span codecs and the marker-enriched transcript used by sequence-generating
//! baselines.

mod enriched;
mod subword;
mod vocab;

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use enriched::{build_enriched_sequence, close_marker, is_marker, open_marker, parse_enriched_sequence, EnrichedParse};
pub use subword::{align_to_subtokens, collapse_from_subtokens, SubwordSplitter, Tokenization, CONTINUATION};
pub use vocab::{words_from_subtokens, Vocab, BOS, EOS};

pub const OUTSIDE_SYMBOL: &str = "O";
pub const NULL_SYMBOL: &str = "∅";

/// A tag over the aligned label set: BIO tags plus the null tag carried by
/// non-first subtokens. Label payloads index into a [`LabelSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tag {
    Outside,
    Begin(usize),
    Inside(usize),
    Null,
}

/// Base labels plus the derived BIO and aligned tag vocabularies.
///
/// Index layout of the aligned set: `O` = 0, `l_B` = 1 + 2l, `l_I` = 2 + 2l,
/// `∅` = 2|L| + 1. The BIO set is the same layout without the last entry.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelSet {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl TryFrom<Vec<String>> for LabelSet {
    type Error = Error;

    fn try_from(labels: Vec<String>) -> Result<Self> {
        LabelSet::new(&labels)
    }
}

impl From<LabelSet> for Vec<String> {
    fn from(l: LabelSet) -> Self {
        l.labels
    }
}

impl LabelSet {
    pub fn new<S: AsRef<str>>(labels: &[S]) -> Result<Self> {
        let mut index = HashMap::new();
        let mut out = Vec::new();
        for (i, l) in labels.iter().enumerate() {
            let l = l.as_ref().trim();
            if l.is_empty() || l.contains(char::is_whitespace) {
                return Err(Error::Validation(format!("invalid label {l:?}")));
            }
            if l == OUTSIDE_SYMBOL || l == NULL_SYMBOL {
                return Err(Error::Validation(format!("{l} is a reserved tag symbol")));
            }
            if index.insert(l.to_string(), i).is_some() {
                return Err(Error::Validation(format!("duplicate label {l}")));
            }
            out.push(l.to_string());
        }
        if out.is_empty() {
            return Err(Error::Validation("label set is empty".into()));
        }
        Ok(LabelSet { labels: out, index })
    }

    /// One base label per line; blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let labels: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        Self::new(&labels)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn render(&self) -> String {
        let mut s = self.labels.join("\n");
        s.push('\n');
        s
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    /// |L′| = 2|L| + 1
    pub fn bio_size(&self) -> usize {
        2 * self.labels.len() + 1
    }

    /// |L″| = |L′| + 1
    pub fn aligned_size(&self) -> usize {
        self.bio_size() + 1
    }

    pub fn tag_index(&self, tag: Tag) -> usize {
        match tag {
            Tag::Outside => 0,
            Tag::Begin(l) => 1 + 2 * l,
            Tag::Inside(l) => 2 + 2 * l,
            Tag::Null => self.bio_size(),
        }
    }

    pub fn tag_from_index(&self, i: usize) -> Result<Tag> {
        let n = self.labels.len();
        match i {
            0 => Ok(Tag::Outside),
            i if i == 2 * n + 1 => Ok(Tag::Null),
            i if i <= 2 * n => {
                let l = (i - 1) / 2;
                Ok(if (i - 1) % 2 == 0 { Tag::Begin(l) } else { Tag::Inside(l) })
            }
            _ => Err(Error::Vocabulary(format!(
                "tag index {i} outside aligned set of {}",
                self.aligned_size()
            ))),
        }
    }

    pub fn symbol(&self, tag: Tag) -> String {
        match tag {
            Tag::Outside => OUTSIDE_SYMBOL.to_string(),
            Tag::Null => NULL_SYMBOL.to_string(),
            Tag::Begin(l) => format!("{}_B", self.labels[l]),
            Tag::Inside(l) => format!("{}_I", self.labels[l]),
        }
    }

    pub fn parse_symbol(&self, s: &str) -> Result<Tag> {
        match s {
            OUTSIDE_SYMBOL => return Ok(Tag::Outside),
            NULL_SYMBOL => return Ok(Tag::Null),
            _ => {}
        }
        let unknown = || Error::Vocabulary(format!("unknown tag symbol {s:?}"));
        let (base, kind) = s.rsplit_once('_').ok_or_else(unknown)?;
        let l = self.label_index(base).ok_or_else(unknown)?;
        match kind {
            "B" => Ok(Tag::Begin(l)),
            "I" => Ok(Tag::Inside(l)),
            _ => Err(unknown()),
        }
    }

    /// Parses a space-joined tag string.
    pub fn parse_tags(&self, text: &str) -> Result<Vec<Tag>> {
        text.split_whitespace().map(|s| self.parse_symbol(s)).collect()
    }

    pub fn format_tags(&self, tags: &[Tag]) -> String {
        tags.iter().map(|t| self.symbol(*t)).collect::<Vec<_>>().join(" ")
    }

    /// Every tag of the aligned set, in index order.
    pub fn aligned_tags(&self) -> Vec<Tag> {
        (0..self.aligned_size())
            .map(|i| self.tag_from_index(i).expect("index in range"))
            .collect()
    }
}

/// A labeled entity mention over word positions `start..=end`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntitySpan {
    pub label: String,
    pub start: usize,
    pub end: usize,
    pub mention: String,
}

impl EntitySpan {
    pub fn new(label: &str, start: usize, end: usize, words: &[String]) -> Self {
        let mention = if end < words.len() && start <= end {
            words[start..=end].join(" ")
        } else {
            String::new()
        };
        EntitySpan {
            label: label.to_string(),
            start,
            end,
            mention,
        }
    }
}

impl fmt::Display for EntitySpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}..={}, {:?})", self.label, self.start, self.end, self.mention)
    }
}

/// Checks labels, bounds and pairwise disjointness.
pub fn validate_spans(labels: &LabelSet, spans: &[EntitySpan], n_words: usize) -> Result<()> {
    for s in spans {
        if labels.label_index(&s.label).is_none() {
            return Err(Error::Vocabulary(format!("unknown entity label {}", s.label)));
        }
        if s.start > s.end || s.end >= n_words {
            return Err(Error::Validation(format!(
                "span {s} outside a sentence of {n_words} words"
            )));
        }
    }
    let mut sorted: Vec<&EntitySpan> = spans.iter().collect();
    sorted.sort_by_key(|s| (s.start, s.end));
    for w in sorted.windows(2) {
        if w[1].start <= w[0].end {
            return Err(Error::Validation(format!(
                "overlapping spans {} and {}",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

/// Word-level BIO tags for `spans`.
pub fn spans_to_bio(labels: &LabelSet, spans: &[EntitySpan], n_words: usize) -> Result<Vec<Tag>> {
    validate_spans(labels, spans, n_words)?;
    let mut tags = vec![Tag::Outside; n_words];
    for s in spans {
        let l = labels.label_index(&s.label).expect("validated");
        tags[s.start] = Tag::Begin(l);
        for t in &mut tags[s.start + 1..=s.end] {
            *t = Tag::Inside(l);
        }
    }
    Ok(tags)
}

/// Maximal B-then-I runs become spans. An `I` that does not continue a run
/// of the same label opens a new span. `∅` is read as `O`. Mentions are
/// filled from `words` when it covers the span.
pub fn bio_to_spans(labels: &LabelSet, tags: &[Tag], words: &[String]) -> Vec<EntitySpan> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, usize)> = None;
    let close = |open: &mut Option<(usize, usize)>, end: usize, spans: &mut Vec<EntitySpan>| {
        if let Some((l, start)) = open.take() {
            spans.push(EntitySpan::new(labels.label(l), start, end, words));
        }
    };
    for (i, tag) in tags.iter().enumerate() {
        match *tag {
            Tag::Begin(l) => {
                close(&mut open, i.wrapping_sub(1), &mut spans);
                open = Some((l, i));
            }
            Tag::Inside(l) => match open {
                Some((cur, _)) if cur == l => {}
                _ => {
                    close(&mut open, i.wrapping_sub(1), &mut spans);
                    open = Some((l, i));
                }
            },
            Tag::Outside | Tag::Null => close(&mut open, i.wrapping_sub(1), &mut spans),
        }
    }
    close(&mut open, tags.len().wrapping_sub(1), &mut spans);
    spans
}
