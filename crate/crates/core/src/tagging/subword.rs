use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::Tag;
use crate::error::{Error, Result};

/// Prefix marking a subtoken that continues the previous word.
pub const CONTINUATION: &str = "##";

/// Syllable-like pieces used by the default splitter. Whole short words are
/// listed so that common function words stay a single subtoken.
const DEFAULT_PIECES: &[&str] = &[
    // function words
    "a", "about", "after", "alarm", "and", "any", "at", "book", "by", "call", "can", "cancel",
    "check", "drive", "email", "find", "for", "from", "get", "how", "in", "is", "lights", "me",
    "meet", "move", "my", "near", "next", "note", "now", "of", "on", "open", "play", "please",
    "remind", "send", "set", "show", "start", "stop", "text", "the", "to", "turn", "visit", "wake",
    "what", "when", "with", "weather", "news", "there", "time", "up", "tell", "call", "ring",
    "ask", "fly", "walk", "shop", "rain", "snow", "song", "list", "off",
    // syllables
    "bel", "ber", "bo", "bra", "ca", "cor", "da", "del", "den", "di", "do", "el", "en", "fa",
    "fer", "ga", "gan", "ha", "ka", "kel", "la", "lan", "le", "li", "lo", "lon", "lu", "ma",
    "mar", "mi", "mo", "na", "nel", "no", "ra", "ri", "ro", "sa", "sen", "so", "son", "ta",
    "tan", "te", "ti", "to", "va", "ven", "vi", "wen", "ya", "za", "zo", "day", "ton", "ford",
    "ville", "berg", "ly", "ia", "ish", "ing", "er", "ar", "or", "us", "ex", "ix",
];

/// Deterministic greedy longest-match splitter over a fixed piece table.
/// Characters not covered by any piece become single-character pieces.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubwordSplitter {
    pieces: HashSet<String>,
    max_len: usize,
}

impl Default for SubwordSplitter {
    fn default() -> Self {
        Self::new(DEFAULT_PIECES.iter().copied())
    }
}

impl SubwordSplitter {
    pub fn new<'a>(pieces: impl IntoIterator<Item = &'a str>) -> Self {
        let pieces: HashSet<String> = pieces.into_iter().map(str::to_string).collect();
        let max_len = pieces.iter().map(|p| p.chars().count()).max().unwrap_or(1);
        SubwordSplitter { pieces, max_len }
    }

    pub fn default_pieces() -> &'static [&'static str] {
        DEFAULT_PIECES
    }

    /// Splits one word; every piece after the first carries [`CONTINUATION`].
    pub fn split(&self, word: &str) -> Vec<String> {
        let chars: Vec<char> = word.chars().collect();
        let mut out = Vec::new();
        let mut pos = 0;
        while pos < chars.len() {
            let mut take = 1;
            for len in (1..=self.max_len.min(chars.len() - pos)).rev() {
                let cand: String = chars[pos..pos + len].iter().collect();
                if self.pieces.contains(&cand) {
                    take = len;
                    break;
                }
            }
            let piece: String = chars[pos..pos + take].iter().collect();
            if out.is_empty() {
                out.push(piece);
            } else {
                out.push(format!("{CONTINUATION}{piece}"));
            }
            pos += take;
        }
        out
    }

    pub fn tokenize<S: AsRef<str>>(&self, words: &[S]) -> Tokenization {
        let mut subtokens = Vec::new();
        let mut word_of_subtoken = Vec::new();
        let mut first = Vec::new();
        for (i, w) in words.iter().enumerate() {
            for (j, p) in self.split(w.as_ref()).into_iter().enumerate() {
                subtokens.push(p);
                word_of_subtoken.push(i);
                first.push(j == 0);
            }
        }
        Tokenization {
            words: words.iter().map(|w| w.as_ref().to_string()).collect(),
            subtokens,
            word_of_subtoken,
            first,
        }
    }
}

/// Words and their subtoken decomposition.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokenization {
    pub words: Vec<String>,
    pub subtokens: Vec<String>,
    pub word_of_subtoken: Vec<usize>,
    pub first: Vec<bool>,
}

impl Tokenization {
    /// Rebuilds word boundaries from continuation-marked subtokens.
    pub fn from_subtokens<S: AsRef<str>>(subtokens: &[S]) -> Self {
        let mut words: Vec<String> = Vec::new();
        let mut word_of_subtoken = Vec::new();
        let mut first = Vec::new();
        for s in subtokens {
            let s = s.as_ref();
            match s.strip_prefix(CONTINUATION) {
                Some(rest) if !words.is_empty() => {
                    words.last_mut().unwrap().push_str(rest);
                    first.push(false);
                }
                stripped => {
                    words.push(stripped.unwrap_or(s).to_string());
                    first.push(true);
                }
            }
            word_of_subtoken.push(words.len() - 1);
        }
        Tokenization {
            words,
            subtokens: subtokens.iter().map(|s| s.as_ref().to_string()).collect(),
            word_of_subtoken,
            first,
        }
    }

    pub fn n_words(&self) -> usize {
        self.words.len()
    }

    pub fn n_subtokens(&self) -> usize {
        self.subtokens.len()
    }
}

/// First subtoken of word `i` carries `tags[i]`; the rest carry `∅`.
pub fn align_to_subtokens(tags: &[Tag], tok: &Tokenization) -> Result<Vec<Tag>> {
    if tags.len() != tok.n_words() {
        return Err(Error::Alignment(format!(
            "{} tags for {} words",
            tags.len(),
            tok.n_words()
        )));
    }
    Ok(tok
        .word_of_subtoken
        .iter()
        .zip(&tok.first)
        .map(|(&w, &f)| if f { tags[w] } else { Tag::Null })
        .collect())
}

/// Takes each word's first-subtoken tag. Non-`∅` tags on continuation
/// subtokens are ignored and counted; a `∅` on a first subtoken reads as `O`.
pub fn collapse_from_subtokens(tags: &[Tag], tok: &Tokenization) -> Result<(Vec<Tag>, usize)> {
    if tags.len() != tok.n_subtokens() {
        return Err(Error::Alignment(format!(
            "{} tags for {} subtokens",
            tags.len(),
            tok.n_subtokens()
        )));
    }
    let mut out = vec![Tag::Outside; tok.n_words()];
    let mut ignored = 0;
    for ((&tag, &w), &first) in tags.iter().zip(&tok.word_of_subtoken).zip(&tok.first) {
        if first {
            out[w] = if tag == Tag::Null { Tag::Outside } else { tag };
        } else if tag != Tag::Null {
            ignored += 1;
        }
    }
    Ok((out, ignored))
}
