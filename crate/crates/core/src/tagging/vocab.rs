use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::enriched::is_marker;
use super::subword::Tokenization;
use crate::error::{Error, Result};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";

/// Token vocabulary. Ids 0 and 1 are BOS and EOS, followed by subtokens;
/// entity markers, when present, occupy a contiguous range after every
/// subtoken.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Vocab::from_list(tokens)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Builds a vocabulary from subtokens and markers; order and duplicates
    /// in the inputs do not matter.
    pub fn build<'a>(
        subtokens: impl IntoIterator<Item = &'a str>,
        markers: impl IntoIterator<Item = &'a str>,
    ) -> Result<Self> {
        let mut subs: Vec<String> = subtokens.into_iter().map(str::to_string).collect();
        subs.sort();
        subs.dedup();
        if let Some(bad) = subs.iter().find(|s| is_marker(s) || *s == BOS || *s == EOS) {
            return Err(Error::Vocabulary(format!("{bad} is reserved and cannot be a subtoken")));
        }
        let mut marks: Vec<String> = markers.into_iter().map(str::to_string).collect();
        marks.sort();
        marks.dedup();
        if let Some(bad) = marks.iter().find(|m| !is_marker(m)) {
            return Err(Error::Vocabulary(format!("{bad} is not a marker token")));
        }
        let mut tokens = vec![BOS.to_string(), EOS.to_string()];
        tokens.extend(subs);
        tokens.extend(marks);
        Self::from_list(tokens)
    }

    /// Exact token list in id order (as written by [`Vocab::render`]).
    pub fn from_list(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 3 || tokens[0] != BOS || tokens[1] != EOS {
            return Err(Error::Vocabulary(
                "vocabulary must start with BOS and EOS and hold at least one token".into(),
            ));
        }
        let mut index = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Vocabulary(format!("duplicate token {t}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_list(text.lines().filter(|l| !l.is_empty()).map(str::to_string).collect())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn render(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn bos(&self) -> usize {
        0
    }

    pub fn eos(&self) -> usize {
        1
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<usize>> {
        tokens
            .iter()
            .map(|t| {
                let t = t.as_ref();
                self.id(t)
                    .ok_or_else(|| Error::Vocabulary(format!("token {t:?} is not in the vocabulary")))
            })
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<Vec<String>> {
        ids.iter()
            .map(|&i| {
                self.token(i)
                    .map(str::to_string)
                    .ok_or_else(|| Error::Vocabulary(format!("token id {i} out of range 0..{}", self.len())))
            })
            .collect()
    }

    /// Ids of the marker range, if any.
    pub fn marker_ids(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| is_marker(&self.tokens[i])).collect()
    }
}

/// Joins continuation-marked subtokens back into words.
pub fn words_from_subtokens<S: AsRef<str>>(subtokens: &[S]) -> Vec<String> {
    Tokenization::from_subtokens(subtokens).words
}
