//! Transcript enriched with entity markers, e.g.
//! `call ⟨PER⟩ john smith ⟨/PER⟩`.

use super::EntitySpan;

pub fn open_marker(label: &str) -> String {
    format!("⟨{label}⟩")
}

pub fn close_marker(label: &str) -> String {
    format!("⟨/{label}⟩")
}

enum Marker<'a> {
    Open(&'a str),
    Close(&'a str),
}

fn as_marker(token: &str) -> Option<Marker<'_>> {
    let inner = token.strip_prefix('⟨')?.strip_suffix('⟩')?;
    match inner.strip_prefix('/') {
        Some(l) => Some(Marker::Close(l)),
        None => Some(Marker::Open(inner)),
    }
}

pub fn is_marker(token: &str) -> bool {
    as_marker(token).is_some()
}

/// Wraps each span's words in open/close markers. Spans must be valid and
/// non-overlapping; they are emitted in left-to-right order.
pub fn build_enriched_sequence<S: AsRef<str>>(words: &[S], spans: &[EntitySpan]) -> Vec<String> {
    let mut sorted: Vec<&EntitySpan> = spans.iter().collect();
    sorted.sort_by_key(|s| s.start);
    let mut out = Vec::with_capacity(words.len() + 2 * spans.len());
    let mut next = sorted.iter().peekable();
    let mut open: Option<&EntitySpan> = None;
    for (i, w) in words.iter().enumerate() {
        if let Some(s) = next.next_if(|s| s.start == i) {
            out.push(open_marker(&s.label));
            open = Some(s);
        }
        out.push(w.as_ref().to_string());
        if let Some(s) = open.filter(|s| s.end == i) {
            out.push(close_marker(&s.label));
            open = None;
        }
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EnrichedParse {
    pub words: Vec<String>,
    pub spans: Vec<EntitySpan>,
    /// Markers that could not be paired into a span and were dropped.
    pub malformed: usize,
}

/// Recovers words and spans from any token sequence.
///
/// A span needs an open marker, at least one word, and a close marker of the
/// same label. A close marker with no matching open, a second open while
/// one is pending, an open still pending at the end, and an open/close pair
/// enclosing no word are each dropped and counted as malformed.
pub fn parse_enriched_sequence<S: AsRef<str>>(tokens: &[S]) -> EnrichedParse {
    let mut out = EnrichedParse::default();
    let mut open: Option<(String, usize)> = None;
    for t in tokens {
        let t = t.as_ref();
        match as_marker(t) {
            None => out.words.push(t.to_string()),
            Some(Marker::Open(l)) => {
                if open.is_some() {
                    out.malformed += 1;
                }
                open = Some((l.to_string(), out.words.len()));
            }
            Some(Marker::Close(l)) => match &open {
                Some((ol, start)) if ol == l => {
                    if *start < out.words.len() {
                        let end = out.words.len() - 1;
                        out.spans.push(EntitySpan::new(l, *start, end, &out.words));
                    } else {
                        out.malformed += 2;
                    }
                    open = None;
                }
                _ => out.malformed += 1,
            },
        }
    }
    if open.is_some() {
        out.malformed += 1;
    }
    out
}
