//! Corpus scoring: WER/CER, exact-match and label-only micro F1, SLU-F1,
//! ASR×NLU error quadrants, and likelihood/error correlation.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::tagging::EntitySpan;

/// Minimal edit script counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditCounts {
    pub subs: usize,
    pub ins: usize,
    pub dels: usize,
}

impl EditCounts {
    pub fn total(&self) -> usize {
        self.subs + self.ins + self.dels
    }
}

/// Levenshtein alignment with unit costs. Among minimal alignments the
/// backtrace prefers a match or substitution, then deletion, then insertion.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> EditCounts {
    let (n, m) = (reference.len(), hypothesis.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        d[i * w] = i;
    }
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = d[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            d[i * w + j] = diag.min(d[(i - 1) * w + j] + 1).min(d[i * w + j - 1] + 1);
        }
    }
    let mut c = EditCounts::default();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hypothesis[j - 1];
            if here == d[(i - 1) * w + j - 1] + usize::from(!same) {
                c.subs += usize::from(!same);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == d[(i - 1) * w + j] + 1 {
            c.dels += 1;
            i -= 1;
        } else {
            c.ins += 1;
            j -= 1;
        }
    }
    c
}

fn error_rate(c: EditCounts, ref_len: usize) -> f64 {
    c.total() as f64 / ref_len.max(1) as f64
}

/// Word error rate over whitespace-separated tokens.
pub fn wer(reference: &str, hypothesis: &str) -> f64 {
    let r: Vec<&str> = reference.split_whitespace().collect();
    let h: Vec<&str> = hypothesis.split_whitespace().collect();
    error_rate(edit_distance(&r, &h), r.len())
}

/// Character error rate; words are re-joined with single spaces, which count
/// as characters.
pub fn cer(reference: &str, hypothesis: &str) -> f64 {
    let r: Vec<char> = normalize_text(reference).chars().collect();
    let h: Vec<char> = normalize_text(hypothesis).chars().collect();
    error_rate(edit_distance(&r, &h), r.len())
}

/// Lowercase with internal whitespace collapsed to single spaces.
pub fn normalize_text(s: &str) -> String {
    s.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum F1Mode {
    /// Label and normalized mention must both match.
    Full,
    LabelOnly,
}

/// Precision/recall/F1 from (possibly fractional) match counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct F1Score {
    pub tp: f64,
    pub fp: f64,
    pub fn_: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl F1Score {
    /// With no gold and no predicted spans at all the score is perfect.
    pub fn from_counts(tp: f64, n_pred: f64, n_gold: f64) -> Self {
        let (fp, fn_) = (n_pred - tp, n_gold - tp);
        if n_pred == 0.0 && n_gold == 0.0 {
            return F1Score {
                tp,
                fp,
                fn_,
                precision: 1.0,
                recall: 1.0,
                f1: 1.0,
            };
        }
        let precision = if n_pred > 0.0 { tp / n_pred } else { 0.0 };
        let recall = if n_gold > 0.0 { tp / n_gold } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        F1Score {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
        }
    }
}

fn check_lengths(gold: usize, pred: usize) -> Result<()> {
    if gold != pred {
        return Err(Error::Data(format!(
            "{gold} gold utterances but {pred} predicted utterances"
        )));
    }
    Ok(())
}

fn span_key(s: &EntitySpan, mode: F1Mode) -> (String, String) {
    match mode {
        F1Mode::Full => (s.label.clone(), normalize_text(&s.mention)),
        F1Mode::LabelOnly => (s.label.clone(), String::new()),
    }
}

/// Multiset intersection size between one utterance's gold and predicted spans.
pub fn utterance_matches(gold: &[EntitySpan], pred: &[EntitySpan], mode: F1Mode) -> usize {
    let mut counts: HashMap<(String, String), usize> = HashMap::new();
    for s in gold {
        *counts.entry(span_key(s, mode)).or_default() += 1;
    }
    let mut tp = 0;
    for s in pred {
        if let Some(c) = counts.get_mut(&span_key(s, mode)) {
            if *c > 0 {
                *c -= 1;
                tp += 1;
            }
        }
    }
    tp
}

/// Spans that are missed or spurious in one utterance (full mode FP + FN).
pub fn utterance_errors(gold: &[EntitySpan], pred: &[EntitySpan]) -> usize {
    let tp = utterance_matches(gold, pred, F1Mode::Full);
    gold.len() + pred.len() - 2 * tp
}

pub fn micro_f1(gold: &[Vec<EntitySpan>], pred: &[Vec<EntitySpan>], mode: F1Mode) -> Result<F1Score> {
    check_lengths(gold.len(), pred.len())?;
    let mut tp = 0usize;
    let (mut ng, mut np) = (0usize, 0usize);
    for (g, p) in gold.iter().zip(pred) {
        tp += utterance_matches(g, p, mode);
        ng += g.len();
        np += p.len();
    }
    Ok(F1Score::from_counts(tp as f64, np as f64, ng as f64))
}

/// SLU-F1 and its two components.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SluF1 {
    pub word: F1Score,
    pub char: F1Score,
    /// Arithmetic mean of the word- and character-level F1.
    pub slu_f1: f64,
}

/// Word and character credit for one label-matched pair.
pub fn mention_credit(gold: &str, pred: &str) -> (f64, f64) {
    let word = (1.0 - wer(&normalize_text(gold), &normalize_text(pred))).max(0.0);
    let ch = (1.0 - cer(gold, pred)).max(0.0);
    (word, ch)
}

/// Within each utterance and label, gold and predicted spans are paired
/// greedily by descending character credit (word credit, then position, break
/// ties). Each pair adds its word and character credit as fractional true
/// positives; unpaired spans are plain misses or false alarms.
pub fn slu_f1(gold: &[Vec<EntitySpan>], pred: &[Vec<EntitySpan>]) -> Result<SluF1> {
    check_lengths(gold.len(), pred.len())?;
    let (mut tp_w, mut tp_c) = (0.0, 0.0);
    let (mut ng, mut np) = (0usize, 0usize);
    for (g, p) in gold.iter().zip(pred) {
        ng += g.len();
        np += p.len();
        let mut pairs = Vec::new();
        for (gi, gs) in g.iter().enumerate() {
            for (pi, ps) in p.iter().enumerate() {
                if gs.label == ps.label {
                    let (w, c) = mention_credit(&gs.mention, &ps.mention);
                    pairs.push((c, w, gi, pi));
                }
            }
        }
        pairs.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then(b.1.total_cmp(&a.1))
                .then(a.2.cmp(&b.2))
                .then(a.3.cmp(&b.3))
        });
        let mut used_g = vec![false; g.len()];
        let mut used_p = vec![false; p.len()];
        for (c, w, gi, pi) in pairs {
            if !used_g[gi] && !used_p[pi] {
                used_g[gi] = true;
                used_p[pi] = true;
                tp_w += w;
                tp_c += c;
            }
        }
    }
    let word = F1Score::from_counts(tp_w, np as f64, ng as f64);
    let char = F1Score::from_counts(tp_c, np as f64, ng as f64);
    Ok(SluF1 {
        word,
        char,
        slu_f1: (word.f1 + char.f1) / 2.0,
    })
}

/// Words and spans of one utterance, gold or predicted.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Annotated {
    pub words: Vec<String>,
    pub spans: Vec<EntitySpan>,
}

impl Annotated {
    pub fn text(&self) -> String {
        self.words.join(" ")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub n_utterances: usize,
    pub wer: f64,
    pub cer: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: f64,
    pub fp: f64,
    pub fn_: f64,
    pub label_f1: f64,
    pub slu_f1: f64,
    pub slu: SluF1,
    pub label: F1Score,
}

/// Corpus WER/CER (total edits over total reference length) and all F1 variants.
pub fn score_corpus(gold: &[Annotated], pred: &[Annotated]) -> Result<ScoreReport> {
    check_lengths(gold.len(), pred.len())?;
    let (mut wedits, mut wlen, mut cedits, mut clen) = (0, 0, 0, 0);
    for (g, p) in gold.iter().zip(pred) {
        let gw: Vec<String> = g.words.iter().map(|w| w.to_lowercase()).collect();
        let pw: Vec<String> = p.words.iter().map(|w| w.to_lowercase()).collect();
        wedits += edit_distance(&gw, &pw).total();
        wlen += gw.len();
        let gc: Vec<char> = gw.join(" ").chars().collect();
        let pc: Vec<char> = pw.join(" ").chars().collect();
        cedits += edit_distance(&gc, &pc).total();
        clen += gc.len();
    }
    let gs: Vec<Vec<EntitySpan>> = gold.iter().map(|a| a.spans.clone()).collect();
    let ps: Vec<Vec<EntitySpan>> = pred.iter().map(|a| a.spans.clone()).collect();
    let full = micro_f1(&gs, &ps, F1Mode::Full)?;
    let label = micro_f1(&gs, &ps, F1Mode::LabelOnly)?;
    let slu = slu_f1(&gs, &ps)?;
    Ok(ScoreReport {
        n_utterances: gold.len(),
        wer: wedits as f64 / wlen.max(1) as f64,
        cer: cedits as f64 / clen.max(1) as f64,
        f1: full.f1,
        precision: full.precision,
        recall: full.recall,
        tp: full.tp,
        fp: full.fp,
        fn_: full.fn_,
        label_f1: label.f1,
        slu_f1: slu.slu_f1,
        slu,
        label,
    })
}

impl ScoreReport {
    /// Human-readable summary, percentages with two decimals.
    pub fn render_text(&self) -> String {
        let pct = |v: f64| format!("{:6.2}", 100.0 * v);
        let mut s = String::new();
        let _ = writeln!(s, "utterances  {}", self.n_utterances);
        let _ = writeln!(s, "WER        {}", pct(self.wer));
        let _ = writeln!(s, "CER        {}", pct(self.cer));
        let _ = writeln!(
            s,
            "F1         {}  (P {}  R {}  TP {} FP {} FN {})",
            pct(self.f1),
            pct(self.precision),
            pct(self.recall),
            self.tp,
            self.fp,
            self.fn_
        );
        let _ = writeln!(s, "Label-F1   {}", pct(self.label_f1));
        let _ = writeln!(
            s,
            "SLU-F1     {}  (word {}  char {})",
            pct(self.slu_f1),
            pct(self.slu.word.f1),
            pct(self.slu.char.f1)
        );
        s
    }

    /// `key=value` lines with full precision.
    pub fn render_kv(&self) -> String {
        let pairs: [(&str, String); 13] = [
            ("n_utterances", self.n_utterances.to_string()),
            ("wer", self.wer.to_string()),
            ("cer", self.cer.to_string()),
            ("f1", self.f1.to_string()),
            ("precision", self.precision.to_string()),
            ("recall", self.recall.to_string()),
            ("tp", self.tp.to_string()),
            ("fp", self.fp.to_string()),
            ("fn", self.fn_.to_string()),
            ("label_f1", self.label_f1.to_string()),
            ("slu_f1", self.slu_f1.to_string()),
            ("slu_word_f1", self.slu.word.f1.to_string()),
            ("slu_char_f1", self.slu.char.f1.to_string()),
        ];
        pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

/// Utterance counts by (transcript correct?) × (entities correct?).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorQuadrants {
    pub asr_correct_entity_correct: usize,
    pub asr_correct_entity_incorrect: usize,
    pub asr_incorrect_entity_correct: usize,
    pub asr_incorrect_entity_incorrect: usize,
}

impl ErrorQuadrants {
    pub fn total(&self) -> usize {
        self.asr_correct_entity_correct
            + self.asr_correct_entity_incorrect
            + self.asr_incorrect_entity_correct
            + self.asr_incorrect_entity_incorrect
    }
}

pub fn error_quadrants(gold: &[Annotated], pred: &[Annotated]) -> Result<ErrorQuadrants> {
    check_lengths(gold.len(), pred.len())?;
    let mut q = ErrorQuadrants::default();
    for (g, p) in gold.iter().zip(pred) {
        let asr_ok = normalize_text(&g.text()) == normalize_text(&p.text());
        let ent_ok = utterance_errors(&g.spans, &p.spans) == 0;
        match (asr_ok, ent_ok) {
            (true, true) => q.asr_correct_entity_correct += 1,
            (true, false) => q.asr_correct_entity_incorrect += 1,
            (false, true) => q.asr_incorrect_entity_correct += 1,
            (false, false) => q.asr_incorrect_entity_incorrect += 1,
        }
    }
    Ok(q)
}

/// Quadrant counts of one or more systems laid out as
/// rows {ASR correct, ASR incorrect} × columns {entity correct, incorrect}.
pub fn render_quadrants(systems: &[(&str, ErrorQuadrants)]) -> String {
    let name_w = systems.iter().map(|(n, _)| n.len()).max().unwrap_or(5).max(5);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<13} | {:<w$} {:>9} | {:<w$} {:>9}",
        "",
        "Entity Correct",
        "",
        "Entity Incorrect",
        "",
        w = name_w
    );
    let _ = writeln!(
        s,
        "{:<13} | {:<w$} {:>9} | {:<w$} {:>9}",
        "",
        "Model",
        "#Examples",
        "Model",
        "#Examples",
        w = name_w
    );
    for (row, pick) in [
        ("ASR Correct", 0usize),
        ("ASR Incorrect", 1usize),
    ] {
        for (i, (name, q)) in systems.iter().enumerate() {
            let (ok, bad) = if pick == 0 {
                (q.asr_correct_entity_correct, q.asr_correct_entity_incorrect)
            } else {
                (q.asr_incorrect_entity_correct, q.asr_incorrect_entity_incorrect)
            };
            let label = if i == 0 { row } else { "" };
            let _ = writeln!(s, "{label:<13} | {name:<name_w$} {ok:>9} | {name:<name_w$} {bad:>9}");
        }
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    /// Two-sided, from the t-distribution with `n − 2` degrees of freedom.
    pub p_value: f64,
    pub n: usize,
}

/// Pearson correlation between `x` and `y`.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(Error::Data(format!("{} values paired with {}", x.len(), y.len())));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::Data(format!("correlation needs at least 3 utterances, got {n}")));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "one of the variates has zero variance".into(),
        ));
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p_value = if r.abs() >= 1.0 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Data(e.to_string()))?;
        (2.0 * dist.sf(t.abs())).min(1.0)
    };
    Ok(Correlation { r, p_value, n })
}

/// Correlation between negative sequence log-likelihood and per-utterance
/// span errors (full-mode FP + FN).
pub fn likelihood_error_correlation(
    log_likelihoods: &[f64],
    gold: &[Vec<EntitySpan>],
    pred: &[Vec<EntitySpan>],
) -> Result<Correlation> {
    check_lengths(gold.len(), pred.len())?;
    check_lengths(gold.len(), log_likelihoods.len())?;
    let nll: Vec<f64> = log_likelihoods.iter().map(|l| -l).collect();
    let errors: Vec<f64> = gold
        .iter()
        .zip(pred)
        .map(|(g, p)| utterance_errors(g, p) as f64)
        .collect();
    pearson(&nll, &errors)
}

impl Correlation {
    pub fn render(&self) -> String {
        format!("n={} r={:.4} p={:.4}\n", self.n, self.r, self.p_value)
    }
}
