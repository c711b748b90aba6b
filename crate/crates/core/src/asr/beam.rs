use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::tensorcore::math::argmax;

/// Anything that scores the next token given a prefix starting with BOS.
pub trait StepScorer {
    fn vocab_size(&self) -> usize;
    /// Longest prefix the scorer accepts; also the cap on generated tokens.
    fn max_len(&self) -> usize;
    fn bos(&self) -> usize;
    fn eos(&self) -> usize;
    /// Hidden state of the last prefix position and normalized log-probs.
    fn step(&self, prefix: &[usize]) -> Result<(Vec<f64>, Vec<f64>)>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Starts with BOS; ends with EOS when `finished`.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    /// One state per generated token.
    pub hidden_trace: Vec<Vec<f64>>,
    /// Entropy of each step's next-token distribution.
    pub entropies: Vec<f64>,
    pub finished: bool,
}

impl Hypothesis {
    pub fn generated(&self) -> usize {
        self.tokens.len() - 1
    }

    /// Ranking score `log_prob / generated^λ`.
    pub fn score(&self, length_penalty: f64) -> f64 {
        if length_penalty == 0.0 {
            self.log_prob
        } else {
            self.log_prob / (self.generated() as f64).powf(length_penalty)
        }
    }

    /// Generated tokens without BOS and the closing EOS.
    pub fn output_tokens(&self, eos: usize) -> &[usize] {
        let body = &self.tokens[1..];
        match body.last() {
            Some(&t) if t == eos && self.finished => &body[..body.len() - 1],
            _ => body,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BeamConfig {
    pub beam_size: usize,
    pub length_penalty: f64,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            beam_size: 5,
            length_penalty: 0.0,
        }
    }
}

fn entropy(log_probs: &[f64]) -> f64 {
    -log_probs
        .iter()
        .filter(|lp| lp.is_finite())
        .map(|&lp| lp.exp() * lp)
        .sum::<f64>()
}

/// Higher score first, then lexicographically smaller token sequence.
fn rank(a_score: f64, a_tokens: &[usize], b_score: f64, b_tokens: &[usize]) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_tokens.cmp(b_tokens))
}

/// Beam search over a [`StepScorer`]. BOS is never generated. Hypotheses
/// finish on EOS or when they reach the scorer's maximum length. The result
/// is ranked by length-normalized score with token-sequence tie-breaks.
///
/// With no length penalty, expansion stops as soon as the best finished
/// hypothesis scores strictly better than every live one, since log-probs
/// only decrease.
pub fn beam_search<S: StepScorer>(scorer: &S, cfg: BeamConfig) -> Result<Vec<Hypothesis>> {
    if cfg.beam_size == 0 {
        return Err(Error::Config("beam size must be at least 1".into()));
    }
    let (bos, eos, vocab) = (scorer.bos(), scorer.eos(), scorer.vocab_size());
    let mut live = vec![Hypothesis {
        tokens: vec![bos],
        log_prob: 0.0,
        hidden_trace: Vec::new(),
        entropies: Vec::new(),
        finished: false,
    }];
    let mut done: Vec<Hypothesis> = Vec::new();
    while !live.is_empty() && live[0].tokens.len() <= scorer.max_len() {
        let mut steps = Vec::with_capacity(live.len());
        let mut candidates: Vec<(usize, usize, f64)> = Vec::with_capacity(live.len() * vocab);
        for (hi, h) in live.iter().enumerate() {
            let (hidden, lp) = scorer.step(&h.tokens)?;
            for (t, &l) in lp.iter().enumerate() {
                if t != bos && l.is_finite() {
                    candidates.push((hi, t, h.log_prob + l));
                }
            }
            steps.push((hidden, lp));
        }
        candidates.sort_by(|a, b| {
            b.2.total_cmp(&a.2)
                .then_with(|| live[a.0].tokens.cmp(&live[b.0].tokens))
                .then_with(|| a.1.cmp(&b.1))
        });
        candidates.truncate(cfg.beam_size);
        let mut next = Vec::with_capacity(candidates.len());
        for (hi, t, lp) in candidates {
            let parent = &live[hi];
            let mut h = parent.clone();
            h.tokens.push(t);
            h.log_prob = lp;
            h.hidden_trace.push(steps[hi].0.clone());
            h.entropies.push(entropy(&steps[hi].1));
            if t == eos {
                h.finished = true;
                done.push(h);
            } else {
                next.push(h);
            }
        }
        live = next;
        if cfg.length_penalty == 0.0 {
            let best_done = done.iter().map(|h| h.log_prob).fold(f64::NEG_INFINITY, f64::max);
            if live.iter().all(|h| h.log_prob < best_done) {
                live.clear();
            }
        }
    }
    // hypotheses that hit the length cap without EOS
    done.extend(live);
    let lambda = cfg.length_penalty;
    done.sort_by(|a, b| rank(a.score(lambda), &a.tokens, b.score(lambda), &b.tokens));
    Ok(done)
}

/// Argmax decoding, one token at a time.
pub fn greedy_decode<S: StepScorer>(scorer: &S) -> Result<Hypothesis> {
    let mut h = Hypothesis {
        tokens: vec![scorer.bos()],
        log_prob: 0.0,
        hidden_trace: Vec::new(),
        entropies: Vec::new(),
        finished: false,
    };
    while h.tokens.len() <= scorer.max_len() {
        let (hidden, mut lp) = scorer.step(&h.tokens)?;
        let ent = entropy(&lp);
        let saved = lp[scorer.bos()];
        lp[scorer.bos()] = f64::NEG_INFINITY;
        let t = argmax(&lp);
        lp[scorer.bos()] = saved;
        h.tokens.push(t);
        h.log_prob += lp[t];
        h.hidden_trace.push(hidden);
        h.entropies.push(ent);
        if t == scorer.eos() {
            h.finished = true;
            break;
        }
    }
    Ok(h)
}
