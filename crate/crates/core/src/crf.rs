//! Linear-chain CRF over per-position tag emissions.
//!
//! The global score of a tag path `y` over `N` positions is
//! `start[y₀] + Σ em[l][y_l] + Σ_{l≥1} trans[y_{l−1}][y_l] + end[y_{N−1}]`.
//! Training uses the differentiable forms on a [`Graph`]; decoding and the
//! likelihood used for confidence analysis work on plain values.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensorcore::math::logsumexp;
use crate::tensorcore::{Axis, Graph, ParamId, ParamStore, Tensor};

/// Learned CRF potentials: `transitions[from][to]`, `start`, `end`. All start at zero.
#[derive(Clone, Debug)]
pub struct CrfParams {
    pub transitions: ParamId,
    pub start: ParamId,
    pub end: ParamId,
    pub num_tags: usize,
}

/// Graph handles of a [`CrfParams`] set.
#[derive(Clone, Copy, Debug)]
pub struct CrfTensors {
    pub transitions: Tensor,
    pub start: Tensor,
    pub end: Tensor,
}

impl CrfParams {
    pub fn new(store: &mut ParamStore, name: &str, num_tags: usize, _rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(CrfParams {
            transitions: store.filled(&format!("{name}.transitions"), num_tags, num_tags, 0.0)?,
            start: store.filled(&format!("{name}.start"), 1, num_tags, 0.0)?,
            end: store.filled(&format!("{name}.end"), 1, num_tags, 0.0)?,
            num_tags,
        })
    }

    pub fn tensors(&self, g: &mut Graph) -> CrfTensors {
        CrfTensors {
            transitions: g.param(self.transitions),
            start: g.param(self.start),
            end: g.param(self.end),
        }
    }

    pub fn weights(&self, store: &ParamStore) -> CrfWeights {
        CrfWeights {
            num_tags: self.num_tags,
            transitions: store.get(self.transitions).data.clone(),
            start: store.get(self.start).data.clone(),
            end: store.get(self.end).data.clone(),
        }
    }
}

fn check(em: Tensor, p: &CrfTensors) -> Result<usize> {
    let k = em.cols();
    if p.transitions.rows() != k || p.transitions.cols() != k || p.start.cols() != k || p.end.cols() != k {
        return Err(Error::Dimension(format!(
            "emissions over {k} tags do not match transitions {}",
            p.transitions.shape()
        )));
    }
    Ok(k)
}

/// Unnormalized score of one tag path.
pub fn sequence_score(g: &mut Graph, em: Tensor, p: &CrfTensors, tags: &[usize]) -> Result<Tensor> {
    let k = check(em, p)?;
    if tags.len() != em.rows() {
        return Err(Error::Dimension(format!(
            "{} tags for {} emission rows",
            tags.len(),
            em.rows()
        )));
    }
    if let Some(&bad) = tags.iter().find(|&&t| t >= k) {
        return Err(Error::Index(format!("tag {bad} outside 0..{k}")));
    }
    let n = tags.len();
    let emit_pos: Vec<(usize, usize)> = tags.iter().enumerate().map(|(l, &t)| (l, t)).collect();
    let emit = g.gather(em, &emit_pos)?;
    let mut total = g.sum(emit);
    let s = g.gather(p.start, &[(0, tags[0])])?;
    let e = g.gather(p.end, &[(0, tags[n - 1])])?;
    total = g.add(total, s)?;
    total = g.add(total, e)?;
    if n > 1 {
        let trans_pos: Vec<(usize, usize)> = tags.windows(2).map(|w| (w[0], w[1])).collect();
        let tr = g.gather(p.transitions, &trans_pos)?;
        let tr = g.sum(tr);
        total = g.add(total, tr)?;
    }
    Ok(total)
}

/// `log Σ_y exp(score(y))` by the forward recursion in log space.
pub fn log_partition(g: &mut Graph, em: Tensor, p: &CrfTensors) -> Result<Tensor> {
    check(em, p)?;
    let first = g.slice_rows(em, 0, 1)?;
    let mut alpha = g.add(first, p.start)?;
    for l in 1..em.rows() {
        // m[i][j] = alpha[i] + trans[i][j]; reduce over the previous tag i
        let col = g.transpose(alpha);
        let m = g.add_col(p.transitions, col)?;
        let reduced = g.logsumexp(m, Axis::Rows);
        let row = g.slice_rows(em, l, 1)?;
        alpha = g.add(reduced, row)?;
    }
    let fin = g.add(alpha, p.end)?;
    Ok(g.logsumexp(fin, Axis::Cols))
}

/// Negative log posterior of `gold`: `log_partition − sequence_score`.
pub fn nll_loss(g: &mut Graph, em: Tensor, p: &CrfTensors, gold: &[usize]) -> Result<Tensor> {
    let score = sequence_score(g, em, p, gold)?;
    let z = log_partition(g, em, p)?;
    g.sub(z, score)
}

/// CRF potentials as plain values.
#[derive(Clone, Debug, PartialEq)]
pub struct CrfWeights {
    pub num_tags: usize,
    pub transitions: Vec<f64>,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

impl CrfWeights {
    pub fn zeros(num_tags: usize) -> Self {
        CrfWeights {
            num_tags,
            transitions: vec![0.0; num_tags * num_tags],
            start: vec![0.0; num_tags],
            end: vec![0.0; num_tags],
        }
    }

    fn trans(&self, from: usize, to: usize) -> f64 {
        self.transitions[from * self.num_tags + to]
    }

    fn rows(&self, em: &[f64]) -> usize {
        em.len() / self.num_tags
    }

    /// Path score on values; `em` is row-major `N × num_tags`.
    pub fn score(&self, em: &[f64], tags: &[usize]) -> f64 {
        let k = self.num_tags;
        let mut s = self.start[tags[0]] + self.end[tags[tags.len() - 1]];
        for (l, &t) in tags.iter().enumerate() {
            s += em[l * k + t];
            if l > 0 {
                s += self.trans(tags[l - 1], t);
            }
        }
        s
    }

    pub fn log_partition(&self, em: &[f64]) -> f64 {
        let k = self.num_tags;
        let mut alpha: Vec<f64> = (0..k).map(|j| self.start[j] + em[j]).collect();
        let mut scratch = vec![0.0; k];
        for l in 1..self.rows(em) {
            let next: Vec<f64> = (0..k)
                .map(|j| {
                    for i in 0..k {
                        scratch[i] = alpha[i] + self.trans(i, j);
                    }
                    logsumexp(&scratch) + em[l * k + j]
                })
                .collect();
            alpha = next;
        }
        let fin: Vec<f64> = alpha.iter().zip(&self.end).map(|(a, e)| a + e).collect();
        logsumexp(&fin)
    }

    /// Exact best path and its score. Ties go to the lower tag index, both at
    /// each backpointer and at the final position.
    pub fn viterbi_decode(&self, em: &[f64]) -> Result<(Vec<usize>, f64)> {
        let k = self.num_tags;
        let n = self.rows(em);
        if n == 0 || em.len() != n * k {
            return Err(Error::Dimension(format!(
                "{} emission values do not form rows of {k} tags",
                em.len()
            )));
        }
        let mut delta: Vec<f64> = (0..k).map(|j| self.start[j] + em[j]).collect();
        let mut back = vec![0usize; n * k];
        for l in 1..n {
            let mut next = vec![0.0; k];
            for j in 0..k {
                let mut best = 0;
                let mut best_v = delta[0] + self.trans(0, j);
                for i in 1..k {
                    let v = delta[i] + self.trans(i, j);
                    if v > best_v {
                        best_v = v;
                        best = i;
                    }
                }
                back[l * k + j] = best;
                next[j] = best_v + em[l * k + j];
            }
            delta = next;
        }
        let mut last = 0;
        let mut best_v = delta[0] + self.end[0];
        for j in 1..k {
            let v = delta[j] + self.end[j];
            if v > best_v {
                best_v = v;
                last = j;
            }
        }
        let mut path = vec![0; n];
        path[n - 1] = last;
        for l in (1..n).rev() {
            path[l - 1] = back[l * k + path[l]];
        }
        Ok((path, best_v))
    }

    /// `log P(tags | emissions)`, always ≤ 0.
    pub fn sequence_log_likelihood(&self, em: &[f64], tags: &[usize]) -> f64 {
        (self.score(em, tags) - self.log_partition(em)).min(0.0)
    }
}
