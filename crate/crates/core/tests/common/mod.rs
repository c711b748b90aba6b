//! Reference implementations used as oracles. None of them call into the
//! library routine they check.

#![allow(dead_code)]

use std::collections::BTreeMap;

use compslu::asr::StepScorer;
use compslu::tagging::EntitySpan;

/// Every tag path of length `n` over `k` tags, in lexicographic order.
pub fn all_paths(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..k).map(move |t| {
                    let mut q = p.clone();
                    q.push(t);
                    q
                })
            })
            .collect();
    }
    out
}

/// Linear-chain score with `trans[from][to]`, start and end vectors.
pub fn path_score(em: &[Vec<f64>], trans: &[Vec<f64>], start: &[f64], end: &[f64], path: &[usize]) -> f64 {
    let mut s = start[path[0]] + end[*path.last().unwrap()];
    for (l, &t) in path.iter().enumerate() {
        s += em[l][t];
        if l > 0 {
            s += trans[path[l - 1]][t];
        }
    }
    s
}

/// Log partition and exhaustive argmax (first path wins ties).
pub fn brute_crf(em: &[Vec<f64>], trans: &[Vec<f64>], start: &[f64], end: &[f64]) -> (f64, Vec<usize>, f64) {
    let k = start.len();
    let scores: Vec<(Vec<usize>, f64)> = all_paths(em.len(), k)
        .into_iter()
        .map(|p| {
            let s = path_score(em, trans, start, end, &p);
            (p, s)
        })
        .collect();
    let m = scores.iter().map(|(_, s)| *s).fold(f64::NEG_INFINITY, f64::max);
    let log_z = m + scores.iter().map(|(_, s)| (s - m).exp()).sum::<f64>().ln();
    let mut best = 0;
    for (i, (_, s)) in scores.iter().enumerate() {
        if *s > scores[best].1 {
            best = i;
        }
    }
    (log_z, scores[best].0.clone(), scores[best].1)
}

/// Per-position tag marginals by enumeration.
pub fn brute_marginals(em: &[Vec<f64>], trans: &[Vec<f64>], start: &[f64], end: &[f64]) -> Vec<Vec<f64>> {
    let (log_z, _, _) = brute_crf(em, trans, start, end);
    let k = start.len();
    let mut m = vec![vec![0.0; k]; em.len()];
    for p in all_paths(em.len(), k) {
        let w = (path_score(em, trans, start, end, &p) - log_z).exp();
        for (l, &t) in p.iter().enumerate() {
            m[l][t] += w;
        }
    }
    m
}

/// Plain recursive edit distance with memoization.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    fn go<T: PartialEq>(a: &[T], b: &[T], memo: &mut BTreeMap<(usize, usize), usize>) -> usize {
        if a.is_empty() {
            return b.len();
        }
        if b.is_empty() {
            return a.len();
        }
        let key = (a.len(), b.len());
        if let Some(&d) = memo.get(&key) {
            return d;
        }
        let (ra, rb) = (&a[..a.len() - 1], &b[..b.len() - 1]);
        let sub = go(ra, rb, memo) + usize::from(a[a.len() - 1] != b[b.len() - 1]);
        let del = go(ra, b, memo) + 1;
        let ins = go(a, rb, memo) + 1;
        let d = sub.min(del).min(ins);
        memo.insert(key, d);
        d
    }
    go(a, b, &mut BTreeMap::new())
}

pub fn oracle_wer(reference: &str, hypothesis: &str) -> f64 {
    let r: Vec<&str> = reference.split_whitespace().collect();
    let h: Vec<&str> = hypothesis.split_whitespace().collect();
    levenshtein(&r, &h) as f64 / r.len().max(1) as f64
}

pub fn oracle_cer(reference: &str, hypothesis: &str) -> f64 {
    let norm = |s: &str| -> Vec<char> {
        s.split_whitespace()
            .map(str::to_lowercase)
            .collect::<Vec<_>>()
            .join(" ")
            .chars()
            .collect()
    };
    let (r, h) = (norm(reference), norm(hypothesis));
    levenshtein(&r, &h) as f64 / r.len().max(1) as f64
}

/// Greedy one-to-one matching by linear scan over unused gold spans.
pub fn naive_matches(gold: &[EntitySpan], pred: &[EntitySpan], label_only: bool) -> usize {
    let key = |s: &EntitySpan| {
        let mention = s.mention.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ");
        if label_only {
            (s.label.clone(), String::new())
        } else {
            (s.label.clone(), mention)
        }
    };
    let mut used = vec![false; gold.len()];
    let mut tp = 0;
    for p in pred {
        if let Some(i) = (0..gold.len()).find(|&i| !used[i] && key(&gold[i]) == key(p)) {
            used[i] = true;
            tp += 1;
        }
    }
    tp
}

/// Micro F1 from raw counts, 1.0 when there is nothing to find or predict.
pub fn naive_f1(gold: &[Vec<EntitySpan>], pred: &[Vec<EntitySpan>], label_only: bool) -> f64 {
    let tp: usize = gold.iter().zip(pred).map(|(g, p)| naive_matches(g, p, label_only)).sum();
    let ng: usize = gold.iter().map(Vec::len).sum();
    let np: usize = pred.iter().map(Vec::len).sum();
    if ng == 0 && np == 0 {
        return 1.0;
    }
    if tp == 0 {
        return 0.0;
    }
    let (p, r) = (tp as f64 / np as f64, tp as f64 / ng as f64);
    2.0 * p * r / (p + r)
}

/// Central difference of `f` at `x` along every coordinate.
pub fn numeric_gradient(x: &[f64], eps: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + eps;
            let hi = f(&probe);
            probe[i] = x[i] - eps;
            let lo = f(&probe);
            probe[i] = x[i];
            (hi - lo) / (2.0 * eps)
        })
        .collect()
}

/// Relative error with an absolute floor for entries near zero.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

/// Exhaustive search over every finished or length-capped output of a
/// scorer. Returns the best token sequence (with BOS) and its log-prob.
pub fn brute_force_decode<S: StepScorer>(scorer: &S) -> (Vec<usize>, f64) {
    let (bos, eos) = (scorer.bos(), scorer.eos());
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut stack = vec![(vec![bos], 0.0)];
    while let Some((prefix, lp)) = stack.pop() {
        let (_, step) = scorer.step(&prefix).unwrap();
        for (t, &l) in step.iter().enumerate() {
            if t == bos {
                continue;
            }
            let mut seq = prefix.clone();
            seq.push(t);
            let total = lp + l;
            if t == eos || seq.len() > scorer.max_len() {
                let better = match &best {
                    None => true,
                    Some((b, s)) => total > *s || (total == *s && seq < *b),
                };
                if better {
                    best = Some((seq, total));
                }
            } else {
                stack.push((seq, total));
            }
        }
    }
    best.unwrap()
}

/// Sample Pearson correlation, computed directly from the definition.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
