//! Criteria checked against exhaustive or independently written oracles.

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use compslu::asr::{beam_search, BeamConfig, DecoderConfig, DecoderScorer, EncodedSpeech, TokenDecoder};
use compslu::crf::{self, CrfTensors, CrfWeights};
use compslu::metrics::{cer, error_quadrants, micro_f1, slu_f1, wer, Annotated, F1Mode};
use compslu::nlu::{HeadKind, NluConfig, NluSubnet};
use compslu::tagging::{
    align_to_subtokens, bio_to_spans, build_enriched_sequence, close_marker, collapse_from_subtokens, open_marker,
    parse_enriched_sequence, spans_to_bio, EntitySpan, LabelSet, Tag, Tokenization,
};
use compslu::tensorcore::layers::BlockConfig;
use compslu::tensorcore::{AttentionMask, Axis, Graph, ParamStore, Shape, Tensor};

use crate::common::{
    brute_crf, brute_force_decode, naive_f1, numeric_gradient, oracle_cer, oracle_wer, relative_error,
};
use crate::Outcome;

fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn crf_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut worst_z, mut worst_v, mut path_mismatch) = (0.0f64, 0.0f64, 0);
    for _ in 0..200 {
        let n = rng.random_range(1..=6);
        let k = rng.random_range(1..=5);
        let em: Vec<Vec<f64>> = (0..n).map(|_| uniform(&mut rng, k, 3.0)).collect();
        let trans: Vec<Vec<f64>> = (0..k).map(|_| uniform(&mut rng, k, 2.0)).collect();
        let start = uniform(&mut rng, k, 1.0);
        let end = uniform(&mut rng, k, 1.0);
        let (log_z, best, best_score) = brute_crf(&em, &trans, &start, &end);
        let w = CrfWeights {
            num_tags: k,
            transitions: trans.concat(),
            start,
            end,
        };
        let flat = em.concat();
        worst_z = worst_z.max((w.log_partition(&flat) - log_z).abs());
        let (path, score) = w.viterbi_decode(&flat).expect("viterbi");
        worst_v = worst_v.max((score - best_score).abs());
        path_mismatch += usize::from(path != best);
    }
    Outcome::check(
        worst_z < 1e-8 && worst_v < 1e-8 && path_mismatch == 0,
        format!("200 instances: max |ΔlogZ| {worst_z:.1e}, max |Δviterbi| {worst_v:.1e}, path mismatches {path_mismatch}"),
    )
}

/// One gradient check: `build` maps leaf tensors to an output whose
/// weighted sum is the loss.
struct GradCase {
    name: &'static str,
    inputs: Vec<(Shape, Vec<f64>)>,
    train_seed: Option<u64>,
    /// Parameters the graph reads, held fixed during the check.
    store: Option<ParamStore>,
    build: Box<dyn Fn(&mut Graph, &[Tensor]) -> Tensor>,
}

fn probe_weights(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.3 + 0.7 * ((i * 7919) % 13) as f64 / 13.0).collect()
}

fn scalar_loss(g: &mut Graph, out: Tensor) -> Tensor {
    if out.shape().numel() == 1 {
        return out;
    }
    let w = g.input(out.shape(), probe_weights(out.shape().numel())).unwrap();
    let m = g.mul(out, w).unwrap();
    g.sum(m)
}

fn case_error(case: &GradCase) -> f64 {
    let sizes: Vec<usize> = case.inputs.iter().map(|(s, _)| s.numel()).collect();
    let flat: Vec<f64> = case.inputs.iter().flat_map(|(_, d)| d.iter().copied()).collect();
    let run = |x: &[f64], grads: bool| -> (f64, Vec<f64>) {
        let mut g = match &case.store {
            Some(store) => Graph::with_params(store),
            None => Graph::new(),
        };
        if let Some(seed) = case.train_seed {
            g.set_train(true, seed);
        }
        let mut off = 0;
        let leaves: Vec<Tensor> = case
            .inputs
            .iter()
            .zip(&sizes)
            .map(|((s, _), &n)| {
                let t = g.input(*s, x[off..off + n].to_vec()).unwrap();
                off += n;
                t
            })
            .collect();
        let out = (case.build)(&mut g, &leaves);
        let loss = scalar_loss(&mut g, out);
        let value = g.scalar(loss);
        if !grads {
            return (value, Vec::new());
        }
        g.backward(loss).unwrap();
        (value, leaves.iter().flat_map(|t| g.grad(*t).to_vec()).collect())
    };
    let (_, analytic) = run(&flat, true);
    let numeric = numeric_gradient(&flat, 1e-5, |x| run(x, false).0);
    analytic
        .iter()
        .zip(&numeric)
        .map(|(a, b)| relative_error(*a, *b))
        .fold(0.0, f64::max)
}

fn away_from_zero(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| if x.abs() < 1e-2 { x + 0.05 } else { x }).collect()
}

fn grad_cases(rng: &mut ChaCha8Rng, trial: u64) -> Vec<GradCase> {
    let r = rng.random_range(1..=3);
    let c = rng.random_range(2..=4);
    let k = rng.random_range(1..=3);
    let mut m = |rows: usize, cols: usize| (Shape::new(rows, cols), uniform(rng, rows * cols, 1.0));
    let (a, b, bt, same) = (m(r, k), m(k, c), m(c, k), m(r, c));
    let (x, row, col, extra_rows) = (m(r, c), m(1, c), m(r, 1), m(k, c));
    let (x2, x3, x4, x5, x6, x7, x8, x9) = (m(r, c), m(r, c), m(r, c), m(r, c), m(r, c), m(r, c), m(r, c), m(r, c));
    let (gamma, beta, table) = (m(1, c), m(1, c), m(4, c));
    let (x10, x11, x12, x13, x14, x15) = (m(r, c), m(r, c), m(r, k), m(r, c), m(r, c), m(r, c));
    let relu_in = (x5.0, away_from_zero(x5.1));
    let ids: Vec<usize> = (0..r).map(|_| rng.random_range(0..4)).collect();
    let mask: Vec<bool> = (0..r * c).map(|_| rng.random_bool(0.7)).collect();
    let mask = AttentionMask::new(r, c, mask).unwrap();
    let targets: Vec<usize> = (0..r).map(|_| rng.random_range(0..c)).collect();
    let positions: Vec<(usize, usize)> = (0..3).map(|_| (rng.random_range(0..r), rng.random_range(0..c))).collect();
    let slice_start = rng.random_range(0..c);
    let slice_len = rng.random_range(1..=c - slice_start);
    let row_start = rng.random_range(0..r);
    let case = |name, inputs, build: Box<dyn Fn(&mut Graph, &[Tensor]) -> Tensor>| GradCase {
        name,
        inputs,
        train_seed: None,
        store: None,
        build,
    };
    let mut cases = vec![
        case("matmul", vec![a.clone(), b], Box::new(|g, t| g.matmul(t[0], t[1]).unwrap())),
        case("matmul_nt", vec![a, bt], Box::new(|g, t| g.matmul_nt(t[0], t[1]).unwrap())),
        case("transpose", vec![x.clone()], Box::new(|g, t| g.transpose(t[0]))),
        case("add", vec![x.clone(), same.clone()], Box::new(|g, t| g.add(t[0], t[1]).unwrap())),
        case("sub", vec![x.clone(), same.clone()], Box::new(|g, t| g.sub(t[0], t[1]).unwrap())),
        case("mul", vec![x2, same], Box::new(|g, t| g.mul(t[0], t[1]).unwrap())),
        case("add_row", vec![x3, row], Box::new(|g, t| g.add_row(t[0], t[1]).unwrap())),
        case("add_col", vec![x4, col], Box::new(|g, t| g.add_col(t[0], t[1]).unwrap())),
        case("scale", vec![x6], Box::new(|g, t| g.scale(t[0], -1.7))),
        case("relu", vec![relu_in], Box::new(|g, t| g.relu(t[0]))),
        case(
            "layer_norm",
            vec![x7, gamma, beta],
            Box::new(|g, t| g.layer_norm(t[0], t[1], t[2], 1e-5).unwrap()),
        ),
        case(
            "embedding",
            vec![table],
            Box::new(move |g, t| g.embedding(t[0], &ids).unwrap()),
        ),
        case(
            "masked_softmax",
            vec![x8],
            Box::new(move |g, t| g.masked_softmax(t[0], Some(&mask)).unwrap()),
        ),
        case("softmax", vec![x9.clone()], Box::new(|g, t| g.masked_softmax(t[0], None).unwrap())),
        case("log_softmax", vec![x9], Box::new(|g, t| g.log_softmax(t[0]))),
        case(
            "softmax_cross_entropy",
            vec![x10],
            Box::new(move |g, t| g.softmax_cross_entropy(t[0], &targets, None).unwrap()),
        ),
        case("logsumexp_rows", vec![x11.clone()], Box::new(|g, t| g.logsumexp(t[0], Axis::Rows))),
        case("logsumexp_cols", vec![x11], Box::new(|g, t| g.logsumexp(t[0], Axis::Cols))),
        case(
            "slice_cols",
            vec![x13.clone()],
            Box::new(move |g, t| g.slice_cols(t[0], slice_start, slice_len).unwrap()),
        ),
        case(
            "slice_rows",
            vec![x13],
            Box::new(move |g, t| g.slice_rows(t[0], row_start, r - row_start).unwrap()),
        ),
        case("concat_cols", vec![x14.clone(), x12], Box::new(|g, t| g.concat_cols(&[t[0], t[1]]).unwrap())),
        case("concat_rows", vec![x14, extra_rows], Box::new(|g, t| g.concat_rows(&[t[0], t[1]]).unwrap())),
        case("sum", vec![x15.clone()], Box::new(|g, t| g.sum(t[0]))),
        case(
            "gather",
            vec![x15.clone()],
            Box::new(move |g, t| g.gather(t[0], &positions).unwrap()),
        ),
    ];
    cases.push(GradCase {
        name: "dropout",
        inputs: vec![x15],
        train_seed: Some(trial),
        store: None,
        build: Box::new(|g, t| g.dropout(t[0], 0.3)),
    });
    cases
}

fn crf_loss_case(rng: &mut ChaCha8Rng) -> GradCase {
    let n = rng.random_range(1..=4);
    let k = rng.random_range(2..=4);
    let gold: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    GradCase {
        name: "crf_nll",
        inputs: vec![
            (Shape::new(n, k), uniform(rng, n * k, 1.5)),
            (Shape::new(k, k), uniform(rng, k * k, 1.0)),
            (Shape::new(1, k), uniform(rng, k, 1.0)),
            (Shape::new(1, k), uniform(rng, k, 1.0)),
        ],
        train_seed: None,
        store: None,
        build: Box::new(move |g, t| {
            let p = CrfTensors {
                transitions: t[1],
                start: t[2],
                end: t[3],
            };
            crf::nll_loss(g, t[0], &p, &gold).unwrap()
        }),
    }
}

/// Both NLU heads end to end from decoder and speech states, through the
/// attention stack and emission layer.
fn head_cases(rng: &mut ChaCha8Rng, trial: u64) -> Vec<GradCase> {
    let (n, t_frames, dm) = (rng.random_range(1..=3), rng.random_range(1..=3), 4);
    let num_tags = 4;
    let gold: Vec<usize> = (0..n).map(|_| rng.random_range(0..num_tags)).collect();
    let h_asr = (Shape::new(n, dm), uniform(rng, n * dm, 1.0));
    let h_e = (Shape::new(t_frames, dm), uniform(rng, t_frames * dm, 1.0));
    [HeadKind::Crf, HeadKind::Token]
        .into_iter()
        .map(|head| {
            let mut store = ParamStore::new();
            let cfg = NluConfig {
                blocks: BlockConfig {
                    layers: 1,
                    dm,
                    heads: 2,
                    ff_dim: 6,
                    dropout: 0.0,
                },
                speech_attention: true,
                head,
                num_tags,
            };
            let mut init = ChaCha8Rng::seed_from_u64(trial);
            let nlu = NluSubnet::new(&mut store, "nlu", &cfg, &mut init).unwrap();
            if let Some(p) = &nlu.crf {
                for id in [p.transitions, p.start, p.end] {
                    let len = store.get(id).data.len();
                    store.get_mut(id).data = uniform(&mut init, len, 0.5);
                }
            }
            let gold = gold.clone();
            GradCase {
                name: if head == HeadKind::Crf { "crf_head_loss" } else { "token_head_loss" },
                inputs: vec![h_asr.clone(), h_e.clone()],
                train_seed: None,
                store: Some(store),
                build: Box::new(move |g, t| {
                    let h = nlu.encode(g, t[0], Some(t[1])).unwrap();
                    nlu.head_loss(g, h, &gold).unwrap()
                }),
            }
        })
        .collect()
}

pub fn gradient_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst: Vec<(&'static str, f64)> = Vec::new();
    let mut record = |name: &'static str, err: f64| match worst.iter_mut().find(|(n, _)| *n == name) {
        Some(entry) => entry.1 = entry.1.max(err),
        None => worst.push((name, err)),
    };
    for trial in 0..50u64 {
        for case in grad_cases(&mut rng, trial) {
            record(case.name, case_error(&case));
        }
        let crf_case = crf_loss_case(&mut rng);
        record(crf_case.name, case_error(&crf_case));
        for case in head_cases(&mut rng, trial) {
            record(case.name, case_error(&case));
        }
    }
    let (name, err) = worst.iter().copied().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    let failing: Vec<&str> = worst.iter().filter(|(_, e)| *e >= 1e-4).map(|(n, _)| *n).collect();
    Outcome::check(
        failing.is_empty(),
        format!(
            "{} operations × 50 shapes: worst rel. error {err:.1e} ({name}){}",
            worst.len(),
            if failing.is_empty() { String::new() } else { format!(", failing: {}", failing.join(", ")) }
        ),
    )
}

pub fn beam_exactness() -> Outcome {
    let (vocab, max_len, dm) = (4, 3, 8);
    let mut mismatches = 0;
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let mut store = ParamStore::new();
        let cfg = DecoderConfig {
            blocks: BlockConfig {
                layers: 1,
                dm,
                heads: 2,
                ff_dim: 16,
                dropout: 0.0,
            },
            vocab_size: vocab,
            max_len,
        };
        let decoder = TokenDecoder::new(&mut store, "dec", &cfg, &mut rng).unwrap();
        // sharpen the output layer so hypotheses are well separated
        store.get_mut(decoder.output.weight).data.iter_mut().for_each(|w| *w *= 4.0);
        let rows = rng.random_range(1..=4);
        let memory = EncodedSpeech {
            rows,
            dm,
            data: uniform(&mut rng, rows * dm, 1.0),
        };
        let scorer = DecoderScorer {
            store: &store,
            decoder: &decoder,
            memory: &memory,
            bos: 0,
            eos: 1,
        };
        let exhaustive = (vocab - 1).pow(max_len as u32);
        let hyps = beam_search(
            &scorer,
            BeamConfig {
                beam_size: exhaustive,
                length_penalty: 0.0,
            },
        )
        .unwrap();
        let (best, best_lp) = brute_force_decode(&scorer);
        mismatches += usize::from(hyps[0].tokens != best);
        worst = worst.max((hyps[0].log_prob - best_lp).abs());
    }
    Outcome::check(
        mismatches == 0 && worst < 1e-12,
        format!("20 models, |V|=4, max length 3: top-hypothesis mismatches {mismatches}, max |Δlog p| {worst:.1e}"),
    )
}

const LABELS: [&str; 3] = ["PER", "LOC", "ORG"];

fn label_set() -> LabelSet {
    LabelSet::new(&LABELS).unwrap()
}

/// Sentence of 1–10 words with non-overlapping spans.
fn sentence() -> impl Strategy<Value = (Vec<String>, Vec<EntitySpan>)> {
    (1usize..=10)
        .prop_flat_map(|n| {
            (
                prop::collection::vec("[a-z]{1,7}", n),
                prop::collection::vec((0usize..4, 1usize..=3, 0usize..3), 0..=4),
            )
        })
        .prop_map(|(words, raw)| {
            let mut spans = Vec::new();
            let mut pos = 0;
            for (gap, len, label) in raw {
                let start = pos + gap;
                let end = start + len - 1;
                if end >= words.len() {
                    break;
                }
                spans.push(EntitySpan::new(LABELS[label], start, end, &words));
                pos = end + 1;
            }
            (words, spans)
        })
}

fn any_tag() -> impl Strategy<Value = Tag> {
    prop_oneof![
        Just(Tag::Outside),
        Just(Tag::Null),
        (0usize..3).prop_map(Tag::Begin),
        (0usize..3).prop_map(Tag::Inside),
    ]
}

fn enriched_token() -> impl Strategy<Value = String> {
    prop_oneof![
        "[a-z]{1,5}",
        (0usize..3).prop_map(|l| open_marker(LABELS[l])),
        (0usize..3).prop_map(|l| close_marker(LABELS[l])),
        "⟨[A-Z/]{0,4}⟩?",
        "[⟨⟩/a-z ]{0,6}",
    ]
}

fn spans_valid(spans: &[EntitySpan], words: &[String]) -> bool {
    spans
        .iter()
        .all(|s| s.start <= s.end && s.end < words.len() && s.mention == words[s.start..=s.end].join(" "))
}

fn run_suite(runner: &mut TestRunner, failures: &mut Vec<String>) {
    let labels = label_set();
    macro_rules! note {
        ($name:expr, $result:expr $(,)?) => {
            if let Err(e) = $result {
                failures.push(format!("{}: {e}", $name));
            }
        };
    }
    note!(
        "spans↔BIO",
        runner.run(&sentence(), |(words, spans)| {
            let bio = spans_to_bio(&labels, &spans, words.len()).unwrap();
            prop_assert_eq!(bio.len(), words.len());
            prop_assert_eq!(bio_to_spans(&labels, &bio, &words), spans);
            Ok(())
        }),
    );
    note!(
        "subtoken alignment",
        runner.run(
            &(sentence(), prop::collection::vec(1usize..=3, 10)),
            |((words, spans), pieces)| {
                let subtokens: Vec<String> = words
                    .iter()
                    .zip(&pieces)
                    .flat_map(|(w, &p)| {
                        let chars: Vec<char> = w.chars().collect();
                        let p = p.min(chars.len());
                        let step = chars.len().div_ceil(p);
                        chars
                            .chunks(step)
                            .enumerate()
                            .map(|(i, c)| {
                                let s: String = c.iter().collect();
                                if i == 0 { s } else { format!("##{s}") }
                            })
                            .collect::<Vec<_>>()
                    })
                    .collect();
                let tok = Tokenization::from_subtokens(&subtokens);
                prop_assert_eq!(&tok.words, &words);
                let bio = spans_to_bio(&labels, &spans, words.len()).unwrap();
                let aligned = align_to_subtokens(&bio, &tok).unwrap();
                prop_assert_eq!(aligned.len(), subtokens.len());
                for (tag, first) in aligned.iter().zip(&tok.first) {
                    prop_assert_eq!(*tag == Tag::Null, !first);
                }
                let (back, ignored) = collapse_from_subtokens(&aligned, &tok).unwrap();
                prop_assert_eq!(back, bio);
                prop_assert_eq!(ignored, 0);
                Ok(())
            },
        ),
    );
    note!(
        "enriched codec",
        runner.run(&sentence(), |(words, spans)| {
            let enriched = build_enriched_sequence(&words, &spans);
            prop_assert_eq!(enriched.len(), words.len() + 2 * spans.len());
            let parsed = parse_enriched_sequence(&enriched);
            prop_assert_eq!(parsed.words, words);
            prop_assert_eq!(parsed.spans, spans);
            prop_assert_eq!(parsed.malformed, 0);
            Ok(())
        }),
    );
    note!(
        "enriched fuzz",
        runner.run(&prop::collection::vec(enriched_token(), 0..20), |tokens| {
            let parsed = parse_enriched_sequence(&tokens);
            prop_assert!(spans_valid(&parsed.spans, &parsed.words));
            Ok(())
        }),
    );
    note!(
        "BIO fuzz",
        runner.run(
            &prop::collection::vec(any_tag(), 0..12).prop_flat_map(|tags| {
                let n = tags.len();
                (Just(tags), prop::collection::vec("[a-z]{1,4}", n))
            }),
            |(tags, words)| {
                let spans = bio_to_spans(&labels, &tags, &words);
                prop_assert!(spans_valid(&spans, &words));
                let tok = Tokenization::from_subtokens(&words);
                let (collapsed, _) = collapse_from_subtokens(&tags, &tok).unwrap();
                prop_assert_eq!(collapsed.len(), tok.n_words());
                Ok(())
            },
        ),
    );
    note!(
        "labels without words",
        runner.run(
            &prop::collection::vec((0usize..3, any::<bool>()), 0..12),
            |markers| {
                let tokens: Vec<String> = markers
                    .iter()
                    .map(|&(l, open)| if open { open_marker(LABELS[l]) } else { close_marker(LABELS[l]) })
                    .collect();
                let parsed = parse_enriched_sequence(&tokens);
                prop_assert!(parsed.spans.is_empty());
                prop_assert!(parsed.words.is_empty());
                Ok(())
            },
        ),
    );
}

pub fn tagging_totality() -> Outcome {
    let mut runner = TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    });
    let mut failures = Vec::new();
    run_suite(&mut runner, &mut failures);
    let corrupt = parse_enriched_sequence(&["⟨PER⟩", "⟨/PER⟩", "⟨LOC⟩", "⟨/LOC⟩"]);
    if !corrupt.spans.is_empty() {
        failures.push(format!("label-only sequence parsed to {} spans", corrupt.spans.len()));
    }
    Outcome::check(
        failures.is_empty(),
        if failures.is_empty() {
            "6 properties × 1000 cases; label-only output parses to 0 spans".to_string()
        } else {
            failures.join("; ")
        },
    )
}

const WORDS: [&str; 8] = ["call", "play", "marlon", "belville", "next", "soday", "to", "the"];

fn random_sentence(rng: &mut ChaCha8Rng, max: usize) -> Vec<String> {
    let n = rng.random_range(0..=max);
    (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())].to_string()).collect()
}

fn random_spans(rng: &mut ChaCha8Rng, words: &[String]) -> Vec<EntitySpan> {
    let mut spans = Vec::new();
    let mut pos = 0;
    while pos < words.len() && rng.random_bool(0.6) {
        let start = rng.random_range(pos..words.len());
        let end = rng.random_range(start..words.len().min(start + 3));
        spans.push(EntitySpan::new(LABELS[rng.random_range(0..3)], start, end, words));
        pos = end + 1;
    }
    spans
}

/// A prediction that keeps some gold spans, garbles others, and adds noise.
fn perturbed(rng: &mut ChaCha8Rng, gold: &[EntitySpan], words: &[String]) -> Vec<EntitySpan> {
    let mut out = Vec::new();
    for s in gold {
        if !rng.random_bool(0.7) {
            continue;
        }
        let mut s = s.clone();
        if rng.random_bool(0.2) {
            s.label = LABELS[rng.random_range(0..3)].to_string();
        }
        if rng.random_bool(0.2) {
            s.mention = WORDS[rng.random_range(0..WORDS.len())].to_string();
        }
        out.push(s);
    }
    out.extend(random_spans(rng, words).into_iter().filter(|_| rng.random_bool(0.3)));
    out
}

pub fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut problems = Vec::new();
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let r = random_sentence(&mut rng, 8).join(" ");
        let h = random_sentence(&mut rng, 8).join(" ");
        worst = worst
            .max((wer(&r, &h) - oracle_wer(&r, &h)).abs())
            .max((cer(&r, &h) - oracle_cer(&r, &h)).abs());
    }
    if worst > 1e-12 {
        problems.push(format!("WER/CER differ from the reference DP by {worst:.1e}"));
    }
    let (mut f1_gap, mut slu_gap, mut quadrant_bad) = (0.0f64, 0.0f64, 0);
    for _ in 0..200 {
        let n = rng.random_range(1..=12);
        let mut gold = Vec::new();
        let mut pred = Vec::new();
        let mut exact = Vec::new();
        let (mut gold_ann, mut pred_ann) = (Vec::new(), Vec::new());
        for _ in 0..n {
            let words = random_sentence(&mut rng, 8);
            let g = random_spans(&mut rng, &words);
            let p = perturbed(&mut rng, &g, &words);
            // label-matched pairs carry identical mentions
            let mut e: Vec<EntitySpan> = g.iter().filter(|_| rng.random_bool(0.6)).cloned().collect();
            let used: Vec<&str> = g.iter().map(|s| s.label.as_str()).collect();
            e.extend(
                random_spans(&mut rng, &words)
                    .into_iter()
                    .filter(|s| !used.contains(&s.label.as_str())),
            );
            let hyp_words = if rng.random_bool(0.5) { words.clone() } else { random_sentence(&mut rng, 8) };
            gold_ann.push(Annotated {
                words: words.clone(),
                spans: g.clone(),
            });
            pred_ann.push(Annotated {
                words: hyp_words,
                spans: p.clone(),
            });
            gold.push(g);
            pred.push(p);
            exact.push(e);
        }
        for (mode, label_only) in [(F1Mode::Full, false), (F1Mode::LabelOnly, true)] {
            let lib = micro_f1(&gold, &pred, mode).unwrap().f1;
            f1_gap = f1_gap.max((lib - naive_f1(&gold, &pred, label_only)).abs());
        }
        let slu = slu_f1(&gold, &exact).unwrap().slu_f1;
        slu_gap = slu_gap.max((slu - micro_f1(&gold, &exact, F1Mode::Full).unwrap().f1).abs());
        let q = error_quadrants(&gold_ann, &pred_ann).unwrap();
        quadrant_bad += usize::from(q.total() != n);
    }
    if f1_gap > 1e-12 {
        problems.push(format!("micro/label F1 differ from naive counting by {f1_gap:.1e}"));
    }
    if slu_gap > 1e-12 {
        problems.push(format!("SLU-F1 differs from micro F1 under exact matches by {slu_gap:.1e}"));
    }
    if quadrant_bad > 0 {
        problems.push(format!("{quadrant_bad} corpora whose quadrants do not partition them"));
    }
    Outcome::check(
        problems.is_empty(),
        if problems.is_empty() {
            format!("500 WER/CER pairs (max Δ {worst:.1e}); 200 corpora for F1, SLU-F1 and quadrants")
        } else {
            problems.join("; ")
        },
    )
}
