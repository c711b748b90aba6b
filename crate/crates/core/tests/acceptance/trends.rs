//! Criteria that train systems on the synthetic corpus.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use compslu::metrics::{error_quadrants, likelihood_error_correlation, micro_f1, score_corpus, Annotated, F1Mode};
use compslu::nlu::HeadKind;
use compslu::pipelines::config::ExperimentConfig;
use compslu::pipelines::{write_predictions, DecodeMode, Prediction, System, Trained};
use compslu::synthdata::{generate_corpus, write_corpus, Corpus, SynthConfig};
use compslu::tagging::EntitySpan;

use crate::common::{median, pearson};
use crate::Outcome;

pub const SEEDS: [u64; 3] = [1, 2, 3];
/// Noise giving a probe WER inside the 10–30% band for the attention ablation.
pub const ABLATION_NOISE: f64 = 1.45;

fn workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

pub struct Run {
    pub model: Trained,
    pub beam: Vec<Prediction>,
}

pub fn train(system: System, corpus: &Corpus, seed: u64, tweak: impl FnOnce(&mut ExperimentConfig)) -> Run {
    let mut exp = ExperimentConfig::default();
    exp.train.seed = seed;
    tweak(&mut exp);
    let t = Instant::now();
    let (model, _) = Trained::fit(system, &exp.model, &exp.train, corpus).expect("training");
    let beam = model
        .decode_all(&corpus.test, &DecodeMode::Beam, exp.beam(), workers())
        .expect("decoding");
    eprintln!("  trained {} (seed {seed}) in {:.0}s", system.name(), t.elapsed().as_secs_f64());
    Run { model, beam }
}

fn gold_spans(corpus: &Corpus) -> Vec<Vec<EntitySpan>> {
    corpus.test.iter().map(|e| e.spans.clone()).collect()
}

fn spans(preds: &[Prediction]) -> Vec<Vec<EntitySpan>> {
    preds.iter().map(|p| p.spans.clone()).collect()
}

fn annotated(corpus: &Corpus, preds: &[Prediction]) -> (Vec<Annotated>, Vec<Annotated>) {
    (
        corpus.test.iter().map(Annotated::from).collect(),
        preds.iter().map(Annotated::from).collect(),
    )
}

pub fn f1(corpus: &Corpus, preds: &[Prediction]) -> f64 {
    micro_f1(&gold_spans(corpus), &spans(preds), F1Mode::Full).unwrap().f1
}

fn fmt(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join("/")
}

fn fmt_counts(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.0}")).collect::<Vec<_>>().join("/")
}

pub fn system_ordering(corpus: &Corpus, compositional: &[Run]) -> Outcome {
    let comp: Vec<f64> = compositional.iter().map(|r| f1(corpus, &r.beam)).collect();
    let mut others = BTreeMap::new();
    for system in [System::Direct, System::Cascaded] {
        let scores: Vec<f64> = SEEDS
            .iter()
            .map(|&s| f1(corpus, &train(system, corpus, s, |_| {}).beam))
            .collect();
        others.insert(system.name(), scores);
    }
    let (direct, cascaded) = (&others["direct"], &others["cascaded"]);
    let (mc, md, mk) = (median(&comp), median(direct), median(cascaded));
    Outcome::check(
        mc >= md && md >= mk && mc - mk >= 0.02,
        format!(
            "median F1 compositional {mc:.3} ({}) ≥ direct {md:.3} ({}) ≥ cascaded {mk:.3} ({}); gap {:.1} pts",
            fmt(&comp),
            fmt(direct),
            fmt(cascaded),
            100.0 * (mc - mk)
        ),
    )
}

pub fn speech_attention(corpus: &Corpus) -> Outcome {
    let mut label_f1 = BTreeMap::new();
    let mut recoveries = BTreeMap::new();
    let mut wers = Vec::new();
    for attention in [true, false] {
        for &seed in &SEEDS {
            let run = train(System::Compositional, corpus, seed, |e| e.model.speech_attention = attention);
            let (gold, pred) = annotated(corpus, &run.beam);
            let report = score_corpus(&gold, &pred).unwrap();
            let q = error_quadrants(&gold, &pred).unwrap();
            if attention {
                wers.push(report.wer);
            }
            label_f1.entry(attention).or_insert_with(Vec::new).push(report.label_f1);
            recoveries
                .entry(attention)
                .or_insert_with(Vec::new)
                .push(q.asr_incorrect_entity_correct as f64);
        }
    }
    let wer_ok = wers.iter().all(|w| (0.10..=0.30).contains(w));
    let (on, off) = (median(&label_f1[&true]), median(&label_f1[&false]));
    let (rec_on, rec_off) = (median(&recoveries[&true]), median(&recoveries[&false]));
    Outcome::check(
        wer_ok && on >= off && rec_on >= rec_off,
        format!(
            "σ={ABLATION_NOISE}, WER {}; median Label-F1 on {on:.3} ({}) vs off {off:.3} ({}); (ASR✗, entity✓) on {rec_on} ({}) vs off {rec_off} ({})",
            fmt(&wers),
            fmt(&label_f1[&true]),
            fmt(&label_f1[&false]),
            fmt_counts(&recoveries[&true]),
            fmt_counts(&recoveries[&false]),
        ),
    )
}

pub fn transcript_injection(corpus: &Corpus, run: &Run) -> Outcome {
    let before = run.model.store.clone();
    let beam = f1(corpus, &run.beam);
    let injected = run
        .model
        .decode_all(&corpus.test, &DecodeMode::GoldTranscript, ExperimentConfig::default().beam(), workers())
        .unwrap();
    let gold = f1(corpus, &injected);
    let untouched = run
        .model
        .store
        .iter()
        .zip(before.iter())
        .all(|((_, a), (_, b))| a.data == b.data);
    Outcome::check(
        gold - beam >= 0.05 && untouched,
        format!(
            "gold-transcript F1 {gold:.3} vs beam {beam:.3} (+{:.1} pts), parameters unchanged: {untouched}",
            100.0 * (gold - beam)
        ),
    )
}

pub fn transparency_probes(corpus: &Corpus, run: &Run) -> Outcome {
    let report = run
        .model
        .probe_subnets(&corpus.test, ExperimentConfig::default().beam(), workers())
        .unwrap();
    let (nlu, e2e) = (report.nlu_f1.f1, report.end_to_end_f1.f1);
    Outcome::check(
        report.asr_wer.is_finite() && nlu >= e2e,
        format!("ASR probe WER {:.3}; NLU probe F1 {nlu:.3} ≥ end-to-end F1 {e2e:.3}", report.asr_wer),
    )
}

fn correlation(corpus: &Corpus, preds: &[Prediction]) -> f64 {
    let lls: Vec<f64> = preds.iter().map(|p| p.log_likelihood).collect();
    let lib = likelihood_error_correlation(&lls, &gold_spans(corpus), &spans(preds)).unwrap().r;
    let nll: Vec<f64> = lls.iter().map(|l| -l).collect();
    let errors: Vec<f64> = corpus
        .test
        .iter()
        .zip(preds)
        .map(|(g, p)| {
            let tp = crate::common::naive_matches(&g.spans, &p.spans, false);
            (g.spans.len() + p.spans.len() - 2 * tp) as f64
        })
        .collect();
    let oracle = pearson(&nll, &errors);
    assert!((lib - oracle).abs() < 1e-9, "correlation {lib} disagrees with the reference {oracle}");
    lib
}

pub fn confidence_correlation(corpus: &Corpus, compositional: &[Run]) -> Outcome {
    let crf: Vec<f64> = compositional.iter().map(|r| correlation(corpus, &r.beam)).collect();
    let token: Vec<f64> = SEEDS
        .iter()
        .map(|&s| {
            let run = train(System::Compositional, corpus, s, |e| e.model.head = HeadKind::Token);
            correlation(corpus, &run.beam)
        })
        .collect();
    let (rc, rt) = (median(&crf), median(&token));
    Outcome::check(
        rc > rt && rt > 0.0,
        format!("median r CRF {rc:.3} ({}) > token {rt:.3} ({}) > 0", fmt(&crf), fmt(&token)),
    )
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

pub fn determinism() -> Outcome {
    let synth = SynthConfig {
        n_train: 200,
        n_dev: 20,
        n_test: 40,
        ..SynthConfig::default()
    };
    let mut exp = ExperimentConfig::default();
    exp.train.max_steps = 40;
    let tmp = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for attempt in 0..2 {
        let dir = tmp.path().join(format!("run{attempt}"));
        let corpus_dir = dir.join("corpus");
        let corpus = generate_corpus(&synth).unwrap();
        write_corpus(&corpus, &corpus_dir).unwrap();
        let step0 = Trained::initial_loss(System::Compositional, &exp.model, &exp.train, &corpus).unwrap();
        let (model, _) = Trained::fit(System::Compositional, &exp.model, &exp.train, &corpus).unwrap();
        let preds = model.decode_all(&corpus.test, &DecodeMode::Beam, exp.beam(), workers()).unwrap();
        let dump = dir.join("predictions.jsonl");
        write_predictions(&dump, &preds).unwrap();
        runs.push((dir_bytes(&corpus_dir), step0.to_bits(), std::fs::read(&dump).unwrap()));
    }
    let corpus_same = runs[0].0 == runs[1].0;
    let loss_same = runs[0].1 == runs[1].1;
    let dump_same = runs[0].2 == runs[1].2;
    Outcome::check(
        corpus_same && loss_same && dump_same,
        format!(
            "two runs: {} corpus files identical {corpus_same}, step-0 loss {} identical {loss_same}, decode dump identical {dump_same}",
            runs[0].0.len(),
            f64::from_bits(runs[0].1)
        ),
    )
}
