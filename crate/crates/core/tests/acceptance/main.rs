//! Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero when
//! any criterion fails. Set `ACCEPTANCE_ONLY=1,3` to run a subset.

#[path = "../common/mod.rs"]
mod common;
mod exact;
mod trends;

use std::process::ExitCode;
use std::time::Instant;

use compslu::pipelines::System;
use compslu::synthdata::{generate_corpus, SynthConfig};

pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn check(pass: bool, detail: String) -> Self {
        Outcome { pass, detail }
    }
}

struct Report {
    only: Option<Vec<u32>>,
    failed: usize,
}

impl Report {
    fn wants(&self, id: u32) -> bool {
        self.only.as_ref().is_none_or(|ids| ids.contains(&id))
    }

    fn record(&mut self, id: u32, title: &str, budget: Option<f64>, f: impl FnOnce() -> Outcome) {
        if !self.wants(id) {
            return;
        }
        let t = Instant::now();
        let mut out = f();
        let secs = t.elapsed().as_secs_f64();
        if let Some(limit) = budget {
            if secs >= limit {
                out.pass = false;
                out.detail.push_str(&format!("; exceeded {limit:.0}s budget"));
            }
        }
        self.failed += usize::from(!out.pass);
        println!(
            "{} [{id:>2}] {title}: {} ({secs:.1}s)",
            if out.pass { "PASS" } else { "FAIL" },
            out.detail
        );
    }
}

fn main() -> ExitCode {
    let only = std::env::var("ACCEPTANCE_ONLY").ok().map(|s| {
        s.split(',')
            .filter_map(|x| x.trim().parse().ok())
            .collect::<Vec<u32>>()
    });
    let mut report = Report { only, failed: 0 };

    report.record(1, "CRF exactness", Some(10.0), exact::crf_exactness);
    report.record(2, "gradient correctness", Some(60.0), exact::gradient_correctness);
    report.record(3, "beam-search exactness", None, exact::beam_exactness);
    report.record(4, "tagging totality and round-trips", None, exact::tagging_totality);
    report.record(5, "metric oracles", None, exact::metric_oracles);

    let default_runs = [6, 8, 9, 10].iter().any(|&id| report.wants(id)).then(|| {
        let corpus = generate_corpus(&SynthConfig::default()).expect("default corpus");
        eprintln!("training compositional systems on the default corpus");
        let runs: Vec<trends::Run> = trends::SEEDS
            .iter()
            .map(|&s| trends::train(System::Compositional, &corpus, s, |_| {}))
            .collect();
        (corpus, runs)
    });
    if let Some((corpus, runs)) = &default_runs {
        report.record(6, "end-to-end system ordering", None, || trends::system_ordering(corpus, runs));
    }
    if report.wants(7) {
        let corpus = generate_corpus(&SynthConfig {
            noise: trends::ABLATION_NOISE,
            ..SynthConfig::default()
        })
        .expect("ablation corpus");
        report.record(7, "speech-attention recovery", None, || trends::speech_attention(&corpus));
    }
    if let Some((corpus, runs)) = &default_runs {
        report.record(8, "transcript injection", None, || trends::transcript_injection(corpus, &runs[0]));
        report.record(9, "transparency probes", None, || trends::transparency_probes(corpus, &runs[0]));
        report.record(10, "confidence correlation", None, || trends::confidence_correlation(corpus, runs));
    }
    report.record(11, "determinism", None, trends::determinism);

    if report.failed == 0 {
        println!("acceptance: all selected criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} criteria failed", report.failed);
        ExitCode::FAILURE
    }
}
