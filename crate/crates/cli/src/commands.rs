use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;
use serde::Serialize;

use compslu::asr::BeamConfig;
use compslu::error::{Error, Result};
use compslu::metrics::{
    error_quadrants, likelihood_error_correlation, micro_f1, render_quadrants, score_corpus, Annotated, F1Mode,
};
use compslu::pipelines::config::{
    render_kv, set_synth, synth_from_file, synth_resolved, ExperimentConfig,
};
use compslu::pipelines::{read_predictions, write_predictions, DecodeMode, Prediction, System, Trained, Transcript};
use compslu::synthdata::{generate_corpus, read_corpus, read_split, write_corpus, Example, SynthConfig, SPLITS};
use compslu::tagging::{EntitySpan, LabelSet, Vocab};

use crate::manifest::RunManifest;
use crate::{Cli, Command, DecodeArgs, GenDataArgs, Output, ScoreArgs, TrainArgs};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";

pub fn run(command: Command, argv: &[String]) -> Result<()> {
    match command {
        Command::GenData(a) => gen_data(a, argv),
        Command::Train(a) => train(a, argv),
        Command::Decode(a) => decode(a, argv),
        Command::Evaluate(a) => evaluate(a, argv),
        Command::Analyze(a) => analyze(a, argv),
        Command::Rerun { manifest } => rerun(&manifest),
    }
}

impl Output {
    fn dir(&self, default_name: &str) -> Result<PathBuf> {
        let dir = self.out.clone().unwrap_or_else(|| self.output_root.join(default_name));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }
}

fn split_kv(kv: &str) -> Result<(&str, &str)> {
    kv.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| Error::Config(format!("override {kv:?} is not KEY=VALUE")))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    write_file(path, &(text + "\n"))
}

fn check_split(name: &str) -> Result<()> {
    if SPLITS.contains(&name) {
        Ok(())
    } else {
        Err(Error::Config(format!("unknown split {name:?} (expected one of {SPLITS:?})")))
    }
}

fn gen_data(a: GenDataArgs, argv: &[String]) -> Result<()> {
    let mut manifest = RunManifest::new("gen-data", argv);
    let mut cfg = match &a.config {
        Some(p) => synth_from_file(p)?,
        None => SynthConfig::default(),
    };
    for kv in &a.overrides {
        let (k, v) = split_kv(kv)?;
        set_synth(&mut cfg, k, v)?;
    }
    let corpus = generate_corpus(&cfg)?;
    let out = a.output.dir("gen-data")?;
    write_corpus(&corpus, &out)?;
    manifest.config_path = a.config.clone();
    manifest.resolved = synth_resolved(&cfg);
    manifest.seed = Some(cfg.seed);
    manifest.outputs = ["labels.txt", "vocab.txt"]
        .into_iter()
        .map(String::from)
        .chain(SPLITS.iter().flat_map(|s| [format!("{s}.meta"), format!("{s}.frames")]))
        .map(|f| out.join(f))
        .collect();
    manifest.finish(&out)?;
    println!(
        "corpus: {} train / {} dev / {} test utterances, {} subtokens, {} labels -> {}",
        corpus.train.len(),
        corpus.dev.len(),
        corpus.test.len(),
        corpus.vocab.len(),
        corpus.labels.labels().len(),
        out.display()
    );
    Ok(())
}

fn train(a: TrainArgs, argv: &[String]) -> Result<()> {
    let mut manifest = RunManifest::new("train", argv);
    let system: System = a.system.parse()?;
    let mut exp = match &a.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    for kv in &a.overrides {
        let (k, v) = split_kv(kv)?;
        exp.set(k, v)?;
    }
    exp.train.validate()?;
    let corpus = read_corpus(&a.data)?;
    let (trained, report) = Trained::fit(system, &exp.model, &exp.train, &corpus)?;
    let out = a.output.dir(&format!("train-{}", system.name()))?;
    let ckpt = out.join(CHECKPOINT_FILE);
    trained.save(&ckpt)?;
    let mut resolved = exp.resolved();
    resolved.insert("system".into(), system.name().into());
    write_file(&out.join("config.txt"), &render_kv(&resolved))?;
    write_json(&out.join("losses.json"), &report)?;
    manifest.config_path = a.config.clone();
    manifest.resolved = resolved;
    manifest.seed = Some(exp.train.seed);
    manifest.inputs = vec![a.data.clone()];
    manifest.outputs = vec![ckpt.clone(), out.join("config.txt"), out.join("losses.json")];
    manifest.finish(&out)?;
    let first = report.losses.first().copied().unwrap_or(f64::NAN);
    let last = report.losses.last().copied().unwrap_or(f64::NAN);
    println!(
        "{}: {} updates, loss {first:.4} -> {last:.4}, checkpoint {}",
        system.name(),
        report.losses.len(),
        ckpt.display()
    );
    Ok(())
}

/// Transcripts keyed by utterance id, from a prediction dump (JSON lines)
/// or from `id<TAB>transcript` lines.
pub fn read_transcripts(path: &Path) -> Result<HashMap<String, Transcript>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (id, transcript) = if line.trim_start().starts_with('{') {
            let p: Prediction = serde_json::from_str(line)
                .map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), n + 1)))?;
            let t = if p.subtokens.is_empty() {
                Transcript::Words(p.words)
            } else {
                Transcript::Subtokens(p.subtokens)
            };
            (p.id, t)
        } else {
            let (id, words) = line
                .split_once('\t')
                .ok_or_else(|| Error::Parse(format!("{}:{}: expected id<TAB>transcript", path.display(), n + 1)))?;
            let words = words.split_whitespace().map(String::from).collect();
            (id.trim().to_string(), Transcript::Words(words))
        };
        if out.insert(id.clone(), transcript).is_some() {
            return Err(Error::Data(format!("{}: utterance {id} appears twice", path.display())));
        }
    }
    Ok(out)
}

fn decode_mode(spec: &str) -> Result<(DecodeMode, Option<PathBuf>)> {
    match spec {
        "beam" => Ok((DecodeMode::Beam, None)),
        "gold-transcript" => Ok((DecodeMode::GoldTranscript, None)),
        _ => match spec.strip_prefix("inject:") {
            Some(p) if !p.is_empty() => {
                let path = PathBuf::from(p);
                Ok((DecodeMode::Inject(read_transcripts(&path)?), Some(path)))
            }
            _ => Err(Error::Config(format!(
                "unknown decode mode {spec:?} (expected beam, gold-transcript or inject:<path>)"
            ))),
        },
    }
}

fn decode(a: DecodeArgs, argv: &[String]) -> Result<()> {
    let mut manifest = RunManifest::new("decode", argv);
    check_split(&a.split)?;
    let (mode, inject_path) = decode_mode(&a.mode)?;
    let ckpt = if a.checkpoint.is_dir() {
        a.checkpoint.join(CHECKPOINT_FILE)
    } else {
        a.checkpoint.clone()
    };
    let trained = Trained::load(&ckpt)?;
    let labels = LabelSet::read(&a.data.join("labels.txt"))?;
    let vocab = Vocab::read(&a.data.join("vocab.txt"))?;
    if labels != trained.task.labels || vocab != trained.task.vocab {
        return Err(Error::Data(format!(
            "corpus {} uses different labels or vocabulary than the checkpoint",
            a.data.display()
        )));
    }
    let (_, examples) = read_split(&a.data, &a.split, &labels)?;
    let defaults = BeamConfig::default();
    let beam = BeamConfig {
        beam_size: a.beam_size.unwrap_or(defaults.beam_size),
        length_penalty: a.length_penalty.unwrap_or(defaults.length_penalty),
    };
    let workers = a
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        return Err(Error::Config("--workers must be at least 1".into()));
    }
    let preds = trained.decode_all(&examples, &mode, beam, workers)?;
    let out = a.output.dir("decode")?;
    let path = out.join(PREDICTIONS_FILE);
    write_predictions(&path, &preds)?;
    manifest.resolved = [
        ("system", trained.system.name().to_string()),
        ("split", a.split.clone()),
        ("mode", a.mode.clone()),
        ("beam_size", beam.beam_size.to_string()),
        ("length_penalty", beam.length_penalty.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    manifest.seed = Some(trained.train.seed);
    manifest.inputs = [Some(ckpt), Some(a.data.clone()), inject_path].into_iter().flatten().collect();
    manifest.outputs = vec![path.clone()];
    manifest.finish(&out)?;
    let empty = preds.iter().filter(|p| p.empty_output).count();
    println!(
        "{}: {} utterances decoded ({} empty) -> {}",
        trained.system.name(),
        preds.len(),
        empty,
        path.display()
    );
    Ok(())
}

/// Gold examples paired with their predictions, in corpus order.
fn paired(data: &Path, split: &str, predictions: &Path) -> Result<(Vec<Example>, Vec<Prediction>)> {
    check_split(split)?;
    let labels = LabelSet::read(&data.join("labels.txt"))?;
    let (_, examples) = read_split(data, split, &labels)?;
    let mut by_id: HashMap<String, Prediction> = HashMap::new();
    for p in read_predictions(predictions)? {
        let id = p.id.clone();
        if by_id.insert(id.clone(), p).is_some() {
            return Err(Error::Data(format!("prediction for {id} appears twice")));
        }
    }
    let mut preds = Vec::with_capacity(examples.len());
    for ex in &examples {
        let p = by_id
            .remove(&ex.id)
            .ok_or_else(|| Error::Data(format!("no prediction for utterance {}", ex.id)))?;
        preds.push(p);
    }
    if let Some(extra) = by_id.keys().min() {
        return Err(Error::Data(format!("prediction {extra} is not in the {split} split")));
    }
    Ok((examples, preds))
}

fn annotated(examples: &[Example], preds: &[Prediction]) -> (Vec<Annotated>, Vec<Annotated>) {
    (
        examples.iter().map(Annotated::from).collect(),
        preds.iter().map(Annotated::from).collect(),
    )
}

#[derive(Serialize)]
struct WerReport {
    n_utterances: usize,
    wer: f64,
    cer: f64,
}

fn evaluate(a: ScoreArgs, argv: &[String]) -> Result<()> {
    let mut manifest = RunManifest::new("evaluate", argv);
    let (examples, preds) = paired(&a.data, &a.split, &a.predictions)?;
    let (gold, pred) = annotated(&examples, &preds);
    let report = score_corpus(&gold, &pred)?;
    let gold_spans: Vec<Vec<EntitySpan>> = gold.iter().map(|g| g.spans.clone()).collect();
    let pred_spans: Vec<Vec<EntitySpan>> = pred.iter().map(|p| p.spans.clone()).collect();
    let full = micro_f1(&gold_spans, &pred_spans, F1Mode::Full)?;
    let out = a.output.dir("evaluate")?;
    let files = [
        "f1.json",
        "label_f1.json",
        "slu_f1.json",
        "wer.json",
        "scores.json",
        "scores.txt",
    ]
    .map(|f| out.join(f));
    write_json(&files[0], &full)?;
    write_json(&files[1], &report.label)?;
    write_json(&files[2], &report.slu)?;
    write_json(
        &files[3],
        &WerReport {
            n_utterances: report.n_utterances,
            wer: report.wer,
            cer: report.cer,
        },
    )?;
    write_json(&files[4], &report)?;
    write_file(&files[5], &report.render_text())?;
    manifest.resolved = [("split".to_string(), a.split.clone())].into();
    manifest.inputs = vec![a.predictions.clone(), a.data.clone()];
    manifest.outputs = files.to_vec();
    manifest.finish(&out)?;
    print!("{}", report.render_text());
    Ok(())
}

#[derive(Serialize)]
#[serde(untagged)]
enum CorrelationReport {
    Defined { r: f64, p_value: f64, n: usize },
    Undefined { undefined: String },
}

fn analyze(a: ScoreArgs, argv: &[String]) -> Result<()> {
    let mut manifest = RunManifest::new("analyze", argv);
    let (examples, preds) = paired(&a.data, &a.split, &a.predictions)?;
    let (gold, pred) = annotated(&examples, &preds);
    let quadrants = error_quadrants(&gold, &pred)?;
    let lls: Vec<f64> = preds.iter().map(|p| p.log_likelihood).collect();
    let gold_spans: Vec<Vec<EntitySpan>> = gold.iter().map(|g| g.spans.clone()).collect();
    let pred_spans: Vec<Vec<EntitySpan>> = pred.iter().map(|p| p.spans.clone()).collect();
    let correlation = match likelihood_error_correlation(&lls, &gold_spans, &pred_spans) {
        Ok(c) => CorrelationReport::Defined {
            r: c.r,
            p_value: c.p_value,
            n: c.n,
        },
        Err(Error::UndefinedCorrelation(msg)) => CorrelationReport::Undefined { undefined: msg },
        Err(e) => return Err(e),
    };
    let name = a
        .predictions
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("predictions")
        .to_string();
    let table = render_quadrants(&[(name.as_str(), quadrants)]);
    let corr_line = match &correlation {
        CorrelationReport::Defined { r, p_value, n } => format!("likelihood-error correlation: r={r:.4} p={p_value:.4} n={n}\n"),
        CorrelationReport::Undefined { undefined } => format!("likelihood-error correlation: undefined ({undefined})\n"),
    };
    let out = a.output.dir("analyze")?;
    let files = ["quadrants.json", "correlation.json", "analysis.txt"].map(|f| out.join(f));
    write_json(&files[0], &quadrants)?;
    write_json(&files[1], &correlation)?;
    write_file(&files[2], &format!("{table}\n{corr_line}"))?;
    manifest.resolved = [("split".to_string(), a.split.clone())].into();
    manifest.inputs = vec![a.predictions.clone(), a.data.clone()];
    manifest.outputs = files.to_vec();
    manifest.finish(&out)?;
    print!("{table}\n{corr_line}");
    Ok(())
}

fn rerun(path: &Path) -> Result<()> {
    let manifest = RunManifest::read(path)?;
    let cli = Cli::try_parse_from(&manifest.argv)
        .map_err(|e| Error::Config(format!("{}: recorded command line no longer parses: {}", path.display(), e.kind())))?;
    if matches!(cli.command, Command::Rerun { .. }) {
        return Err(Error::Config(format!("{}: manifest records another rerun", path.display())));
    }
    run(cli.command, &manifest.argv)
}
