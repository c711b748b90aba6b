//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. `include = path`
//! splices another file in place (relative to the including file); later
//! assignments override earlier ones.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, TrainConfig};
use crate::asr::BeamConfig;
use crate::error::{Error, Result};
use crate::nlu::HeadKind;
use crate::synthdata::SynthConfig;
use crate::tensorcore::optim::ScheduleKind;

/// Assignments in file order, includes expanded.
pub fn read_kv(path: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut stack = Vec::new();
    read_into(path, &mut stack, &mut out)?;
    Ok(out)
}

fn read_into(path: &Path, stack: &mut Vec<PathBuf>, out: &mut Vec<(String, String)>) -> Result<()> {
    let canonical = path.canonicalize().map_err(|e| Error::io(path, e))?;
    if stack.contains(&canonical) {
        return Err(Error::Parse(format!("{}: include cycle", path.display())));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    stack.push(canonical);
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("{}:{}: expected key = value", path.display(), n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Parse(format!("{}:{}: empty key", path.display(), n + 1)));
        }
        if k == "include" {
            let base = path.parent().unwrap_or(Path::new("."));
            read_into(&base.join(v), stack, out)?;
        } else {
            out.push((k.to_string(), v.to_string()));
        }
    }
    stack.pop();
    Ok(())
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("invalid value {value:?} for {key} (expected true or false)"))),
    }
}

/// Everything a training run needs besides the corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub beam_size: usize,
    pub length_penalty: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let beam = BeamConfig::default();
        ExperimentConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            beam_size: beam.beam_size,
            length_penalty: beam.length_penalty,
        }
    }
}

impl ExperimentConfig {
    pub fn beam(&self) -> BeamConfig {
        BeamConfig {
            beam_size: self.beam_size,
            length_penalty: self.length_penalty,
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in read_kv(path)? {
            cfg.set(&k, &v)?;
        }
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (m, t) = (&mut self.model, &mut self.train);
        match key {
            "alpha" => t.alpha = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "max_steps" => t.max_steps = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "lr" => t.optim.lr = parse(key, value)?,
            "warmup_steps" => t.optim.warmup_steps = parse(key, value)?,
            "schedule" => {
                t.optim.schedule = match value {
                    "inverse-sqrt" => ScheduleKind::InverseSqrt,
                    "constant" => ScheduleKind::Constant,
                    "exponential" => ScheduleKind::Exponential { decay: 0.999 },
                    _ => return Err(Error::Config(format!("unknown schedule {value:?}"))),
                }
            }
            "decay" => match &mut t.optim.schedule {
                ScheduleKind::Exponential { decay } => *decay = parse(key, value)?,
                _ => return Err(Error::Config("decay needs schedule = exponential first".into())),
            },
            "beta1" => t.optim.beta1 = parse(key, value)?,
            "beta2" => t.optim.beta2 = parse(key, value)?,
            "eps" => t.optim.eps = parse(key, value)?,
            "weight_decay" => t.optim.weight_decay = parse(key, value)?,
            "clip_norm" => t.optim.clip_norm = parse(key, value)?,
            "dm" => m.dm = parse(key, value)?,
            "heads" => m.heads = parse(key, value)?,
            "ff_dim" => m.ff_dim = parse(key, value)?,
            "dropout" => m.dropout = parse(key, value)?,
            "encoder_layers" => m.encoder_layers = parse(key, value)?,
            "decoder_layers" => m.decoder_layers = parse(key, value)?,
            "nlu_layers" => m.nlu_layers = parse(key, value)?,
            "max_len" => m.max_len = parse(key, value)?,
            "positional" => m.positional = parse_bool(key, value)?,
            "speech_attention" => m.speech_attention = parse_bool(key, value)?,
            "head" => m.head = HeadKind::from_str(value)?,
            "beam_size" => self.beam_size = parse(key, value)?,
            "length_penalty" => self.length_penalty = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    /// Every key with its resolved value, in a form [`ExperimentConfig::set`] accepts.
    pub fn resolved(&self) -> BTreeMap<String, String> {
        let (m, t, o) = (&self.model, &self.train, &self.train.optim);
        let mut kv = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            kv.insert(k.to_string(), v);
        };
        put("alpha", t.alpha.to_string());
        put("batch_size", t.batch_size.to_string());
        put("max_steps", t.max_steps.to_string());
        put("seed", t.seed.to_string());
        put("lr", o.lr.to_string());
        put("warmup_steps", o.warmup_steps.to_string());
        match o.schedule {
            ScheduleKind::InverseSqrt => put("schedule", "inverse-sqrt".into()),
            ScheduleKind::Constant => put("schedule", "constant".into()),
            ScheduleKind::Exponential { decay } => {
                put("schedule", "exponential".into());
                put("decay", decay.to_string());
            }
        }
        put("beta1", o.beta1.to_string());
        put("beta2", o.beta2.to_string());
        put("eps", o.eps.to_string());
        put("weight_decay", o.weight_decay.to_string());
        put("clip_norm", o.clip_norm.to_string());
        put("dm", m.dm.to_string());
        put("heads", m.heads.to_string());
        put("ff_dim", m.ff_dim.to_string());
        put("dropout", m.dropout.to_string());
        put("encoder_layers", m.encoder_layers.to_string());
        put("decoder_layers", m.decoder_layers.to_string());
        put("nlu_layers", m.nlu_layers.to_string());
        put("max_len", m.max_len.to_string());
        put("positional", m.positional.to_string());
        put("speech_attention", m.speech_attention.to_string());
        put(
            "head",
            match m.head {
                HeadKind::Crf => "crf".into(),
                HeadKind::Token => "token".into(),
            },
        );
        put("beam_size", self.beam_size.to_string());
        put("length_penalty", self.length_penalty.to_string());
        kv
    }
}

/// Renders assignments as a config file; `decay` is kept after `schedule`.
pub fn render_kv(kv: &BTreeMap<String, String>) -> String {
    let mut s = String::new();
    for (k, v) in kv.iter().filter(|(k, _)| *k != "decay") {
        let _ = writeln!(s, "{k} = {v}");
        if k == "schedule" {
            if let Some(d) = kv.get("decay") {
                let _ = writeln!(s, "decay = {d}");
            }
        }
    }
    s
}

/// Applies one `key = value` to a corpus generator configuration.
pub fn set_synth(cfg: &mut SynthConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "seed" => cfg.seed = parse(key, value)?,
        "n_train" => cfg.n_train = parse(key, value)?,
        "n_dev" => cfg.n_dev = parse(key, value)?,
        "n_test" => cfg.n_test = parse(key, value)?,
        "frame_dim" => cfg.frame_dim = parse(key, value)?,
        "noise" => cfg.noise = parse(key, value)?,
        "frames_min" => cfg.frames_per_token.0 = parse(key, value)?,
        "frames_max" => cfg.frames_per_token.1 = parse(key, value)?,
        "confusable_spread" => cfg.confusable_spread = parse(key, value)?,
        "heteronym_shift" => cfg.heteronym_shift = parse(key, value)?,
        "heteronym_rate" => cfg.heteronym_rate = parse(key, value)?,
        "cue_frames" => cfg.cue_frames = parse(key, value)?,
        _ => return Err(Error::Config(format!("unknown corpus configuration key {key:?}"))),
    }
    Ok(())
}

pub fn synth_from_file(path: &Path) -> Result<SynthConfig> {
    let mut cfg = SynthConfig::default();
    for (k, v) in read_kv(path)? {
        set_synth(&mut cfg, &k, &v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn synth_resolved(cfg: &SynthConfig) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("seed".to_string(), cfg.seed.to_string()),
        ("n_train".to_string(), cfg.n_train.to_string()),
        ("n_dev".to_string(), cfg.n_dev.to_string()),
        ("n_test".to_string(), cfg.n_test.to_string()),
        ("frame_dim".to_string(), cfg.frame_dim.to_string()),
        ("noise".to_string(), cfg.noise.to_string()),
        ("frames_min".to_string(), cfg.frames_per_token.0.to_string()),
        ("frames_max".to_string(), cfg.frames_per_token.1.to_string()),
        ("confusable_spread".to_string(), cfg.confusable_spread.to_string()),
        ("heteronym_shift".to_string(), cfg.heteronym_shift.to_string()),
        ("heteronym_rate".to_string(), cfg.heteronym_rate.to_string()),
        ("cue_frames".to_string(), cfg.cue_frames.to_string()),
    ])
}
