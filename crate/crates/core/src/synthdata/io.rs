//! On-disk corpus layout.
//!
//! A corpus directory holds `labels.txt`, `vocab.txt` and, per split,
//! `{split}.meta` (one JSON object per utterance) and `{split}.frames`
//! (binary little-endian f32 frames keyed by utterance id).

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Corpus, Example, SPLITS};
use crate::error::{Error, Result};
use crate::tagging::{validate_spans, EntitySpan, LabelSet, Vocab};

pub const FRAMES_MAGIC: &[u8; 8] = b"CSLUFRM1";

#[derive(Serialize, Deserialize)]
struct MetaRecord {
    id: String,
    words: Vec<String>,
    spans: Vec<EntitySpan>,
    n_frames: usize,
    checksum: String,
}

fn frame_bytes(frames: &[f64]) -> Vec<u8> {
    frames.iter().flat_map(|v| (*v as f32).to_le_bytes()).collect()
}

fn checksum(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, data: &[u8]| {
        let p = dir.join(name);
        fs::write(&p, data).map_err(|e| Error::io(&p, e))
    };
    write("labels.txt", corpus.labels.render().as_bytes())?;
    write("vocab.txt", corpus.vocab.render().as_bytes())?;
    for name in SPLITS {
        let examples = corpus.split(name)?;
        let mut meta = String::new();
        let mut bin = Vec::new();
        bin.extend_from_slice(FRAMES_MAGIC);
        bin.extend_from_slice(&(corpus.frame_dim as u32).to_le_bytes());
        bin.extend_from_slice(&(examples.len() as u64).to_le_bytes());
        for ex in examples {
            if ex.frame_dim != corpus.frame_dim {
                return Err(Error::Data(format!("{}: frame dimension differs from the corpus", ex.id)));
            }
            let bytes = frame_bytes(&ex.frames);
            let rec = MetaRecord {
                id: ex.id.clone(),
                words: ex.words.clone(),
                spans: ex.spans.clone(),
                n_frames: ex.n_frames(),
                checksum: checksum(&bytes),
            };
            meta.push_str(&serde_json::to_string(&rec).map_err(|e| Error::Parse(e.to_string()))?);
            meta.push('\n');
            bin.extend_from_slice(&(ex.id.len() as u32).to_le_bytes());
            bin.extend_from_slice(ex.id.as_bytes());
            bin.extend_from_slice(&(ex.n_frames() as u64).to_le_bytes());
            bin.extend_from_slice(&bytes);
        }
        write(&format!("{name}.meta"), meta.as_bytes())?;
        write(&format!("{name}.frames"), &bin)?;
    }
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    file: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Data(format!("{}: truncated at byte {} (wanted {n} more)", self.file, self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Reads the frames file into `id -> (raw bytes)`.
fn read_frames(path: &Path) -> Result<(usize, HashMap<String, Vec<u8>>)> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        buf: &buf,
        pos: 0,
        file: path.display().to_string(),
    };
    if r.take(8)? != FRAMES_MAGIC {
        return Err(Error::Data(format!("{}: not a frames file (bad magic)", r.file)));
    }
    let dim = r.u32()? as usize;
    if dim == 0 {
        return Err(Error::Data(format!("{}: zero frame dimension", r.file)));
    }
    let count = r.u64()?;
    let mut out = HashMap::new();
    for _ in 0..count {
        let id_len = r.u32()? as usize;
        let id = String::from_utf8(r.take(id_len)?.to_vec())
            .map_err(|_| Error::Data(format!("{}: utterance id is not UTF-8", r.file)))?;
        let n = r.u64()? as usize;
        let bytes = n
            .checked_mul(dim * 4)
            .ok_or_else(|| Error::Data(format!("{}: frame count overflow for {id}", r.file)))?;
        let data = r.take(bytes)?.to_vec();
        if out.insert(id.clone(), data).is_some() {
            return Err(Error::Data(format!("{}: duplicate utterance id {id}", r.file)));
        }
    }
    if r.pos != buf.len() {
        return Err(Error::Data(format!("{}: {} trailing bytes", r.file, buf.len() - r.pos)));
    }
    Ok((dim, out))
}

pub fn read_split(dir: &Path, name: &str, labels: &LabelSet) -> Result<(usize, Vec<Example>)> {
    let meta_path = dir.join(format!("{name}.meta"));
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let (dim, mut frames) = read_frames(&dir.join(format!("{name}.frames")))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let rec: MetaRecord = serde_json::from_str(line)
            .map_err(|e| Error::Parse(format!("{}:{}: {e}", meta_path.display(), lineno + 1)))?;
        let bytes = frames
            .remove(&rec.id)
            .ok_or_else(|| Error::Data(format!("utterance {} has no frames in {name}.frames", rec.id)))?;
        if bytes.len() != rec.n_frames * dim * 4 {
            return Err(Error::Data(format!(
                "utterance {}: {} frames on disk, metadata says {}",
                rec.id,
                bytes.len() / (dim * 4),
                rec.n_frames
            )));
        }
        if checksum(&bytes) != rec.checksum {
            return Err(Error::Data(format!("utterance {}: frame checksum mismatch", rec.id)));
        }
        validate_spans(labels, &rec.spans, rec.words.len())
            .map_err(|e| Error::Data(format!("utterance {}: {e}", rec.id)))?;
        let frames = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        out.push(Example {
            id: rec.id,
            frame_dim: dim,
            frames,
            words: rec.words,
            spans: rec.spans,
        });
    }
    if let Some(id) = frames.keys().min() {
        return Err(Error::Data(format!("{name}.frames holds {id} which has no metadata")));
    }
    Ok((dim, out))
}

pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    let labels = LabelSet::read(&dir.join("labels.txt"))?;
    let vocab = Vocab::read(&dir.join("vocab.txt"))?;
    let mut dims = Vec::new();
    let mut splits = Vec::new();
    for name in SPLITS {
        let (d, ex) = read_split(dir, name, &labels)?;
        dims.push(d);
        splits.push(ex);
    }
    if dims.iter().any(|d| *d != dims[0]) {
        return Err(Error::Data(format!("splits disagree on frame dimension: {dims:?}")));
    }
    let test = splits.pop().unwrap();
    let dev = splits.pop().unwrap();
    let train = splits.pop().unwrap();
    Ok(Corpus {
        labels,
        vocab,
        frame_dim: dims[0],
        train,
        dev,
        test,
    })
}
