//! Dataset loaders and the on-disk weight archive.
//!
//! Archive layout (all integers little-endian):
//!
//! | bytes | content |
//! |---|---|
//! | 8 | magic `MEMEWTS\0` |
//! | 4 | format version (`u32`, currently 1) |
//! | 8 | manifest length `m` (`u64`) |
//! | m | UTF-8 JSON manifest |
//! | 8 | blob length `b` (`u64`) |
//! | b | `f32` payload |
//! | 32 | SHA-256 of every preceding byte |

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::caption::{CaptionConfig, CaptionModel};
use crate::emotion::{ClassifierConfig, EmotionClassifier, EmotionLabel};
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};
use crate::textproc::Vocabulary;

#[derive(Debug, Clone, PartialEq)]
pub struct GloveTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl GloveTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("GloVe dimension must be at least 1".into()));
        }
        Ok(GloveTable {
            dim,
            vectors: HashMap::new(),
        })
    }

    /// Adds or replaces a vector; returns true if `token` was already present.
    pub fn insert(&mut self, token: &str, vector: Vec<f64>) -> Result<bool> {
        if vector.len() != self.dim {
            return Err(Error::shape("glove vector", &[vector.len()], &[self.dim]));
        }
        Ok(self.vectors.insert(token.to_string(), vector).is_some())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::parse(path, 0, e.to_string()))
}

/// Non-blank lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

fn parse_floats<'a>(fields: impl Iterator<Item = &'a str>, path: &Path, line: usize) -> Result<Vec<f64>> {
    fields
        .map(|f| {
            f.trim()
                .parse::<f64>()
                .map_err(|_| Error::parse(path, line, format!("not a number: {f:?}")))
        })
        .collect()
}

/// Parses the whitespace-separated `token v1 … vd` format. The dimension
/// comes from the first line.
pub fn parse_glove(text: &str, path: &Path) -> Result<GloveTable> {
    let mut table: Option<GloveTable> = None;
    for (line, content) in content_lines(text) {
        let mut fields = content.split_whitespace();
        let token = fields.next().expect("non-blank line has a field");
        let values = parse_floats(fields, path, line)?;
        let table = match &mut table {
            Some(t) => t,
            None => {
                if values.is_empty() {
                    return Err(Error::parse(path, line, "no vector values"));
                }
                table.insert(GloveTable::new(values.len())?)
            }
        };
        if values.len() != table.dim {
            return Err(Error::parse(
                path,
                line,
                format!("expected {} values, found {}", table.dim, values.len()),
            ));
        }
        if table.insert(token, values)? {
            warn!("{}:{line}: duplicate token {token:?}, keeping the later vector", path.display());
        }
    }
    table.ok_or_else(|| Error::parse(path, 0, "empty GloVe file"))
}

pub fn load_glove(path: impl AsRef<Path>) -> Result<GloveTable> {
    let path = path.as_ref();
    parse_glove(&read_text(path)?, path)
}

fn split_tab<'a>(content: &'a str, path: &Path, line: usize) -> Result<(&'a str, &'a str)> {
    let (a, b) = content
        .split_once('\t')
        .ok_or_else(|| Error::parse(path, line, "missing tab separator"))?;
    Ok((a.trim(), b.trim()))
}

/// `input<TAB>target` per line.
pub fn parse_pairs(text: &str, path: &Path) -> Result<Vec<(String, String)>> {
    content_lines(text)
        .map(|(line, content)| {
            let (a, b) = split_tab(content, path, line)?;
            if a.is_empty() || b.is_empty() {
                return Err(Error::parse(path, line, "empty input or target"));
            }
            Ok((a.to_string(), b.to_string()))
        })
        .collect()
}

pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let path = path.as_ref();
    parse_pairs(&read_text(path)?, path)
}

fn parse_label(s: &str, path: &Path, line: usize) -> Result<EmotionLabel> {
    s.parse()
        .map_err(|_| Error::parse(path, line, format!("unknown label {s:?}")))
}

/// `label<TAB>text` per line.
pub fn parse_labeled(text: &str, path: &Path) -> Result<Vec<(String, EmotionLabel)>> {
    content_lines(text)
        .map(|(line, content)| {
            let (label, body) = split_tab(content, path, line)?;
            let label = parse_label(label, path, line)?;
            if body.is_empty() {
                return Err(Error::parse(path, line, "empty text"));
            }
            Ok((body.to_string(), label))
        })
        .collect()
}

pub fn load_labeled(path: impl AsRef<Path>) -> Result<Vec<(String, EmotionLabel)>> {
    let path = path.as_ref();
    parse_labeled(&read_text(path)?, path)
}

/// `label<TAB>v1,v2,…` per line; every vector must match the first line's
/// width.
pub fn parse_vectors(text: &str, path: &Path) -> Result<Vec<(Vec<f64>, EmotionLabel)>> {
    let mut width = None;
    content_lines(text)
        .map(|(line, content)| {
            let (label, body) = split_tab(content, path, line)?;
            let label = parse_label(label, path, line)?;
            if body.is_empty() {
                return Err(Error::parse(path, line, "empty vector"));
            }
            let v = parse_floats(body.split(','), path, line)?;
            let expected = *width.get_or_insert(v.len());
            if v.len() != expected {
                return Err(Error::parse(
                    path,
                    line,
                    format!("expected {expected} values, found {}", v.len()),
                ));
            }
            Ok((v, label))
        })
        .collect()
}

pub fn load_vectors(path: impl AsRef<Path>) -> Result<Vec<(Vec<f64>, EmotionLabel)>> {
    let path = path.as_ref();
    parse_vectors(&read_text(path)?, path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalBucket {
    Similar,
    Different,
}

/// `text<TAB>similar|different` per line.
pub fn parse_eval_cases(text: &str, path: &Path) -> Result<Vec<(String, EvalBucket)>> {
    let cases = content_lines(text)
        .map(|(line, content)| {
            let (body, tag) = split_tab(content, path, line)?;
            let bucket = match tag.to_lowercase().as_str() {
                "similar" => EvalBucket::Similar,
                "different" => EvalBucket::Different,
                _ => return Err(Error::parse(path, line, format!("unknown bucket {tag:?}"))),
            };
            if body.is_empty() {
                return Err(Error::parse(path, line, "empty text"));
            }
            Ok((body.to_string(), bucket))
        })
        .collect::<Result<Vec<_>>>()?;
    if cases.is_empty() {
        return Err(Error::parse(path, 0, "no test cases"));
    }
    Ok(cases)
}

pub fn load_eval_cases(path: impl AsRef<Path>) -> Result<Vec<(String, EvalBucket)>> {
    let path = path.as_ref();
    parse_eval_cases(&read_text(path)?, path)
}

const MAGIC: &[u8; 8] = b"MEMEWTS\0";
pub const ARCHIVE_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the payload.
    offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    kind: String,
    config: serde_json::Value,
    vocab: Option<Vec<String>>,
    labels: Vec<String>,
    tensors: Vec<TensorEntry>,
}

/// A model that can be written to and rebuilt from a weight archive.
pub trait Persist: Sized {
    const KIND: &'static str;

    fn archive_config(&self) -> Result<serde_json::Value>;
    fn archive_vocab(&self) -> Option<&Vocabulary>;
    fn archive_labels(&self) -> Vec<String>;
    fn archive_params(&self) -> &ParamStore;
    /// A model with the right parameter layout; its values are overwritten
    /// from the archive.
    fn skeleton(config: serde_json::Value, vocab: Option<Vocabulary>, labels: &[String]) -> Result<Self>;
    fn archive_params_mut(&mut self) -> &mut ParamStore;
}

impl Persist for CaptionModel {
    const KIND: &'static str = "caption";

    fn archive_config(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self.config())?)
    }

    fn archive_vocab(&self) -> Option<&Vocabulary> {
        Some(self.vocab())
    }

    fn archive_labels(&self) -> Vec<String> {
        Vec::new()
    }

    fn archive_params(&self) -> &ParamStore {
        self.params()
    }

    fn skeleton(config: serde_json::Value, vocab: Option<Vocabulary>, _labels: &[String]) -> Result<Self> {
        let config: CaptionConfig = serde_json::from_value(config)?;
        let vocab = vocab.ok_or_else(|| Error::Archive("caption archive has no vocabulary".into()))?;
        CaptionModel::new(vocab, config, 0)
    }

    fn archive_params_mut(&mut self) -> &mut ParamStore {
        self.params_mut()
    }
}

impl Persist for EmotionClassifier {
    const KIND: &'static str = "emotion";

    fn archive_config(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self.config())?)
    }

    fn archive_vocab(&self) -> Option<&Vocabulary> {
        self.vocab()
    }

    fn archive_labels(&self) -> Vec<String> {
        self.labels()
    }

    fn archive_params(&self) -> &ParamStore {
        self.params()
    }

    fn skeleton(config: serde_json::Value, vocab: Option<Vocabulary>, labels: &[String]) -> Result<Self> {
        let config: ClassifierConfig = serde_json::from_value(config)?;
        let model = EmotionClassifier::from_config(config, vocab, 0)?;
        if model.labels() != labels {
            return Err(Error::Archive(format!(
                "label list {labels:?} does not match the model's classes"
            )));
        }
        Ok(model)
    }

    fn archive_params_mut(&mut self) -> &mut ParamStore {
        self.params_mut()
    }
}

/// Serializes `model` into archive bytes. Weights are rounded to `f32`.
pub fn to_archive_bytes<M: Persist>(model: &M) -> Result<Vec<u8>> {
    let params = model.archive_params();
    let mut blob = Vec::with_capacity(params.num_scalars() * 4);
    let mut tensors = Vec::with_capacity(params.len());
    for id in params.ids() {
        let t = params.get(id);
        tensors.push(TensorEntry {
            name: params.name(id).to_string(),
            shape: t.shape().to_vec(),
            offset: blob.len() as u64,
        });
        for v in t.data() {
            blob.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    let manifest = Manifest {
        kind: M::KIND.to_string(),
        config: model.archive_config()?,
        vocab: model.archive_vocab().map(|v| v.tokens().to_vec()),
        labels: model.archive_labels(),
        tensors,
    };
    let manifest = serde_json::to_vec(&manifest)?;

    let mut out = Vec::with_capacity(MAGIC.len() + 4 + 8 + manifest.len() + 8 + blob.len() + DIGEST_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&ARCHIVE_VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest);
    out.extend_from_slice(&(blob.len() as u64).to_le_bytes());
    out.extend_from_slice(&blob);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Archive(format!("truncated archive while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<usize> {
        let b = self.take(8, what)?;
        let v = u64::from_le_bytes(b.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::Archive(format!("{what} {v} too large")))
    }
}

pub fn from_archive_bytes<M: Persist>(bytes: &[u8]) -> Result<M> {
    if bytes.len() < MAGIC.len() + 4 + DIGEST_LEN {
        return Err(Error::Archive("truncated archive".into()));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Archive("not a weight archive (bad magic)".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    let mut r = Reader {
        bytes: body,
        pos: MAGIC.len(),
    };
    let version = u32::from_le_bytes(r.take(4, "version")?.try_into().expect("4 bytes"));
    if version != ARCHIVE_VERSION {
        return Err(Error::Archive(format!(
            "unsupported archive version {version} (expected {ARCHIVE_VERSION})"
        )));
    }
    let manifest_len = r.u64("manifest length")?;
    let manifest_bytes = r.take(manifest_len, "manifest")?;
    let blob_len = r.u64("blob length")?;
    let blob = r.take(blob_len, "blob")?;
    if r.pos != body.len() {
        return Err(Error::Archive("trailing bytes after blob".into()));
    }
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Archive("checksum mismatch".into()));
    }

    let manifest: Manifest = serde_json::from_slice(manifest_bytes)?;
    if manifest.kind != M::KIND {
        return Err(Error::Archive(format!(
            "archive holds a {} model, expected {}",
            manifest.kind,
            M::KIND
        )));
    }
    let vocab = manifest.vocab.map(Vocabulary::from_tokens).transpose()?;
    let mut model = M::skeleton(manifest.config, vocab, &manifest.labels)?;
    let params = model.archive_params_mut();
    if manifest.tensors.len() != params.len() {
        return Err(Error::Archive(format!(
            "archive has {} tensors, model expects {}",
            manifest.tensors.len(),
            params.len()
        )));
    }
    let mut next_free = 0usize;
    let mut seen = vec![false; params.len()];
    for entry in &manifest.tensors {
        let id = params
            .find(&entry.name)
            .ok_or_else(|| Error::Archive(format!("unexpected tensor {:?}", entry.name)))?;
        if std::mem::replace(&mut seen[id.index()], true) {
            return Err(Error::Archive(format!("tensor {:?} listed twice", entry.name)));
        }
        let offset = usize::try_from(entry.offset).map_err(|_| Error::Archive("offset too large".into()))?;
        let len = entry.shape.iter().product::<usize>() * 4;
        if offset < next_free || offset + len > blob.len() {
            return Err(Error::Archive(format!(
                "tensor {:?} at offset {offset} overlaps or exceeds the blob",
                entry.name
            )));
        }
        next_free = offset + len;
        let data = blob[offset..offset + len]
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect();
        params
            .assign(id, Tensor::new(&entry.shape, data)?)
            .map_err(|e| Error::Archive(format!("tensor {:?}: {e}", entry.name)))?;
    }
    Ok(model)
}

pub fn save_model<M: Persist>(model: &M, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_archive_bytes(model)?).map_err(Error::file(path))
}

pub fn load_model<M: Persist>(path: impl AsRef<Path>) -> Result<M> {
    let path = path.as_ref();
    from_archive_bytes(&fs::read(path).map_err(Error::file(path))?)
}
