//! Corpus ingestion, tokenization, deterministic splitting, and synthetic
//! corpus generation.
//!
//! Supported input formats: CSV with a `text,label` header (RFC-4180) and
//! JSONL with required `text` and `label` fields (`label` may be a string or
//! an integer; an optional `id` field is preserved). Raw labels are remapped
//! to contiguous 0-based indices in lexicographic order of the raw label
//! string; the mapping is recorded in the corpus metadata.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

#[derive(Debug, Error)]
pub enum TextError {
    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("class {class} has {count} samples; at least 2 are required to stratify")]
    TooFewPerClass { class: usize, count: usize },
    #[error("split ratio {0} is outside (0, 1)")]
    BadRatio(f64),
    #[error("vocabulary max_size {0} must be at least 3")]
    VocabTooSmall(usize),
    #[error("duplicate sample id {0}")]
    DuplicateId(String),
    #[error("invalid synthetic corpus spec: {0}")]
    BadSynthSpec(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, TextError>;

/// One labeled text sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub text: String,
    pub label: usize,
}

/// Synthetic corpus generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub vocab_size: usize,
    /// Fraction of tokens drawn from the class-specific distribution rather
    /// than the shared one; 0 means no class signal, 1 means disjoint class
    /// vocabularies.
    pub class_signal_strength: f64,
    pub seed: u64,
}

/// Sidecar metadata written next to an exported corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct CorpusMeta {
    pub name: String,
    pub num_classes: usize,
    /// Raw label -> contiguous class index.
    pub label_map: BTreeMap<String, usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth_spec: Option<SynthSpec>,
}

/// A labeled text corpus with contiguous 0-based class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub name: String,
    pub samples: Vec<Sample>,
    pub num_classes: usize,
    pub meta: CorpusMeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Csv,
    Jsonl,
}

impl std::str::FromStr for CorpusFormat {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "csv" => Ok(CorpusFormat::Csv),
            "jsonl" => Ok(CorpusFormat::Jsonl),
            other => Err(format!("unknown corpus format {other:?} (expected csv or jsonl)")),
        }
    }
}

/// Deterministic train/test partition of a corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub train_d: Vec<String>,
    pub test: Vec<String>,
    pub ratio: f64,
    pub seed: u64,
}

/// Token vocabulary. Id 0 is PAD, id 1 is UNK, the remainder are corpus
/// tokens by descending frequency (ties broken lexicographically).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    token_to_id: BTreeMap<String, usize>,
    size: usize,
}

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

impl Vocabulary {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }
}

/// Lowercased word tokens, split on whitespace and punctuation.
pub fn word_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

struct RawRecord {
    id: Option<String>,
    text: String,
    label: String,
}

/// Read a CSV or JSONL corpus from disk. Labels are remapped to contiguous
/// 0-based indices in lexicographic order of the raw label string.
pub fn ingest(path: &Path, format: CorpusFormat) -> Result<Corpus> {
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".to_string());
    let records = match format {
        CorpusFormat::Csv => read_csv(path)?,
        CorpusFormat::Jsonl => read_jsonl(path)?,
    };
    if records.is_empty() {
        return Err(TextError::EmptyCorpus);
    }
    let mut label_map = BTreeMap::new();
    for r in &records {
        let next = label_map.len();
        label_map.entry(r.label.clone()).or_insert(next);
    }
    // BTreeMap iteration already gives lexicographic raw-label order; rebuild
    // indices from that order so insertion order does not leak through.
    let label_map: BTreeMap<String, usize> =
        label_map.keys().cloned().enumerate().map(|(i, k)| (k, i)).collect();

    let mut seen = std::collections::HashSet::new();
    let mut samples = Vec::with_capacity(records.len());
    for (i, r) in records.into_iter().enumerate() {
        let id = r.id.unwrap_or_else(|| format!("{name}-{i:06}"));
        if !seen.insert(id.clone()) {
            return Err(TextError::DuplicateId(id));
        }
        samples.push(Sample { id, text: r.text, label: label_map[&r.label] });
    }
    let num_classes = label_map.len();
    let meta = CorpusMeta { name: name.clone(), num_classes, label_map, synth_spec: None };
    Ok(Corpus { name, samples, num_classes, meta })
}

fn read_csv(path: &Path) -> Result<Vec<RawRecord>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    let text_idx = headers.iter().position(|h| h == "text").ok_or(TextError::Parse {
        line: 1,
        detail: "missing required column `text`".into(),
    })?;
    let label_idx = headers.iter().position(|h| h == "label").ok_or(TextError::Parse {
        line: 1,
        detail: "missing required column `label`".into(),
    })?;
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2; // header is line 1
        let row = row.map_err(csv_err)?;
        let text = row.get(text_idx).unwrap_or("").to_string();
        let label = row.get(label_idx).unwrap_or("").to_string();
        if text.is_empty() {
            return Err(TextError::Parse { line, detail: "empty text field".into() });
        }
        if label.is_empty() {
            return Err(TextError::Parse { line, detail: "empty label field".into() });
        }
        records.push(RawRecord { id: None, text, label });
    }
    Ok(records)
}

fn csv_err(e: csv::Error) -> TextError {
    let line = match e.position() {
        Some(p) => p.line() as usize,
        None => 0,
    };
    TextError::Parse { line, detail: e.to_string() }
}

fn read_jsonl(path: &Path) -> Result<Vec<RawRecord>> {
    #[derive(Deserialize)]
    struct Line {
        #[serde(default)]
        id: Option<String>,
        text: String,
        label: serde_json::Value,
    }
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line)
            .map_err(|e| TextError::Parse { line: line_no, detail: e.to_string() })?;
        if parsed.text.is_empty() {
            return Err(TextError::Parse { line: line_no, detail: "empty text field".into() });
        }
        let label = match &parsed.label {
            serde_json::Value::String(s) if !s.is_empty() => s.clone(),
            serde_json::Value::Number(n) if n.is_u64() || n.is_i64() => n.to_string(),
            other => {
                return Err(TextError::Parse {
                    line: line_no,
                    detail: format!("label must be a string or integer, got {other}"),
                })
            }
        };
        records.push(RawRecord { id: parsed.id, text: parsed.text, label });
    }
    if records.is_empty() {
        return Err(TextError::EmptyCorpus);
    }
    Ok(records)
}

/// Write a corpus as JSONL plus a metadata sidecar (`<path>.meta.json`).
/// `ingest` of the JSONL file round-trips ids, texts, and labels.
pub fn export(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    for s in &corpus.samples {
        let line = serde_json::to_string(s)?;
        writeln!(f, "{line}")?;
    }
    let meta_path = sidecar_path(path);
    std::fs::write(&meta_path, serde_json::to_string_pretty(&corpus.meta)?)?;
    Ok(())
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".meta.json");
    std::path::PathBuf::from(p)
}

/// Most frequent tokens, ties broken lexicographically, capped at `max_size`
/// including PAD and UNK.
pub fn build_vocab(corpus: &Corpus, max_size: usize) -> Result<Vocabulary> {
    if max_size < 3 {
        return Err(TextError::VocabTooSmall(max_size));
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for s in &corpus.samples {
        for t in word_tokens(&s.text) {
            *counts.entry(t).or_insert(0) += 1;
        }
    }
    let mut by_freq: Vec<(String, usize)> = counts.into_iter().collect();
    by_freq.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut token_to_id = BTreeMap::new();
    token_to_id.insert("<pad>".to_string(), PAD_ID);
    token_to_id.insert("<unk>".to_string(), UNK_ID);
    for (i, (tok, _)) in by_freq.into_iter().take(max_size - 2).enumerate() {
        token_to_id.insert(tok, i + 2);
    }
    let size = token_to_id.len();
    Ok(Vocabulary { token_to_id, size })
}

/// Fixed-length token id sequence: truncate, right-pad with PAD, map unknown
/// tokens to UNK.
pub fn tokenize(text: &str, vocab: &Vocabulary, max_len: usize) -> Vec<usize> {
    assert!(max_len >= 1, "max_len must be at least 1");
    let mut ids: Vec<usize> =
        word_tokens(text).into_iter().take(max_len).map(|t| vocab.id(&t)).collect();
    ids.resize(max_len, PAD_ID);
    ids
}

/// Stratified deterministic split. Exactly `floor(ratio * N)` samples go to
/// the training side, with per-class proportions preserved within one sample
/// (largest-remainder rounding).
pub fn split(corpus: &Corpus, ratio: f64, seed_value: u64) -> Result<CorpusSplit> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(TextError::BadRatio(ratio));
    }
    if corpus.samples.is_empty() {
        return Err(TextError::EmptyCorpus);
    }
    let mut by_class: Vec<Vec<&Sample>> = vec![Vec::new(); corpus.num_classes];
    for s in &corpus.samples {
        by_class[s.label].push(s);
    }
    for (class, group) in by_class.iter().enumerate() {
        if group.len() < 2 {
            return Err(TextError::TooFewPerClass { class, count: group.len() });
        }
    }
    let total = corpus.samples.len();
    let train_total = (ratio * total as f64).floor() as usize;

    // Largest-remainder apportionment of the train quota across classes.
    let mut quotas: Vec<(usize, usize, f64)> = by_class
        .iter()
        .enumerate()
        .map(|(c, g)| {
            let exact = ratio * g.len() as f64;
            (c, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let mut assigned: usize = quotas.iter().map(|&(_, q, _)| q).sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| {
        quotas[b].2.partial_cmp(&quotas[a].2).unwrap().then_with(|| a.cmp(&b))
    });
    let mut i = 0;
    while assigned < train_total {
        quotas[order[i % order.len()]].1 += 1;
        assigned += 1;
        i += 1;
    }

    let mut rng = seed::rng(seed_value, "corpus-split");
    let mut train_d = Vec::with_capacity(train_total);
    let mut test = Vec::with_capacity(total - train_total);
    for (c, group) in by_class.iter().enumerate() {
        let mut ids: Vec<&String> = group.iter().map(|s| &s.id).collect();
        ids.shuffle(&mut rng);
        let take = quotas[c].1.min(ids.len());
        for (j, id) in ids.into_iter().enumerate() {
            if j < take {
                train_d.push(id.clone());
            } else {
                test.push(id.clone());
            }
        }
    }
    Ok(CorpusSplit { train_d, test, ratio, seed: seed_value })
}

/// Generate a deterministic synthetic corpus. Each token is drawn either
/// from a shared heavy-tailed unigram distribution over the whole
/// vocabulary, or (with probability `class_signal_strength`) from the
/// class's private block of the vocabulary.
pub fn synth_corpus(spec: &SynthSpec) -> Result<Corpus> {
    if spec.num_classes == 0 || spec.samples_per_class == 0 || spec.vocab_size == 0 {
        return Err(TextError::BadSynthSpec("all counts must be positive".into()));
    }
    if !(0.0..=1.0).contains(&spec.class_signal_strength) {
        return Err(TextError::BadSynthSpec(format!(
            "class_signal_strength {} outside [0, 1]",
            spec.class_signal_strength
        )));
    }
    if spec.vocab_size < spec.num_classes {
        return Err(TextError::BadSynthSpec("vocab_size must be >= num_classes".into()));
    }
    let v = spec.vocab_size;
    // Shared distribution: Zipf-like weights 1/(rank+1).
    let shared = cumulative(&(0..v).map(|i| 1.0 / (i + 1) as f64).collect::<Vec<_>>());
    // Class blocks: contiguous, near-equal partition of the vocabulary.
    let block = v / spec.num_classes;

    let mut rng = seed::rng(spec.seed, "synth-corpus");
    let mut samples = Vec::with_capacity(spec.num_classes * spec.samples_per_class);
    for class in 0..spec.num_classes {
        let start = class * block;
        let end = if class + 1 == spec.num_classes { v } else { start + block };
        for n in 0..spec.samples_per_class {
            let len = rng.gen_range(10..=20);
            let mut words = Vec::with_capacity(len);
            for _ in 0..len {
                let tok = if rng.gen::<f64>() < spec.class_signal_strength {
                    rng.gen_range(start..end)
                } else {
                    sample_cumulative(&shared, &mut rng)
                };
                words.push(format!("t{tok}"));
            }
            samples.push(Sample {
                id: format!("syn-c{class}-{n:05}"),
                text: words.join(" "),
                label: class,
            });
        }
    }
    let label_map: BTreeMap<String, usize> =
        (0..spec.num_classes).map(|c| (format!("class{c}"), c)).collect();
    let meta = CorpusMeta {
        name: "synthetic".to_string(),
        num_classes: spec.num_classes,
        label_map,
        synth_spec: Some(spec.clone()),
    };
    Ok(Corpus {
        name: "synthetic".to_string(),
        samples,
        num_classes: spec.num_classes,
        meta,
    })
}

fn cumulative(weights: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    weights
        .iter()
        .map(|w| {
            acc += w / total;
            acc
        })
        .collect()
}

fn sample_cumulative<R: Rng>(cdf: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    match cdf.binary_search_by(|p| p.partial_cmp(&u).unwrap()) {
        Ok(i) | Err(i) => i.min(cdf.len() - 1),
    }
}
