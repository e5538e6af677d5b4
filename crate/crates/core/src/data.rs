//! Dataset ingestion, vocabulary construction, and synthetic data.
//!
//! Records live on disk as line-delimited JSON objects with string fields:
//! `{"id": "...", "text": "...", "labels": ["...", ...]}`. An optional
//! `tags` field is accepted and ignored. Label names stay strings in files;
//! integer ids exist only in memory.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Document, LabelId, LabelSet, TOKEN_FIRST_WORD, TOKEN_NUM, TOKEN_OOV};

/// Fixed stopword list applied during tokenization.
pub const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "but", "by", "for", "from", "had", "has", "have",
    "he", "her", "his", "if", "in", "is", "it", "its", "not", "of", "on", "or", "she", "that",
    "the", "their", "they", "this", "to", "was", "were", "which", "will", "with",
];

/// One raw record as stored on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub text: String,
    pub labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tags: Option<serde_json::Value>,
}

/// One ingested instance, ready for the model.
#[derive(Debug, Clone)]
pub struct Instance {
    pub id: String,
    pub doc: Document,
    pub labels: LabelSet,
}

/// Lowercases, strips punctuation, splits on whitespace, drops stopwords.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.chars()
                .filter(|c| !c.is_ascii_punctuation())
                .flat_map(|c| c.to_lowercase())
                .collect::<String>()
        })
        .filter(|w| !w.is_empty() && !STOPWORDS.contains(&w.as_str()))
        .collect()
}

fn is_number(token: &str) -> bool {
    token.chars().all(|c| c.is_ascii_digit())
}

/// Word-name to token-id map. Ids 0..=2 are reserved (padding, number,
/// out-of-vocabulary); real words start at [`TOKEN_FIRST_WORD`].
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct WordVocabulary {
    names: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl WordVocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    fn rebuild_index(&mut self) {
        self.index = self
            .names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), TOKEN_FIRST_WORD + i))
            .collect();
    }

    /// Total id space including the three reserved tokens.
    pub fn size(&self) -> usize {
        TOKEN_FIRST_WORD + self.names.len()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    fn intern(&mut self, word: &str) -> usize {
        if let Some(&id) = self.index.get(word) {
            return id;
        }
        let id = TOKEN_FIRST_WORD + self.names.len();
        self.names.push(word.to_string());
        self.index.insert(word.to_string(), id);
        id
    }
}

/// Label-name to id map with training-split frequencies. Ids are contiguous
/// from 1; id 0 is the STOP symbol and never a label.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LabelVocabulary {
    names: Vec<String>,
    frequencies: Vec<u64>,
    #[serde(skip)]
    index: HashMap<String, LabelId>,
}

impl LabelVocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    fn rebuild_index(&mut self) {
        self.index = self
            .names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i + 1))
            .collect();
    }

    pub fn num_labels(&self) -> usize {
        self.names.len()
    }

    pub fn id(&self, name: &str) -> Option<LabelId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: LabelId) -> Option<&str> {
        id.checked_sub(1).and_then(|i| self.names.get(i)).map(|s| s.as_str())
    }

    pub fn frequency(&self, id: LabelId) -> u64 {
        id.checked_sub(1)
            .and_then(|i| self.frequencies.get(i))
            .copied()
            .unwrap_or(0)
    }

    /// Frequencies indexed by label id, slot 0 unused.
    pub fn frequency_table(&self) -> Vec<u64> {
        let mut table = vec![0; self.names.len() + 1];
        for (i, &f) in self.frequencies.iter().enumerate() {
            table[i + 1] = f;
        }
        table
    }

    fn intern(&mut self, name: &str) -> LabelId {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() + 1;
        self.names.push(name.to_string());
        self.frequencies.push(0);
        self.index.insert(name.to_string(), id);
        id
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocabularies {
    pub words: WordVocabulary,
    pub labels: LabelVocabulary,
}

impl Vocabularies {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path)?;
        serde_json::to_writer(BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        let mut v: Vocabularies = serde_json::from_reader(BufReader::new(file))?;
        v.words.rebuild_index();
        v.labels.rebuild_index();
        Ok(v)
    }
}

/// What to do with a label name absent from the training vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnknownLabelPolicy {
    /// Drop the label from the record; drop the record if nothing remains.
    Skip,
    Error,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IngestReport {
    pub loaded: usize,
    pub rejected_empty_labels: usize,
    pub rejected_duplicate_labels: usize,
    pub rejected_empty_text: usize,
    pub skipped_unknown_labels: usize,
}

fn read_records(path: &Path) -> Result<Vec<DatasetRecord>> {
    let file = File::open(path)?;
    let mut records = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DatasetRecord = serde_json::from_str(&line).map_err(|e| {
            Error::data(format!("{}:{}: malformed record: {e}", path.display(), lineno + 1))
        })?;
        records.push(record);
    }
    Ok(records)
}

fn record_label_check(record: &DatasetRecord, report: &mut IngestReport) -> bool {
    if record.labels.is_empty() {
        report.rejected_empty_labels += 1;
        return false;
    }
    let mut seen = record.labels.clone();
    seen.sort();
    seen.dedup();
    if seen.len() != record.labels.len() {
        report.rejected_duplicate_labels += 1;
        return false;
    }
    true
}

/// Loads a training split, building both vocabularies from it.
pub fn load_training(
    path: &Path,
    max_doc_len: usize,
) -> Result<(Vec<Instance>, Vocabularies, IngestReport)> {
    let records = read_records(path)?;
    let mut words = WordVocabulary::new();
    let mut labels = LabelVocabulary::new();
    let mut report = IngestReport::default();
    let mut instances = Vec::new();
    for record in &records {
        if !record_label_check(record, &mut report) {
            continue;
        }
        let tokens = tokenize(&record.text);
        if tokens.is_empty() {
            report.rejected_empty_text += 1;
            continue;
        }
        let ids: Vec<usize> = tokens
            .iter()
            .map(|t| {
                if is_number(t) {
                    TOKEN_NUM
                } else {
                    words.intern(t)
                }
            })
            .collect();
        let label_ids: Vec<LabelId> = record.labels.iter().map(|l| labels.intern(l)).collect();
        for &id in &label_ids {
            labels.frequencies[id - 1] += 1;
        }
        report.loaded += 1;
        instances.push(Instance {
            id: record.id.clone(),
            doc: Document::from_tokens(ids, max_doc_len),
            labels: label_ids.into_iter().collect(),
        });
    }
    if instances.is_empty() {
        return Err(Error::data(format!(
            "{}: no usable records",
            path.display()
        )));
    }
    Ok((instances, Vocabularies { words, labels }, report))
}

/// Loads a split against fixed vocabularies (test or validation data).
pub fn load_with_vocab(
    path: &Path,
    vocab: &Vocabularies,
    max_doc_len: usize,
    unknown_labels: UnknownLabelPolicy,
) -> Result<(Vec<Instance>, IngestReport)> {
    let records = read_records(path)?;
    let mut report = IngestReport::default();
    let mut instances = Vec::new();
    for record in &records {
        if !record_label_check(record, &mut report) {
            continue;
        }
        let tokens = tokenize(&record.text);
        if tokens.is_empty() {
            report.rejected_empty_text += 1;
            continue;
        }
        let ids: Vec<usize> = tokens
            .iter()
            .map(|t| {
                if is_number(t) {
                    TOKEN_NUM
                } else {
                    vocab.words.id(t).unwrap_or(TOKEN_OOV)
                }
            })
            .collect();
        let mut label_ids = Vec::new();
        for name in &record.labels {
            match vocab.labels.id(name) {
                Some(id) => label_ids.push(id),
                None => match unknown_labels {
                    UnknownLabelPolicy::Skip => report.skipped_unknown_labels += 1,
                    UnknownLabelPolicy::Error => {
                        return Err(Error::data(format!(
                            "record '{}': unknown label '{name}'",
                            record.id
                        )));
                    }
                },
            }
        }
        if label_ids.is_empty() {
            report.rejected_empty_labels += 1;
            continue;
        }
        report.loaded += 1;
        instances.push(Instance {
            id: record.id.clone(),
            doc: Document::from_tokens(ids, max_doc_len),
            labels: label_ids.into_iter().collect(),
        });
    }
    Ok((instances, report))
}

pub fn write_records(records: &[DatasetRecord], path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut out = BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub const SIGNATURE_TOKENS_PER_LABEL: usize = 3;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub seed: u64,
    pub num_labels: usize,
    pub num_instances: usize,
    pub vocab_size: usize,
    pub max_set_size: usize,
    /// Noise tokens added per signature token, on average.
    pub noise_rate: f64,
}

/// Deterministic synthetic corpus. Label `ℓ` owns three signature words that
/// appear only in documents carrying `ℓ`; a document's text is the shuffled
/// union of its labels' signatures plus noise words from a disjoint pool, so
/// the exact label set is recoverable from the text.
pub fn gen_synth(cfg: &SynthConfig) -> Result<Vec<DatasetRecord>> {
    if cfg.num_labels == 0 || cfg.num_instances == 0 {
        return Err(Error::input("num_labels and num_instances must be positive"));
    }
    if cfg.max_set_size == 0 || cfg.max_set_size > cfg.num_labels {
        return Err(Error::input(format!(
            "max_set_size {} must be in 1..={}",
            cfg.max_set_size, cfg.num_labels
        )));
    }
    let signature_words = cfg.num_labels * SIGNATURE_TOKENS_PER_LABEL;
    if cfg.vocab_size <= signature_words {
        return Err(Error::input(format!(
            "vocab_size {} leaves no noise pool beyond {signature_words} signature words",
            cfg.vocab_size
        )));
    }
    if !(0.0..=10.0).contains(&cfg.noise_rate) {
        return Err(Error::input("noise_rate must be in [0, 10]"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let all_labels: Vec<usize> = (1..=cfg.num_labels).collect();
    let mut records = Vec::with_capacity(cfg.num_instances);
    for n in 0..cfg.num_instances {
        let set_size = rng.gen_range(1..=cfg.max_set_size);
        let mut chosen = all_labels.clone();
        chosen.shuffle(&mut rng);
        chosen.truncate(set_size);
        chosen.sort_unstable();

        let mut tokens: Vec<String> = Vec::new();
        for &l in &chosen {
            let base = (l - 1) * SIGNATURE_TOKENS_PER_LABEL;
            for k in 0..SIGNATURE_TOKENS_PER_LABEL {
                tokens.push(format!("w{}", base + k));
            }
        }
        let noise_count = (tokens.len() as f64 * cfg.noise_rate).round() as usize;
        for _ in 0..noise_count {
            let w = rng.gen_range(signature_words..cfg.vocab_size);
            tokens.push(format!("w{w}"));
        }
        tokens.shuffle(&mut rng);

        records.push(DatasetRecord {
            id: format!("synth-{n}"),
            text: tokens.join(" "),
            labels: chosen.iter().map(|l| format!("L{l}")).collect(),
            tags: None,
        });
    }
    Ok(records)
}
