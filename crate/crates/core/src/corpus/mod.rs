//! Peptide corpus ingestion: validation, label joins, deterministic splits and
//! upsampled token batches.

mod batches;
mod sequence;
pub mod synthetic;
mod vocab;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use batches::{training_batches, BatchStream, TokenBatch, UpsampleRatio};
pub use sequence::{
    residue_index, validate_sequence, PeptideSequence, Rejection, AMINO_ACIDS,
    DEFAULT_MAX_SEQ_LENGTH,
};
pub use vocab::{Vocabulary, EOS, PAD, SOS, UNK};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("{path}: malformed row {row}: {reason}")]
    MalformedRow {
        path: PathBuf,
        row: usize,
        reason: String,
    },
    #[error("{path}: row {row}: unknown attribute `{name}`")]
    UnknownAttribute {
        path: PathBuf,
        row: usize,
        name: String,
    },
    #[error("train split is empty")]
    EmptyTrainSplit,
    #[error("upsampling needs labeled and unlabeled train entries (labeled {labeled}, unlabeled {unlabeled})")]
    UpsampleUnavailable { labeled: usize, unlabeled: usize },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Binary attributes a peptide may be labeled with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Attribute {
    Amp,
    Toxic,
    BroadSpectrum,
    Structured,
    Hormone,
    Antihypertensive,
    Anticancer,
}

impl Attribute {
    pub const ALL: [Attribute; 7] = [
        Attribute::Amp,
        Attribute::Toxic,
        Attribute::BroadSpectrum,
        Attribute::Structured,
        Attribute::Hormone,
        Attribute::Antihypertensive,
        Attribute::Anticancer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Amp => "amp",
            Attribute::Toxic => "toxic",
            Attribute::BroadSpectrum => "broad",
            Attribute::Structured => "structured",
            Attribute::Hormone => "hormone",
            Attribute::Antihypertensive => "antihypertensive",
            Attribute::Anticancer => "anticancer",
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Attribute {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase().replace(['-', '_', ' '], "");
        Ok(match lower.as_str() {
            "amp" | "antimicrobial" => Attribute::Amp,
            "toxic" | "toxicity" => Attribute::Toxic,
            "broad" | "broadspectrum" => Attribute::BroadSpectrum,
            "structured" | "structure" => Attribute::Structured,
            "hormone" => Attribute::Hormone,
            "antihypertensive" => Attribute::Antihypertensive,
            "anticancer" => Attribute::Anticancer,
            _ => return Err(s.to_owned()),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Heldout,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub sequence: PeptideSequence,
    pub labels: BTreeMap<Attribute, bool>,
    pub split: Split,
}

impl CorpusEntry {
    pub fn is_labeled(&self) -> bool {
        !self.labels.is_empty()
    }

    pub fn label(&self, attribute: Attribute) -> Option<bool> {
        self.labels.get(&attribute).copied()
    }
}

/// Ingestion summary, serialized as `{total, accepted, rejected: {reason: count}}`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipReport {
    pub total: usize,
    pub accepted: usize,
    pub rejected: BTreeMap<String, usize>,
}

impl SkipReport {
    pub fn rejected_count(&self) -> usize {
        self.rejected.values().sum()
    }

    fn reject(&mut self, reason: &str) {
        *self.rejected.entry(reason.to_owned()).or_default() += 1;
    }
}

/// Splits are a pure function of `(sequence, seed)`: a seeded FNV-1a hash finalized with
/// splitmix64, mapped to `[0, 1)` and thresholded at 0.8 / 0.9.
pub fn assign_split(sequence: &str, seed: u64) -> Split {
    let u = split_hash_unit(sequence, seed);
    if u < 0.8 {
        Split::Train
    } else if u < 0.9 {
        Split::Heldout
    } else {
        Split::Test
    }
}

fn split_hash_unit(sequence: &str, seed: u64) -> f64 {
    const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = FNV_OFFSET;
    for b in seed.to_le_bytes().iter().chain(sequence.as_bytes()) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    // splitmix64 finalizer
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^= h >> 31;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Immutable, deduplicated, split corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledCorpus {
    pub entries: Vec<CorpusEntry>,
    pub vocabulary: Vocabulary,
    pub max_seq_length: usize,
    pub seed: u64,
    pub report: SkipReport,
}

/// One raw record fed into corpus construction.
#[derive(Debug, Clone)]
pub struct RawRecord {
    pub sequence: String,
    pub labels: Vec<(Attribute, bool)>,
}

impl LabeledCorpus {
    /// Builds a corpus from raw records. Invalid sequences are skipped and counted; duplicates
    /// merge into the first occurrence, which keeps its existing labels.
    pub fn from_records(
        records: impl IntoIterator<Item = RawRecord>,
        seed: u64,
        max_seq_length: usize,
    ) -> Self {
        let mut report = SkipReport::default();
        let mut entries: Vec<CorpusEntry> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        for rec in records {
            report.total += 1;
            let seq = match PeptideSequence::new(&rec.sequence, max_seq_length) {
                Ok(s) => s,
                Err(r) => {
                    report.reject(r.name());
                    continue;
                }
            };
            match index.get(seq.as_str()) {
                Some(&i) => {
                    report.reject("Duplicate");
                    for (a, v) in rec.labels {
                        entries[i].labels.entry(a).or_insert(v);
                    }
                }
                None => {
                    report.accepted += 1;
                    index.insert(seq.as_str().to_owned(), entries.len());
                    let split = assign_split(seq.as_str(), seed);
                    let mut labels = BTreeMap::new();
                    for (a, v) in rec.labels {
                        labels.entry(a).or_insert(v);
                    }
                    entries.push(CorpusEntry {
                        sequence: seq,
                        labels,
                        split,
                    });
                }
            }
        }
        Self {
            entries,
            vocabulary: Vocabulary,
            max_seq_length,
            seed,
            report,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &CorpusEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn sequences(&self, split: Split) -> Vec<PeptideSequence> {
        self.split(split).map(|e| e.sequence.clone()).collect()
    }

    pub fn contains(&self, seq: &str) -> bool {
        self.entries.iter().any(|e| e.sequence.as_str() == seq)
    }

    /// Entries carrying a label for `attribute`, with that label.
    pub fn labeled_for(
        &self,
        attribute: Attribute,
        split: Split,
    ) -> Vec<(&PeptideSequence, bool)> {
        self.split(split)
            .filter_map(|e| e.label(attribute).map(|v| (&e.sequence, v)))
            .collect()
    }
}

/// Loads sequences (FASTA or CSV with a `sequence` column) and joins label CSVs
/// (`sequence,attribute,value`) on exact sequence match. Label-file sequences absent from
/// the sequence file are added as labeled entries after all sequence-file entries.
pub fn load_corpus(
    seq_file: &Path,
    label_files: &[PathBuf],
    seed: u64,
    max_seq_length: usize,
) -> Result<LabeledCorpus, CorpusError> {
    let raw_sequences = read_sequences(seq_file)?;
    let mut labels: Vec<(String, Attribute, bool)> = Vec::new();
    for path in label_files {
        labels.extend(read_labels(path)?);
    }

    let mut by_seq: HashMap<&str, Vec<(Attribute, bool)>> = HashMap::new();
    let mut label_order: Vec<&str> = Vec::new();
    for (s, a, v) in &labels {
        let slot = by_seq.entry(s.as_str()).or_insert_with(|| {
            label_order.push(s.as_str());
            Vec::new()
        });
        slot.push((*a, *v));
    }

    let mut records: Vec<RawRecord> = Vec::with_capacity(raw_sequences.len());
    let mut seen: std::collections::HashSet<&str> = std::collections::HashSet::new();
    for s in &raw_sequences {
        seen.insert(s.as_str());
        records.push(RawRecord {
            sequence: s.clone(),
            labels: by_seq.get(s.as_str()).cloned().unwrap_or_default(),
        });
    }
    for s in label_order {
        if !seen.contains(s) {
            records.push(RawRecord {
                sequence: s.to_owned(),
                labels: by_seq[s].clone(),
            });
        }
    }
    Ok(LabeledCorpus::from_records(records, seed, max_seq_length))
}

fn read_text(path: &Path) -> Result<String, CorpusError> {
    if !path.exists() {
        return Err(CorpusError::FileNotFound(path.to_owned()));
    }
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_owned(),
        source,
    })
}

/// Reads FASTA records or a CSV `sequence` column; detection is by the first non-blank
/// character (`>` means FASTA).
pub fn read_sequences(path: &Path) -> Result<Vec<String>, CorpusError> {
    let text = read_text(path)?;
    let is_fasta = text.trim_start().starts_with('>');
    if is_fasta {
        return Ok(parse_fasta(&text).into_iter().map(|(_, s)| s).collect());
    }
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| malformed(path, 0, e.to_string()))?
        .clone();
    let col = headers
        .iter()
        .position(|h| h.eq_ignore_ascii_case("sequence"))
        .ok_or_else(|| malformed(path, 0, "missing `sequence` column".into()))?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| malformed(path, i + 1, e.to_string()))?;
        let s = rec
            .get(col)
            .ok_or_else(|| malformed(path, i + 1, "missing sequence field".into()))?;
        out.push(s.to_owned());
    }
    Ok(out)
}

/// `(id, sequence)` pairs; header text after the first whitespace is ignored.
pub fn parse_fasta(text: &str) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = Vec::new();
    for line in text.lines() {
        let line = line.trim_end();
        if let Some(header) = line.strip_prefix('>') {
            let id = header.split_whitespace().next().unwrap_or("").to_owned();
            out.push((id, String::new()));
        } else if let Some((_, seq)) = out.last_mut() {
            seq.push_str(line.trim());
        }
    }
    out
}

fn read_labels(path: &Path) -> Result<Vec<(String, Attribute, bool)>, CorpusError> {
    let text = read_text(path)?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| malformed(path, 0, e.to_string()))?
        .iter()
        .map(|h| h.to_ascii_lowercase())
        .collect();
    if headers != ["sequence", "attribute", "value"] {
        return Err(malformed(
            path,
            0,
            format!("expected header sequence,attribute,value, got {}", headers.join(",")),
        ));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| malformed(path, row, e.to_string()))?;
        if rec.len() != 3 {
            return Err(malformed(path, row, format!("expected 3 fields, got {}", rec.len())));
        }
        let attribute = rec[1].parse::<Attribute>().map_err(|name| {
            CorpusError::UnknownAttribute {
                path: path.to_owned(),
                row,
                name,
            }
        })?;
        let value = match &rec[2] {
            "0" => false,
            "1" => true,
            other => return Err(malformed(path, row, format!("label value `{other}` is not 0/1"))),
        };
        out.push((rec[0].to_owned(), attribute, value));
    }
    Ok(out)
}

fn malformed(path: &Path, row: usize, reason: String) -> CorpusError {
    CorpusError::MalformedRow {
        path: path.to_owned(),
        row,
        reason,
    }
}
