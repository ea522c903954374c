//! Flat `key = value` pipeline configuration with dotted keys, e.g. `ae.latent_dim = 16`.
//!
//! Values are parsed as JSON when possible and taken as plain strings otherwise; `none`
//! clears an optional value and comma-separated text fills a list. Command-line overrides
//! are applied after the file, so flags win.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use pepgen::autoencoder::AeConfig;
use pepgen::corpus::{Attribute, DEFAULT_MAX_SEQ_LENGTH};
use pepgen::langmodel::LmConfig;
use pepgen::latent::{GmmConfig, LogisticConfig};
use pepgen::screening::{ScreenConfig, SeqClfConfig};

use crate::failure::{Context, Failure, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Paths {
    /// FASTA or CSV with a `sequence` column.
    pub sequences: Option<PathBuf>,
    /// Label CSVs with `sequence,attribute,value` rows.
    pub labels: Vec<PathBuf>,
    pub contact_manifest: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self { sequences: None, labels: Vec::new(), contact_manifest: None, out_dir: PathBuf::from("pepgen_out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSettings {
    pub max_seq_length: usize,
    /// When nonzero, `ingest` builds a synthetic corpus of this size instead of reading files.
    pub synthetic_count: usize,
    pub synthetic_labeled_fraction: f64,
}

impl Default for CorpusSettings {
    fn default() -> Self {
        Self { max_seq_length: DEFAULT_MAX_SEQ_LENGTH, synthetic_count: 0, synthetic_labeled_fraction: 0.3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub prior_samples: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { prior_samples: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedSettings {
    pub samples_per_seq: usize,
}

impl Default for EmbedSettings {
    fn default() -> Self {
        Self { samples_per_seq: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentClfSettings {
    pub attributes: Vec<String>,
}

impl Default for LatentClfSettings {
    fn default() -> Self {
        Self { attributes: vec!["amp".into()] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerSettings {
    pub workers: usize,
    pub max_attempts: Option<usize>,
    /// `attr=0|1` pairs separated by commas; empty samples the unconditioned mixture.
    pub target: String,
    pub n: usize,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        Self { workers: 4, max_attempts: None, target: "amp=1".into(), n: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSettings {
    pub amidated: bool,
    pub ph: f64,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self { amidated: true, ph: 7.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSettings {
    pub top_k: usize,
}

impl Default for ReportSettings {
    fn default() -> Self {
        Self { top_k: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Master seed; every component seed is derived from it.
    pub seed: u64,
    pub threads: Option<usize>,
    pub paths: Paths,
    pub corpus: CorpusSettings,
    pub ae: AeConfig,
    pub eval: EvalSettings,
    pub lm: LmConfig,
    pub embed: EmbedSettings,
    pub gmm: GmmConfig,
    pub latent_clf: LatentClfSettings,
    pub logistic: LogisticConfig,
    pub sampler: SamplerSettings,
    pub seq_clf: SeqClfConfig,
    pub screen: ScreenConfig,
    pub analysis: AnalysisSettings,
    pub report: ReportSettings,
}

/// Keys left out of the config hash: file locations and presentation settings do not
/// change what an artifact contains.
const UNHASHED: [&str; 3] = ["paths", "threads", "report"];

/// Component seeds are derived from `seed` and cannot be set directly.
const DERIVED_SEEDS: [(&str, u64); 4] = [("ae", 0), ("lm", 1), ("gmm", 2), ("seq_clf", 4)];

pub const SAMPLER_SEED_OFFSET: u64 = 3;
pub const EMBED_SEED_OFFSET: u64 = 5;
pub const EVAL_SEED_OFFSET: u64 = 7;

impl PipelineConfig {
    /// Defaults, then the config file (if any), then `overrides` in order.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut tree = serde_json::to_value(Self::default()).expect("config serializes");
        let mut entries = Vec::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).config_err(&format!("reading config {}", path.display()))?;
            entries = parse_flat(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        }
        entries.extend(overrides.iter().cloned());
        for (key, raw) in &entries {
            set_key(&mut tree, key, raw)?;
        }
        let mut cfg: Self = serde_json::from_value(tree).config_err("invalid config")?;
        cfg.derive_seeds();
        cfg.validate()?;
        Ok(cfg)
    }

    fn derive_seeds(&mut self) {
        for (section, offset) in DERIVED_SEEDS {
            let s = self.seed.wrapping_add(offset);
            match section {
                "ae" => self.ae.seed = s,
                "lm" => self.lm.seed = s,
                "gmm" => self.gmm.seed = s,
                _ => self.seq_clf.seed = s,
            }
        }
    }

    pub fn seed_for(&self, offset: u64) -> u64 {
        self.seed.wrapping_add(offset)
    }

    fn validate(&self) -> Result<()> {
        self.ae.validate().config_err("ae")?;
        self.screen.validate().config_err("screen")?;
        if self.threads == Some(0) {
            return Err(Failure::config("threads must be at least 1"));
        }
        if self.sampler.workers == 0 {
            return Err(Failure::config("sampler.workers must be at least 1"));
        }
        for a in &self.latent_clf.attributes {
            parse_attribute(a)?;
        }
        Ok(())
    }

    /// First 16 hex digits of SHA-256 over the canonical JSON of the hashed keys.
    pub fn hash(&self) -> String {
        let mut tree = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(map) = &mut tree {
            for k in UNHASHED {
                map.remove(k);
            }
        }
        let digest = Sha256::digest(tree.to_string().as_bytes());
        hex::encode(&digest[..8])
    }

    /// Resolved configuration as sorted `key = value` lines.
    pub fn to_flat(&self) -> String {
        let tree = serde_json::to_value(self).expect("config serializes");
        let mut lines = Vec::new();
        flatten("", &tree, &mut lines);
        lines.join("\n") + "\n"
    }
}

pub fn parse_attribute(s: &str) -> Result<Attribute> {
    s.trim().parse::<Attribute>().map_err(|e| Failure::config(format!("unknown attribute `{e}`")))
}

/// `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_flat(text: &str) -> std::result::Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| format!("line {}: expected `key = value`", i + 1))?;
        out.push((k.trim().to_owned(), v.trim().to_owned()));
    }
    Ok(out)
}

/// Splits `key=value` from a `--set` flag.
pub fn parse_override(s: &str) -> std::result::Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_owned(), v.trim().to_owned()))
        .ok_or_else(|| format!("expected KEY=VALUE, got `{s}`"))
}

fn set_key(tree: &mut Value, key: &str, raw: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.len() > 1 && parts.last() == Some(&"seed") {
        return Err(Failure::config(format!("`{key}` is derived from `seed` and cannot be set")));
    }
    let mut slot = tree;
    for p in &parts {
        slot = slot
            .as_object_mut()
            .and_then(|m| m.get_mut(*p))
            .ok_or_else(|| Failure::config(format!("unknown config key `{key}`")))?;
    }
    *slot = parse_value(slot, raw);
    Ok(())
}

fn parse_value(current: &Value, raw: &str) -> Value {
    if raw.eq_ignore_ascii_case("none") || raw.eq_ignore_ascii_case("null") {
        return Value::Null;
    }
    if current.is_string() {
        return Value::String(raw.to_owned());
    }
    if let Ok(v) = serde_json::from_str::<Value>(raw) {
        return v;
    }
    if current.is_array() {
        return Value::Array(
            raw.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| serde_json::from_str(s).unwrap_or_else(|_| Value::String(s.to_owned())))
                .collect(),
        );
    }
    Value::String(raw.to_owned())
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<String>) {
    match v {
        Value::Object(map) if !map.is_empty() => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        Value::String(s) => out.push(format!("{prefix} = {s}")),
        Value::Null => out.push(format!("{prefix} = none")),
        Value::Array(items) if items.iter().all(|i| i.is_string()) => {
            let joined: Vec<&str> = items.iter().filter_map(|i| i.as_str()).collect();
            out.push(format!("{prefix} = {}", joined.join(",")));
        }
        other => out.push(format!("{prefix} = {other}")),
    }
}
