//! Attribute-conditioned rejection sampling in latent space, decoding of accepted points and
//! candidate bookkeeping.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autoencoder::{decode_many, AeError, Autoencoder, LatentPoint};
use crate::corpus::{Attribute, LabeledCorpus, PeptideSequence};
use crate::latent::{LatentClassifier, MixtureDensity};

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("no sample accepted in {attempts} attempts; the attribute combination is not realizable in latent space")]
    UnrealizableAttributeCombination { attempts: usize },
    #[error("no latent classifier for attribute `{0}`")]
    MissingClassifier(Attribute),
    #[error("attribute `{0}` listed twice in the target")]
    DuplicateAttribute(Attribute),
    #[error("classifier dimension {got} does not match mixture dimension {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("invalid target `{0}`")]
    BadTarget(String),
    #[error("stage `{0}` already has a verdict")]
    VerdictExists(String),
    #[error(transparent)]
    Autoencoder(#[from] AeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Desired attribute values; an empty target samples the mixture unconditionally.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeTarget {
    pub targets: Vec<(Attribute, bool)>,
}

impl AttributeTarget {
    pub fn new(targets: Vec<(Attribute, bool)>) -> Result<Self, SamplerError> {
        let mut seen = Vec::new();
        for (a, _) in &targets {
            if seen.contains(a) {
                return Err(SamplerError::DuplicateAttribute(*a));
            }
            seen.push(*a);
        }
        Ok(Self { targets })
    }

    pub fn single(attribute: Attribute, value: bool) -> Self {
        Self {
            targets: vec![(attribute, value)],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

impl FromStr for AttributeTarget {
    type Err = SamplerError;

    /// `amp=1,toxic=0`
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut targets = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (name, value) = part.split_once('=').ok_or_else(|| SamplerError::BadTarget(part.into()))?;
            let attribute: Attribute = name.parse().map_err(|_| SamplerError::BadTarget(part.into()))?;
            let value = match value.trim() {
                "1" | "true" | "yes" => true,
                "0" | "false" | "no" => false,
                _ => return Err(SamplerError::BadTarget(part.into())),
            };
            targets.push((attribute, value));
        }
        Self::new(targets)
    }
}

impl fmt::Display for AttributeTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.targets.iter().map(|(a, v)| format!("{a}={}", u8::from(*v))).collect();
        f.write_str(&parts.join(","))
    }
}

/// Classifiers matched to the target, in target order.
fn resolve<'a>(
    gmm: &MixtureDensity,
    classifiers: &'a [LatentClassifier],
    target: &AttributeTarget,
) -> Result<Vec<(&'a LatentClassifier, bool)>, SamplerError> {
    target
        .targets
        .iter()
        .map(|&(a, v)| {
            let c = classifiers
                .iter()
                .find(|c| c.attribute == a)
                .ok_or(SamplerError::MissingClassifier(a))?;
            if c.dim() != gmm.dim() {
                return Err(SamplerError::DimMismatch {
                    expected: gmm.dim(),
                    got: c.dim(),
                });
            }
            Ok((c, v))
        })
        .collect()
}

fn product(resolved: &[(&LatentClassifier, bool)], z: &[f64]) -> f64 {
    resolved.iter().map(|(c, v)| c.prob_of(z, *v)).product()
}

/// `∏ q(a_i = target_i | z)`.
pub fn acceptance_prob(
    classifiers: &[LatentClassifier],
    target: &AttributeTarget,
    z: &LatentPoint,
) -> Result<f64, SamplerError> {
    let mut p = 1.0;
    for &(a, v) in &target.targets {
        let c = classifiers
            .iter()
            .find(|c| c.attribute == a)
            .ok_or(SamplerError::MissingClassifier(a))?;
        p *= c.prob_of(&z.z, v);
    }
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Independent RNG streams; results do not depend on the thread pool size.
    pub workers: usize,
    /// Total proposal budget; `None` allows 1,000 proposals per requested acceptance.
    pub max_attempts: Option<usize>,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            workers: 4,
            max_attempts: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptedPoint {
    pub z: LatentPoint,
    pub accept_prob: f64,
    pub worker: usize,
    pub draw: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSample {
    /// Ordered by (worker, draw).
    pub accepted: Vec<AcceptedPoint>,
    pub attempts: usize,
    /// Accepted over proposed; estimates `q(a)` under the mixture.
    pub acceptance_rate: f64,
    /// True when the budget ran out before the requested count was reached.
    pub exhausted: bool,
}

fn split_evenly(total: usize, parts: usize, i: usize) -> usize {
    total / parts + usize::from(i < total % parts)
}

/// Rejection sampling from `Q(z) ∏ q(a_i | z)`: propose `z ~ Q`, accept when
/// `u < ∏ q(a_i = target_i | z)`. Worker `w` uses ChaCha stream `w` of `config.seed` and
/// owns an equal share of the requested count and of the budget.
pub fn class_sample(
    gmm: &MixtureDensity,
    classifiers: &[LatentClassifier],
    target: &AttributeTarget,
    n_accepted: usize,
    config: &SamplerConfig,
) -> Result<ClassSample, SamplerError> {
    let resolved = resolve(gmm, classifiers, target)?;
    let workers = config.workers.max(1);
    let budget = config.max_attempts.unwrap_or(n_accepted.saturating_mul(1000).max(1000));
    let runs: Vec<(Vec<AcceptedPoint>, usize)> = (0..workers)
        .into_par_iter()
        .map(|w| {
            let quota = split_evenly(n_accepted, workers, w);
            let cap = split_evenly(budget, workers, w);
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(w as u64);
            let mut out = Vec::with_capacity(quota);
            let mut draws = 0;
            while out.len() < quota && draws < cap {
                let z = gmm.sample(&mut rng);
                let p = product(&resolved, &z.z);
                let u: f64 = rng.random();
                if u < p {
                    out.push(AcceptedPoint {
                        z,
                        accept_prob: p,
                        worker: w,
                        draw: draws,
                    });
                }
                draws += 1;
            }
            (out, draws)
        })
        .collect();
    let attempts: usize = runs.iter().map(|r| r.1).sum();
    let accepted: Vec<AcceptedPoint> = runs.into_iter().flat_map(|r| r.0).collect();
    if accepted.is_empty() && n_accepted > 0 {
        return Err(SamplerError::UnrealizableAttributeCombination { attempts });
    }
    Ok(ClassSample {
        acceptance_rate: if attempts == 0 { f64::NAN } else { accepted.len() as f64 / attempts as f64 },
        exhausted: accepted.len() < n_accepted,
        accepted,
        attempts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub score: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: String,
    pub sequence: PeptideSequence,
    pub origin_z: LatentPoint,
    pub accept_prob: f64,
    /// False when the sequence occurs verbatim in the training corpus.
    pub novel: bool,
    pub verdicts: BTreeMap<String, Verdict>,
}

impl Candidate {
    /// Adds a screening verdict; each stage is recorded once.
    pub fn record(&mut self, stage: &str, score: f64, pass: bool) -> Result<(), SamplerError> {
        if self.verdicts.contains_key(stage) {
            return Err(SamplerError::VerdictExists(stage.to_owned()));
        }
        self.verdicts.insert(stage.to_owned(), Verdict { score, pass });
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub candidates: Vec<Candidate>,
    pub accepted_points: usize,
    pub attempts: usize,
    pub acceptance_rate: f64,
}

/// Samples `count` accepted latent points, beam-decodes each and merges exact duplicates,
/// keeping the origin with the highest acceptance probability. Candidates keep the order
/// in which their sequence first appeared.
pub fn generate_candidates(
    model: &Autoencoder,
    gmm: &MixtureDensity,
    classifiers: &[LatentClassifier],
    target: &AttributeTarget,
    count: usize,
    config: &SamplerConfig,
    training: &LabeledCorpus,
) -> Result<CandidateSet, SamplerError> {
    let sample = class_sample(gmm, classifiers, target, count, config)?;
    let zs: Vec<LatentPoint> = sample.accepted.iter().map(|a| a.z.clone()).collect();
    let decoded = decode_many(model, &zs, model.config.beam_size)?;
    let known: std::collections::HashSet<&str> = training.entries.iter().map(|e| e.sequence.as_str()).collect();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut candidates: Vec<Candidate> = Vec::new();
    for (acc, seq) in sample.accepted.iter().zip(decoded) {
        match index.get(seq.as_str()) {
            Some(&i) => {
                let c = &mut candidates[i];
                if acc.accept_prob > c.accept_prob {
                    c.accept_prob = acc.accept_prob;
                    c.origin_z = acc.z.clone();
                }
            }
            None => {
                index.insert(seq.as_str().to_owned(), candidates.len());
                candidates.push(Candidate {
                    id: format!("cand_{:05}", candidates.len() + 1),
                    novel: !known.contains(seq.as_str()),
                    sequence: seq,
                    origin_z: acc.z.clone(),
                    accept_prob: acc.accept_prob,
                    verdicts: BTreeMap::new(),
                });
            }
        }
    }
    Ok(CandidateSet {
        candidates,
        accepted_points: sample.accepted.len(),
        attempts: sample.attempts,
        acceptance_rate: sample.acceptance_rate,
    })
}

fn novel_flag(c: &Candidate) -> &'static str {
    if c.novel {
        "novel"
    } else {
        "not_novel"
    }
}

/// FASTA with headers `id|accept_prob|novel_flag`.
pub fn write_fasta(candidates: &[Candidate], out: &mut impl Write) -> std::io::Result<()> {
    for c in candidates {
        writeln!(out, ">{}|{:.6}|{}", c.id, c.accept_prob, novel_flag(c))?;
        writeln!(out, "{}", c.sequence)?;
    }
    Ok(())
}

/// One row per candidate: id, sequence, accept_prob, novel, z_norm, then one
/// `p_<attribute>` column per classifier.
pub fn write_candidate_csv(
    candidates: &[Candidate],
    classifiers: &[LatentClassifier],
    out: impl Write,
) -> Result<(), SamplerError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["id".to_owned(), "sequence".into(), "accept_prob".into(), "novel".into(), "z_norm".into()];
    header.extend(classifiers.iter().map(|c| format!("p_{}", c.attribute)));
    w.write_record(&header)?;
    for c in candidates {
        let mut row = vec![
            c.id.clone(),
            c.sequence.to_string(),
            format!("{:.6}", c.accept_prob),
            c.novel.to_string(),
            format!("{:.6}", c.origin_z.norm()),
        ];
        row.extend(classifiers.iter().map(|k| format!("{:.6}", k.prob(&c.origin_z.z))));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_candidates(
    candidates: &[Candidate],
    classifiers: &[LatentClassifier],
    fasta: &Path,
    csv_path: &Path,
) -> Result<(), SamplerError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(fasta)?);
    write_fasta(candidates, &mut f)?;
    f.flush()?;
    write_candidate_csv(candidates, classifiers, std::fs::File::create(csv_path)?)
}

#[cfg(test)]
mod tests;
