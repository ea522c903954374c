//! Post-generation screening: sequence-level attribute classifiers with logit thresholds,
//! a language-model perplexity cut, and the membrane-contact screen over simulation output.

mod contacts;
mod seqclf;

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

pub use contacts::{
    contact_stats, load_contact_manifest, simscreen_filter, ContactOutcome, ContactSeries, ContactStats, SimReason,
    SimVerdict,
};
pub use seqclf::{seq_logit, train_seq_classifier, SeqClassifier, SeqClfConfig, SeqClfReport, SequenceLogit};

use crate::corpus::{Attribute, PeptideSequence};
use crate::langmodel::SequenceScorer;
use crate::sampler::{Candidate, SamplerError};
use crate::tensor::{CheckpointError, TensorError};

#[derive(Debug, Error)]
pub enum ScreenError {
    #[error("contact series `{id}`: {reason}")]
    BadContactSeries { id: String, reason: String },
    #[error("invalid screening parameter: {0}")]
    Invalid(String),
    #[error("attribute `{0}` has a single class in the training data")]
    SingleClass(Attribute),
    #[error("classifier training diverged at iteration {iteration}")]
    Diverged { iteration: usize },
    #[error("checkpoint is not a sequence classifier (kind `{0}`)")]
    WrongKind(String),
    #[error("no model supplied for screening stage `{0}`")]
    MissingStageModel(Stage),
    #[error("cannot calibrate a threshold on an empty sample")]
    EmptySample,
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Amp,
    Toxic,
    Broad,
    Structured,
    Ppl,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Amp, Stage::Toxic, Stage::Broad, Stage::Structured, Stage::Ppl];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Amp => "amp",
            Stage::Toxic => "toxic",
            Stage::Broad => "broad",
            Stage::Structured => "structured",
            Stage::Ppl => "ppl",
        }
    }

    /// Classifier attribute behind a logit stage; `None` for the perplexity stage.
    pub fn attribute(self) -> Option<Attribute> {
        match self {
            Stage::Amp => Some(Attribute::Amp),
            Stage::Toxic => Some(Attribute::Toxic),
            Stage::Broad => Some(Attribute::BroadSpectrum),
            Stage::Structured => Some(Attribute::Structured),
            Stage::Ppl => None,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = ScreenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s.trim())
            .ok_or_else(|| ScreenError::Invalid(format!("unknown stage `{s}`")))
    }
}

/// Name under which the novelty gate is recorded in verdicts and reports.
pub const NOVELTY_STAGE: &str = "novel";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScreenConfig {
    pub amp_logit: f64,
    pub toxic_logit: f64,
    /// When true a toxicity logit strictly below `toxic_logit` passes (predicted non-toxic).
    pub toxic_pass_below: bool,
    pub broad_logit: f64,
    pub struct_logit: f64,
    pub ppl_max: f64,
    pub contact_var_max: f64,
    pub contact_mean_min: f64,
    pub binding_time_max_ns: f64,
    /// Fraction of contact-free frames tolerated after binding.
    pub gap_tolerance: f64,
    pub exclude_not_novel: bool,
    pub stages: Vec<Stage>,
}

impl Default for ScreenConfig {
    fn default() -> Self {
        Self {
            amp_logit: 7.944,
            toxic_logit: -1.573,
            toxic_pass_below: true,
            broad_logit: -7.323,
            struct_logit: -5.382,
            ppl_max: 16.04,
            contact_var_max: 2.0,
            contact_mean_min: 5.0,
            binding_time_max_ns: 500.0,
            gap_tolerance: 0.05,
            exclude_not_novel: true,
            stages: Stage::ALL.to_vec(),
        }
    }
}

impl ScreenConfig {
    pub fn validate(&self) -> Result<(), ScreenError> {
        let values = [
            self.amp_logit,
            self.toxic_logit,
            self.broad_logit,
            self.struct_logit,
            self.ppl_max,
            self.contact_var_max,
            self.contact_mean_min,
            self.binding_time_max_ns,
        ];
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ScreenError::Invalid("thresholds must be finite".into()));
        }
        if self.contact_var_max <= 0.0 {
            return Err(ScreenError::Invalid("contact_var_max must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.gap_tolerance) {
            return Err(ScreenError::Invalid("gap_tolerance must lie in [0, 1)".into()));
        }
        let mut seen = self.stages.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.stages.len() {
            return Err(ScreenError::Invalid("stages listed twice".into()));
        }
        Ok(())
    }

    pub fn threshold(&self, stage: Stage) -> f64 {
        match stage {
            Stage::Amp => self.amp_logit,
            Stage::Toxic => self.toxic_logit,
            Stage::Broad => self.broad_logit,
            Stage::Structured => self.struct_logit,
            Stage::Ppl => self.ppl_max,
        }
    }

    pub fn set_threshold(&mut self, stage: Stage, value: f64) {
        match stage {
            Stage::Amp => self.amp_logit = value,
            Stage::Toxic => self.toxic_logit = value,
            Stage::Broad => self.broad_logit = value,
            Stage::Structured => self.struct_logit = value,
            Stage::Ppl => self.ppl_max = value,
        }
    }

    /// Whether `score` passes `stage`.
    pub fn passes(&self, stage: Stage, score: f64) -> bool {
        let t = self.threshold(stage);
        match stage {
            Stage::Ppl => score <= t,
            Stage::Toxic if self.toxic_pass_below => score < t,
            _ => score >= t,
        }
    }
}

/// Linearly interpolated percentile (`pct` in [0, 100]) of `values`.
pub fn percentile(values: &[f64], pct: f64) -> Result<f64, ScreenError> {
    if values.is_empty() {
        return Err(ScreenError::EmptySample);
    }
    if !(0.0..=100.0).contains(&pct) {
        return Err(ScreenError::Invalid(format!("percentile {pct} outside [0, 100]")));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(ScreenError::Invalid("sample contains NaN".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = pct / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(v[lo] + (pos - lo as f64) * (v[hi] - v[lo]))
}

/// Percentile of classifier logits over a reference sample; the median is the usual choice.
pub fn calibrate_threshold(
    clf: &dyn SequenceLogit,
    sample: &[PeptideSequence],
    pct: f64,
) -> Result<f64, ScreenError> {
    if sample.is_empty() {
        return Err(ScreenError::EmptySample);
    }
    percentile(&clf.logits(sample), pct)
}

/// Percentile of per-sequence perplexities over a reference sample (25th for prior samples).
pub fn calibrate_ppl_threshold(
    lm: &dyn SequenceScorer,
    sample: &[PeptideSequence],
    pct: f64,
) -> Result<f64, ScreenError> {
    if sample.is_empty() {
        return Err(ScreenError::EmptySample);
    }
    percentile(&lm.perplexities(sample), pct)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StageCount {
    pub evaluated: usize,
    pub passed: usize,
}

/// Per-stage attrition in application order. Serializes as `{stage: {evaluated, passed}}`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AttritionReport {
    pub stages: Vec<(String, StageCount)>,
}

impl AttritionReport {
    pub fn get(&self, stage: &str) -> Option<StageCount> {
        self.stages.iter().find(|s| s.0 == stage).map(|s| s.1)
    }

    /// Candidates that passed the last stage (or the input size if no stage ran).
    pub fn survivors(&self) -> Option<usize> {
        self.stages.last().map(|s| s.1.passed)
    }

    pub fn write_json(&self, out: &mut impl Write) -> Result<(), ScreenError> {
        serde_json::to_writer_pretty(&mut *out, self).map_err(std::io::Error::from)?;
        writeln!(out)?;
        Ok(())
    }
}

impl Serialize for AttritionReport {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(self.stages.len()))?;
        for (k, v) in &self.stages {
            m.serialize_entry(k, v)?;
        }
        m.end()
    }
}

/// Logit models for the classifier stages.
#[derive(Default)]
pub struct StageModels<'a> {
    pub classifiers: BTreeMap<Attribute, &'a dyn SequenceLogit>,
    pub lm: Option<&'a dyn SequenceScorer>,
}

impl<'a> StageModels<'a> {
    pub fn with_classifier(mut self, clf: &'a dyn SequenceLogit) -> Self {
        self.classifiers.insert(clf.attribute(), clf);
        self
    }

    pub fn with_lm(mut self, lm: &'a dyn SequenceScorer) -> Self {
        self.lm = Some(lm);
        self
    }

    fn scores(&self, stage: Stage, seqs: &[PeptideSequence]) -> Result<Vec<f64>, ScreenError> {
        match stage.attribute() {
            Some(a) => Ok(self
                .classifiers
                .get(&a)
                .ok_or(ScreenError::MissingStageModel(stage))?
                .logits(seqs)),
            None => Ok(self.lm.ok_or(ScreenError::MissingStageModel(stage))?.perplexities(seqs)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreenResult {
    /// Every input candidate with all stage verdicts recorded.
    pub audited: Vec<Candidate>,
    /// Ids of candidates that passed every stage, in input order.
    pub survivors: Vec<String>,
    pub report: AttritionReport,
}

impl ScreenResult {
    pub fn surviving(&self) -> impl Iterator<Item = &Candidate> {
        self.audited.iter().filter(|c| self.survivors.contains(&c.id))
    }
}

/// Scores every candidate at every configured stage (full audit), then applies the stages
/// in order as conjunctive filters. Not-novel candidates are dropped first when
/// `exclude_not_novel` is set.
pub fn screen_pipeline(
    candidates: Vec<Candidate>,
    models: &StageModels<'_>,
    config: &ScreenConfig,
) -> Result<ScreenResult, ScreenError> {
    config.validate()?;
    let mut audited = candidates;
    let seqs: Vec<PeptideSequence> = audited.iter().map(|c| c.sequence.clone()).collect();
    let mut alive = vec![true; audited.len()];
    let mut report = AttritionReport::default();
    if config.exclude_not_novel {
        let mut count = StageCount { evaluated: audited.len(), passed: 0 };
        for (c, a) in audited.iter_mut().zip(&mut alive) {
            c.record(NOVELTY_STAGE, f64::from(u8::from(c.novel)), c.novel)?;
            *a = c.novel;
            count.passed += usize::from(c.novel);
        }
        report.stages.push((NOVELTY_STAGE.to_owned(), count));
    }
    for &stage in &config.stages {
        let scores = if seqs.is_empty() { Vec::new() } else { models.scores(stage, &seqs)? };
        let mut count = StageCount::default();
        for ((c, a), &s) in audited.iter_mut().zip(&mut alive).zip(&scores) {
            let pass = config.passes(stage, s);
            c.record(stage.name(), s, pass)?;
            if *a {
                count.evaluated += 1;
                count.passed += usize::from(pass);
                *a = pass;
            }
        }
        report.stages.push((stage.name().to_owned(), count));
    }
    let survivors = audited
        .iter()
        .zip(&alive)
        .filter(|(_, &a)| a)
        .map(|(c, _)| c.id.clone())
        .collect();
    Ok(ScreenResult {
        audited,
        survivors,
        report,
    })
}

/// One row per candidate: id, sequence, `<stage>_score`/`<stage>_pass` for each recorded
/// stage and the overall outcome.
pub fn write_verdict_csv(result: &ScreenResult, out: impl Write) -> Result<(), ScreenError> {
    let stages: Vec<&str> = result.report.stages.iter().map(|s| s.0.as_str()).collect();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["id".to_owned(), "sequence".to_owned()];
    for s in &stages {
        header.push(format!("{s}_score"));
        header.push(format!("{s}_pass"));
    }
    header.push("survived".to_owned());
    w.write_record(&header)?;
    for c in &result.audited {
        let mut row = vec![c.id.clone(), c.sequence.to_string()];
        for s in &stages {
            match c.verdicts.get(*s) {
                Some(v) => {
                    row.push(format!("{:.6}", v.score));
                    row.push(v.pass.to_string());
                }
                None => row.extend([String::new(), String::new()]),
            }
        }
        row.push(result.survivors.contains(&c.id).to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `screen_report.json` and `screen_verdicts.csv` into `dir`.
pub fn save_screen_result(result: &ScreenResult, dir: &Path) -> Result<(), ScreenError> {
    std::fs::create_dir_all(dir)?;
    let mut f = std::fs::File::create(dir.join("screen_report.json"))?;
    result.report.write_json(&mut f)?;
    write_verdict_csv(result, std::fs::File::create(dir.join("screen_verdicts.csv"))?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScreenRow {
    pub sequence_id: String,
    pub outcome: ContactOutcome,
    pub verdict: SimVerdict,
}

/// Contact statistics and the contact-rule verdict for every series.
pub fn simscreen(series: &[ContactSeries], config: &ScreenConfig) -> Result<Vec<SimScreenRow>, ScreenError> {
    config.validate()?;
    Ok(series
        .iter()
        .map(|s| {
            let outcome = contact_stats(s, config.gap_tolerance);
            SimScreenRow {
                sequence_id: s.sequence_id.clone(),
                verdict: simscreen_filter(&outcome, config),
                outcome,
            }
        })
        .collect())
}

/// `sequence_id,binding_time_ns,mean_contacts,var_contacts,pass,reasons` with reasons joined
/// by `;`. Statistics are empty for unbound series.
pub fn write_simscreen_csv(rows: &[SimScreenRow], out: impl Write) -> Result<(), ScreenError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sequence_id", "binding_time_ns", "mean_contacts", "var_contacts", "pass", "reasons"])?;
    for r in rows {
        let (b, m, v) = match r.outcome {
            ContactOutcome::Bound(s) => (
                format!("{}", s.binding_time_ns),
                format!("{:.4}", s.mean_contacts),
                format!("{:.4}", s.var_contacts),
            ),
            ContactOutcome::NotBound => Default::default(),
        };
        let reasons: Vec<String> = r.verdict.reasons.iter().map(|x| x.to_string()).collect();
        w.write_record([
            r.sequence_id.as_str(),
            &b,
            &m,
            &v,
            &r.verdict.pass.to_string(),
            &reasons.join(";"),
        ])?;
    }
    w.flush()?;
    Ok(())
}
