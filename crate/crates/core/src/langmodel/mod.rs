//! Character-level LSTM language model used to score generated sequences by perplexity.

use std::path::Path;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{training_batches, CorpusError, LabeledCorpus, PeptideSequence, Split, Vocabulary, EOS, PAD, SOS};
use crate::tensor::rnn::{Linear, LstmCell, TimeMajor};
use crate::tensor::{AdamConfig, Checkpoint, CheckpointError, Graph, ParameterSet, TensorError, Var};

#[derive(Debug, Error)]
pub enum LmError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("training diverged at iteration {iteration}")]
    Diverged { iteration: usize },
    #[error("checkpoint is not a language model (kind `{0}`)")]
    WrongKind(String),
}

/// Anything that assigns next-token probabilities to a sequence followed by EOS.
pub trait SequenceScorer: Sync {
    /// Total negative log-likelihood of the residues and the closing EOS, and the number of
    /// predicted tokens (`len + 1`).
    fn nll(&self, seq: &PeptideSequence) -> (f64, usize);

    /// `exp(mean NLL)` over all predicted tokens including EOS.
    fn perplexity(&self, seq: &PeptideSequence) -> f64 {
        let (nll, n) = self.nll(seq);
        (nll / n as f64).exp()
    }

    /// Scores every sequence independently.
    fn perplexities(&self, seqs: &[PeptideSequence]) -> Vec<f64> {
        seqs.par_iter().map(|s| self.perplexity(s)).collect()
    }
}

/// Perplexity of a set of sequences taken as one text: `exp(total NLL / total tokens)`.
pub fn corpus_perplexity(lm: &dyn SequenceScorer, seqs: &[PeptideSequence]) -> f64 {
    let (nll, n) = seqs
        .par_iter()
        .map(|s| lm.nll(s))
        .reduce(|| (0.0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    (nll / n.max(1) as f64).exp()
}

/// Assigns probability `1/20` to every prediction.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformScorer;

impl SequenceScorer for UniformScorer {
    fn nll(&self, seq: &PeptideSequence) -> (f64, usize) {
        let n = seq.len() + 1;
        (n as f64 * 20f64.ln(), n)
    }
}

/// Puts all mass on the true next token of a fixed set of sequences.
#[derive(Debug, Clone, Default)]
pub struct OracleScorer {
    pub known: std::collections::BTreeSet<String>,
}

impl SequenceScorer for OracleScorer {
    fn nll(&self, seq: &PeptideSequence) -> (f64, usize) {
        let n = seq.len() + 1;
        let nll = if self.known.contains(seq.as_str()) { 0.0 } else { f64::INFINITY };
        (nll, n)
    }
}

/// Teacher-forcing rows: inputs `[SOS, r1..rn]` and targets `[r1..rn, EOS]`.
pub(crate) fn shifted_rows(seqs: &[&PeptideSequence]) -> (TimeMajor, Vec<Vec<Option<usize>>>) {
    let vocab = Vocabulary;
    let inputs: Vec<Vec<u32>> = seqs
        .iter()
        .map(|s| std::iter::once(SOS).chain(vocab.tokenize(s)).collect())
        .collect();
    let tm = TimeMajor::from_rows(&inputs, PAD);
    let mut targets = vec![vec![None; seqs.len()]; tm.steps()];
    for (b, s) in seqs.iter().enumerate() {
        let toks = vocab.tokenize(s);
        for (t, &tok) in toks.iter().chain(std::iter::once(&EOS)).enumerate() {
            targets[t][b] = Some(tok as usize);
        }
    }
    (tm, targets)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub lr: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub log_every: usize,
    pub seed: u64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            hidden: 256,
            lr: 1e-3,
            iterations: 3000,
            batch_size: 32,
            log_every: 500,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LanguageModel {
    pub config: LmConfig,
    pub params: ParameterSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmLogLine {
    pub iter: usize,
    pub train_nll: f64,
    pub test_ppl: f64,
}

impl LanguageModel {
    fn cell(&self) -> LstmCell {
        LstmCell::new("lm.lstm", self.config.embed_dim, self.config.hidden)
    }

    fn head(&self) -> Linear {
        Linear::new("lm.out", self.config.hidden, Vocabulary::SIZE)
    }

    pub fn init(config: LmConfig) -> Result<Self, TensorError> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut lm = Self {
            config,
            params: ParameterSet::new(),
        };
        lm.params
            .insert_uniform("lm.emb", Vocabulary::SIZE, lm.config.embed_dim, 0.1, &mut rng)?;
        let (cell, head) = (lm.cell(), lm.head());
        cell.init(&mut lm.params, &mut rng)?;
        head.init(&mut lm.params, &mut rng)?;
        Ok(lm)
    }

    /// Builds the mean next-token cross-entropy of a batch on `g`.
    pub fn batch_loss(
        &self,
        g: &mut Graph,
        ps: &ParameterSet,
        seqs: &[&PeptideSequence],
    ) -> Result<Var, TensorError> {
        let (tm, targets) = shifted_rows(seqs);
        let emb = g.param(ps, "lm.emb")?;
        let xs: Vec<Var> = tm.ids.iter().map(|ids| g.gather_rows(emb, ids)).collect();
        let hs = self.cell().run(g, ps, &xs, &tm.masks, false)?;
        let total: usize = targets.iter().flatten().filter(|t| t.is_some()).count();
        let head = self.head();
        let mut terms = Vec::with_capacity(hs.len());
        for (h, tgt) in hs.iter().zip(&targets) {
            let n = tgt.iter().filter(|t| t.is_some()).count();
            if n == 0 {
                continue;
            }
            let logits = head.forward(g, ps, *h)?;
            let xent = g.softmax_xent(logits, tgt);
            terms.push(g.scale(xent, n as f64 / total as f64));
        }
        let stacked = g.concat_cols(&terms);
        Ok(g.sum(stacked))
    }

    /// Per-sequence NLL sums for a batch, computed jointly.
    pub fn batch_nll(&self, seqs: &[&PeptideSequence]) -> Vec<(f64, usize)> {
        if seqs.is_empty() {
            return Vec::new();
        }
        let (tm, targets) = shifted_rows(seqs);
        let mut g = Graph::new();
        let ps = &self.params;
        let emb = g.param(ps, "lm.emb").expect("lm.emb");
        let xs: Vec<Var> = tm.ids.iter().map(|ids| g.gather_rows(emb, ids)).collect();
        let hs = self.cell().run(&mut g, ps, &xs, &tm.masks, false).expect("lm shapes");
        let head = self.head();
        let mut out: Vec<(f64, usize)> = seqs.iter().map(|s| (0.0, s.len() + 1)).collect();
        for (h, tgt) in hs.iter().zip(&targets) {
            let logits = head.forward(&mut g, ps, *h).expect("lm shapes");
            let lt = g.value(logits);
            for (b, t) in tgt.iter().enumerate() {
                if let Some(k) = *t {
                    out[b].0 += neg_log_softmax(lt.row_slice(b), k);
                }
            }
        }
        out
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.set_meta("kind", "lm");
        ck.set_meta("lm.config", serde_json::to_string(&self.config).expect("serializable"));
        ck.put_params("", &self.params);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, LmError> {
        let kind = ck.meta("kind")?;
        if kind != "lm" {
            return Err(LmError::WrongKind(kind.to_owned()));
        }
        let config: LmConfig = serde_json::from_str(ck.meta("lm.config")?).map_err(|e| {
            CheckpointError::BadMeta {
                key: "lm.config".into(),
                reason: e.to_string(),
            }
        })?;
        Ok(Self {
            config,
            params: ck.take_params("")?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), LmError> {
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, LmError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

pub(crate) fn neg_log_softmax(row: &[f64], k: usize) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
    max + z.ln() - row[k]
}

impl SequenceScorer for LanguageModel {
    fn nll(&self, seq: &PeptideSequence) -> (f64, usize) {
        self.batch_nll(&[seq])[0]
    }
}

/// Trains on the train split with Adam; logs test-split perplexity every `log_every`
/// iterations.
pub fn train_lm(
    corpus: &LabeledCorpus,
    config: &LmConfig,
) -> Result<(LanguageModel, Vec<LmLogLine>), LmError> {
    let mut lm = LanguageModel::init(config.clone())?;
    let mut batches = training_batches(corpus, config.batch_size, None, config.seed ^ 0x1a)?;
    let test = corpus.sequences(Split::Test);
    let adam = AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    };
    let mut log = Vec::new();
    let mut running = 0.0;
    let mut seen = 0usize;
    for iter in 1..=config.iterations {
        let batch = batches.next_batch();
        let seqs: Vec<&PeptideSequence> =
            batch.entries.iter().map(|&i| &corpus.entries[i].sequence).collect();
        let mut g = Graph::new();
        let loss = lm.batch_loss(&mut g, &lm.params, &seqs)?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(LmError::Diverged { iteration: iter });
        }
        let grads = g.backward(loss);
        lm.params
            .adam_update(&grads, &adam)
            .map_err(|_| LmError::Diverged { iteration: iter })?;
        running += value;
        seen += 1;
        if config.log_every > 0 && (iter % config.log_every == 0 || iter == config.iterations) {
            let test_ppl = if test.is_empty() { f64::NAN } else { corpus_perplexity(&lm, &test) };
            let line = LmLogLine {
                iter,
                train_nll: running / seen as f64,
                test_ppl,
            };
            info!("lm iter {iter}: train nll {:.4}, test ppl {:.3}", line.train_nll, test_ppl);
            log.push(line);
            running = 0.0;
            seen = 0;
        }
    }
    Ok((lm, log))
}

/// Scores each sequence and returns `(sequence, perplexity)` rows.
pub fn score_sequences(lm: &dyn SequenceScorer, seqs: &[PeptideSequence]) -> Vec<(String, f64)> {
    seqs.iter()
        .zip(lm.perplexities(seqs))
        .map(|(s, p)| (s.as_str().to_owned(), p))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::DEFAULT_MAX_SEQ_LENGTH;
    use crate::tensor::grad_check;

    fn seq(s: &str) -> PeptideSequence {
        PeptideSequence::new(s, DEFAULT_MAX_SEQ_LENGTH).unwrap()
    }

    #[test]
    fn uniform_and_oracle_stubs() {
        let s = seq("KKLLKKLL");
        assert!((UniformScorer.perplexity(&s) - 20.0).abs() < 1e-12);
        let oracle = OracleScorer {
            known: ["KKLLKKLL".to_owned()].into_iter().collect(),
        };
        assert_eq!(oracle.perplexity(&s), 1.0);
    }

    fn tiny() -> LanguageModel {
        LanguageModel::init(LmConfig {
            embed_dim: 4,
            hidden: 5,
            ..LmConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn batch_scoring_matches_individual() {
        let lm = tiny();
        let a = seq("ACDKKW");
        let b = seq("GGLLKRRAVV");
        let c = seq("W");
        let joint = lm.batch_nll(&[&a, &b, &c]);
        for (s, j) in [&a, &b, &c].iter().zip(&joint) {
            let alone = lm.nll(s);
            assert_eq!(alone.1, j.1);
            assert!((alone.0 - j.0).abs() < 1e-10);
        }
        assert!(lm.perplexity(&a) >= 1.0);
    }

    #[test]
    fn corpus_perplexity_is_length_weighted() {
        let lm = tiny();
        let seqs = vec![seq("ACDKKW"), seq("GGLLKRRAVV")];
        let parts = lm.batch_nll(&[&seqs[0], &seqs[1]]);
        let expected = ((parts[0].0 + parts[1].0) / (parts[0].1 + parts[1].1) as f64).exp();
        assert!((corpus_perplexity(&lm, &seqs) - expected).abs() < 1e-10);
    }

    #[test]
    fn loss_matches_scoring_and_passes_grad_check() {
        let lm = tiny();
        let a = seq("ACDKKW");
        let b = seq("GGLL");
        let mut g = Graph::new();
        let loss = lm.batch_loss(&mut g, &lm.params, &[&a, &b]).unwrap();
        let parts = lm.batch_nll(&[&a, &b]);
        let mean = (parts[0].0 + parts[1].0) / (parts[0].1 + parts[1].1) as f64;
        assert!((g.value(loss).item() - mean).abs() < 1e-10);
        let err = grad_check(|g, ps| lm.batch_loss(g, ps, &[&a, &b]), &lm.params, 150, 2).unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let lm = tiny();
        let back = LanguageModel::from_checkpoint(&lm.to_checkpoint()).unwrap();
        assert_eq!(back.config, lm.config);
        let s = seq("KLLK");
        assert_eq!(back.nll(&s), lm.nll(&s));
    }
}
