use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ScreenError;
use crate::corpus::{Attribute, LabeledCorpus, PeptideSequence, Split, Vocabulary, PAD};
use crate::tensor::rnn::{Linear, LstmCell, TimeMajor};
use crate::tensor::{grad_check, AdamConfig, Checkpoint, CheckpointError, Graph, ParameterSet, Tensor, TensorError, Var};

/// Anything producing a raw (pre-sigmoid) attribute logit for a sequence.
pub trait SequenceLogit: Sync {
    fn attribute(&self) -> Attribute;

    fn logit(&self, seq: &PeptideSequence) -> f64;

    fn logits(&self, seqs: &[PeptideSequence]) -> Vec<f64> {
        seqs.par_iter().map(|s| self.logit(s)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeqClfConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub lr: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SeqClfConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            hidden: 100,
            dropout: 0.3,
            lr: 3e-3,
            iterations: 1500,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Bidirectional LSTM over residue embeddings; the last forward and first backward states
/// feed a single-logit head.
#[derive(Debug, Clone)]
pub struct SeqClassifier {
    pub attribute: Attribute,
    pub config: SeqClfConfig,
    pub params: ParameterSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeqClfReport {
    pub attribute: Attribute,
    pub train_size: usize,
    pub test_size: usize,
    pub test_accuracy: f64,
    /// Accuracy of always predicting the more frequent test-split class.
    pub majority_baseline: f64,
    pub final_loss: f64,
}

impl SeqClassifier {
    fn fwd(&self) -> LstmCell {
        LstmCell::new("clf.fwd", self.config.embed_dim, self.config.hidden)
    }

    fn bwd(&self) -> LstmCell {
        LstmCell::new("clf.bwd", self.config.embed_dim, self.config.hidden)
    }

    fn head(&self) -> Linear {
        Linear::new("clf.out", 2 * self.config.hidden, 1)
    }

    pub fn init(attribute: Attribute, config: SeqClfConfig) -> Result<Self, ScreenError> {
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(ScreenError::Invalid("dropout must lie in [0, 1)".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut m = Self {
            attribute,
            config,
            params: ParameterSet::new(),
        };
        m.params
            .insert_uniform("clf.emb", Vocabulary::SIZE, m.config.embed_dim, 0.1, &mut rng)?;
        let (f, b, h) = (m.fwd(), m.bwd(), m.head());
        f.init(&mut m.params, &mut rng)?;
        b.init(&mut m.params, &mut rng)?;
        h.init(&mut m.params, &mut rng)?;
        Ok(m)
    }

    /// Logit column (`rows × 1`) for a batch; `dropout_rng` enables training-mode dropout.
    fn forward(
        &self,
        g: &mut Graph,
        ps: &ParameterSet,
        seqs: &[&PeptideSequence],
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var, TensorError> {
        let vocab = Vocabulary;
        let rows: Vec<Vec<u32>> = seqs.iter().map(|s| vocab.tokenize(s)).collect();
        let tm = TimeMajor::from_rows(&rows, PAD);
        let emb = g.param(ps, "clf.emb")?;
        let xs: Vec<Var> = tm.ids.iter().map(|ids| g.gather_rows(emb, ids)).collect();
        let hf = self.fwd().run(g, ps, &xs, &tm.masks, false)?;
        let hb = self.bwd().run(g, ps, &xs, &tm.masks, true)?;
        let mut feat = g.concat_cols(&[hf[hf.len() - 1], hb[0]]);
        if let Some(rng) = dropout_rng {
            let p = self.config.dropout;
            if p > 0.0 {
                let width = 2 * self.config.hidden;
                let mask: Vec<f64> = (0..seqs.len() * width)
                    .map(|_| if rng.random::<f64>() < p { 0.0 } else { 1.0 / (1.0 - p) })
                    .collect();
                let m = g.constant(Tensor::matrix(seqs.len(), width, mask));
                feat = g.mul(feat, m);
            }
        }
        self.head().forward(g, ps, feat)
    }

    /// Mean binary cross-entropy of a labeled batch.
    fn batch_loss(
        &self,
        g: &mut Graph,
        ps: &ParameterSet,
        batch: &[(&PeptideSequence, bool)],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var, TensorError> {
        let seqs: Vec<&PeptideSequence> = batch.iter().map(|b| b.0).collect();
        let s = self.forward(g, ps, &seqs, rng)?;
        let zero = g.constant(Tensor::zeros(&[batch.len(), 1]));
        let two = g.concat_cols(&[zero, s]);
        let targets: Vec<Option<usize>> = batch.iter().map(|b| Some(usize::from(b.1))).collect();
        Ok(g.softmax_xent(two, &targets))
    }

    /// Largest relative gradient error of the (dropout-free) training loss on `batch`.
    pub fn grad_check_loss(
        &self,
        batch: &[(&PeptideSequence, bool)],
        probes: usize,
        seed: u64,
    ) -> Result<f64, ScreenError> {
        Ok(grad_check(|g, ps| self.batch_loss(g, ps, batch, None), &self.params, probes, seed)?)
    }

    pub fn batch_logits(&self, seqs: &[&PeptideSequence]) -> Vec<f64> {
        if seqs.is_empty() {
            return Vec::new();
        }
        let mut g = Graph::new();
        let out = self.forward(&mut g, &self.params, seqs, None).expect("classifier shapes");
        g.value(out).data().to_vec()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.set_meta("kind", "seq_classifier");
        ck.set_meta("clf.attribute", self.attribute.name());
        ck.set_meta("clf.config", serde_json::to_string(&self.config).expect("serializable"));
        ck.put_params("", &self.params);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, ScreenError> {
        let kind = ck.meta("kind")?;
        if kind != "seq_classifier" {
            return Err(ScreenError::WrongKind(kind.to_owned()));
        }
        let config: SeqClfConfig = serde_json::from_str(ck.meta("clf.config")?).map_err(|e| {
            CheckpointError::BadMeta {
                key: "clf.config".into(),
                reason: e.to_string(),
            }
        })?;
        Ok(Self {
            attribute: ck.meta_parse("clf.attribute")?,
            config,
            params: ck.take_params("")?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ScreenError> {
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, ScreenError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

const SCORE_CHUNK: usize = 64;

impl SequenceLogit for SeqClassifier {
    fn attribute(&self) -> Attribute {
        self.attribute
    }

    fn logit(&self, seq: &PeptideSequence) -> f64 {
        self.batch_logits(&[seq])[0]
    }

    fn logits(&self, seqs: &[PeptideSequence]) -> Vec<f64> {
        seqs.par_chunks(SCORE_CHUNK)
            .flat_map_iter(|c| self.batch_logits(&c.iter().collect::<Vec<_>>()))
            .collect()
    }
}

/// Raw logit of `seq` under `clf`.
pub fn seq_logit(clf: &dyn SequenceLogit, seq: &PeptideSequence) -> f64 {
    clf.logit(seq)
}

/// Trains on the labeled train split with shuffled epochs and Adam, then evaluates on the
/// labeled test split at logit 0.
pub fn train_seq_classifier(
    corpus: &LabeledCorpus,
    attribute: Attribute,
    config: &SeqClfConfig,
) -> Result<(SeqClassifier, SeqClfReport), ScreenError> {
    let train = corpus.labeled_for(attribute, Split::Train);
    let test = corpus.labeled_for(attribute, Split::Test);
    let positives = train.iter().filter(|e| e.1).count();
    if positives == 0 || positives == train.len() {
        return Err(ScreenError::SingleClass(attribute));
    }
    let mut model = SeqClassifier::init(attribute, config.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5e9);
    let adam = AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    };
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut cursor = order.len();
    let mut recent = 0.0;
    for iter in 1..=config.iterations {
        let mut batch = Vec::with_capacity(config.batch_size);
        while batch.len() < config.batch_size.min(train.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(train[order[cursor]]);
            cursor += 1;
        }
        let mut g = Graph::new();
        let loss = model.batch_loss(&mut g, &model.params, &batch, Some(&mut rng))?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(ScreenError::Diverged { iteration: iter });
        }
        let grads = g.backward(loss);
        model.params.adam_update(&grads, &adam)?;
        recent = if iter == 1 { value } else { 0.98 * recent + 0.02 * value };
        if iter % 250 == 0 {
            info!("seq-clf {attribute} iter {iter}: loss {recent:.4}");
        }
    }
    let seqs: Vec<PeptideSequence> = test.iter().map(|e| e.0.clone()).collect();
    let logits = model.logits(&seqs);
    let correct = logits.iter().zip(&test).filter(|(l, e)| (**l >= 0.0) == e.1).count();
    let pos = test.iter().filter(|e| e.1).count();
    let n = test.len().max(1) as f64;
    let report = SeqClfReport {
        attribute,
        train_size: train.len(),
        test_size: test.len(),
        test_accuracy: correct as f64 / n,
        majority_baseline: pos.max(test.len() - pos) as f64 / n,
        final_loss: recent,
    };
    Ok((model, report))
}
