//! Recurrent sequence autoencoder (bi-GRU encoder, GRU decoder) trained as a β-VAE or a
//! WAE with an MMD penalty.

mod beam;
mod eval;
mod losses;
mod train;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, PeptideSequence, UpsampleRatio, Vocabulary, DEFAULT_MAX_SEQ_LENGTH, PAD, UNK};
use crate::langmodel::shifted_rows;
use crate::tensor::rnn::{gru_forward, Direction, GruCell, Linear, TimeMajor};
use crate::tensor::{Checkpoint, CheckpointError, Graph, ParameterSet, Tensor, TensorError, Var};

pub use beam::{decode_beam, decode_many, sequence_log_prob};
pub use eval::{corpus_bleu, evaluate, EvalReport};
pub use losses::{kl_closed_form, loss_vae, loss_wae, mmd_rff, objective_grad_check, LossBreakdown, RffFeatures};
pub use train::{train, TrainLogLine, TrainOptions, TrainOutcome};

pub const LOGVAR_MIN: f64 = -20.0;
pub const LOGVAR_MAX: f64 = 2.0;

#[derive(Debug, Error)]
pub enum AeError {
    #[error("invalid autoencoder config: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("non-finite loss at iteration {iteration}; last good checkpoint at iteration {last_good}")]
    Diverged { iteration: usize, last_good: usize },
    #[error("latent dimension {got} does not match model dimension {expected}")]
    LatentDim { expected: usize, got: usize },
    #[error("checkpoint is not an autoencoder (kind `{0}`)")]
    WrongKind(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    #[serde(alias = "beta_vae", alias = "betavae", alias = "vae")]
    BetaVae,
    #[serde(alias = "wae")]
    Wae,
}

impl std::str::FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "betavae" | "vae" => Ok(Objective::BetaVae),
            "wae" => Ok(Objective::Wae),
            other => Err(format!("unknown objective `{other}`")),
        }
    }
}

/// Linear ramp of the KL weight from `start` to `end` over `anneal_steps` iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaSchedule {
    pub start: f64,
    pub end: f64,
    pub anneal_steps: usize,
}

impl BetaSchedule {
    pub fn at(&self, iter: usize) -> f64 {
        if self.anneal_steps == 0 || iter >= self.anneal_steps {
            return self.end;
        }
        self.start + (self.end - self.start) * iter as f64 / self.anneal_steps as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeConfig {
    pub objective: Objective,
    pub beta_schedule: BetaSchedule,
    pub mmd_sigma: f64,
    pub mmd_feature_count: usize,
    pub logvar_reg_weight: f64,
    pub word_dropout: f64,
    pub embed_dim: usize,
    pub hidden_size: usize,
    pub decoder_hidden: usize,
    pub latent_dim: usize,
    pub lr: f64,
    pub clip_norm: Option<f64>,
    pub iterations: usize,
    pub batch_size: usize,
    pub beam_size: usize,
    pub max_seq_length: usize,
    pub upsample: Option<UpsampleRatio>,
    pub log_every: usize,
    pub seed: u64,
}

impl Default for AeConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Wae,
            beta_schedule: BetaSchedule {
                start: 0.0,
                end: 0.03,
                anneal_steps: 20_000,
            },
            mmd_sigma: 7.0,
            mmd_feature_count: 512,
            logvar_reg_weight: 1e-3,
            word_dropout: 0.3,
            embed_dim: 32,
            hidden_size: 80,
            decoder_hidden: 80,
            latent_dim: 100,
            lr: 1e-3,
            clip_norm: Some(5.0),
            iterations: 200_000,
            batch_size: 32,
            beam_size: 5,
            max_seq_length: DEFAULT_MAX_SEQ_LENGTH,
            upsample: Some(UpsampleRatio::DEFAULT),
            log_every: 1000,
            seed: 0,
        }
    }
}

impl AeConfig {
    /// Desk-scale setting: 16-dimensional latent space, 20k iterations, no upsampling.
    pub fn desk() -> Self {
        Self {
            latent_dim: 16,
            iterations: 20_000,
            beta_schedule: BetaSchedule {
                start: 0.0,
                end: 0.03,
                anneal_steps: 2_000,
            },
            upsample: None,
            log_every: 1000,
            ..Self::default()
        }
    }

    /// Sets the iteration count and rescales the anneal window to its first 10%.
    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.iterations = iterations;
        self.beta_schedule.anneal_steps = iterations / 10;
        self
    }

    pub fn validate(&self) -> Result<(), AeError> {
        let bad = |m: &str| Err(AeError::Config(m.to_owned()));
        if !(0.0..=1.0).contains(&self.word_dropout) {
            return bad("word_dropout must lie in [0, 1]");
        }
        for (name, v) in [
            ("embed_dim", self.embed_dim),
            ("hidden_size", self.hidden_size),
            ("decoder_hidden", self.decoder_hidden),
            ("latent_dim", self.latent_dim),
            ("batch_size", self.batch_size),
            ("beam_size", self.beam_size),
            ("max_seq_length", self.max_seq_length),
            ("mmd_feature_count", self.mmd_feature_count),
        ] {
            if v == 0 {
                return Err(AeError::Config(format!("{name} must be positive")));
            }
        }
        if !(self.mmd_sigma > 0.0 && self.mmd_sigma.is_finite()) {
            return bad("mmd_sigma must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.logvar_reg_weight < 0.0 || self.beta_schedule.start < 0.0 || self.beta_schedule.end < 0.0 {
            return bad("weights must be nonnegative");
        }
        Ok(())
    }
}

/// Diagonal Gaussian encoding `N(mu, exp(logvar))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPosterior {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
}

impl GaussianPosterior {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentPoint {
    pub z: Vec<f64>,
}

impl LatentPoint {
    pub fn new(z: Vec<f64>) -> Self {
        Self { z }
    }

    pub fn dim(&self) -> usize {
        self.z.len()
    }

    pub fn norm(&self) -> f64 {
        self.z.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// `z = mu + exp(logvar / 2) ⊙ eps` with `eps ~ N(0, I)`; logvar is clamped first.
pub fn sample_posterior(post: &GaussianPosterior, rng: &mut impl Rng) -> LatentPoint {
    LatentPoint::new(
        post.mu
            .iter()
            .zip(&post.logvar)
            .map(|(&m, &lv)| {
                let eps: f64 = rng.sample(StandardNormal);
                m + (lv.clamp(LOGVAR_MIN, LOGVAR_MAX) / 2.0).exp() * eps
            })
            .collect(),
    )
}

pub fn sample_prior(dim: usize, rng: &mut impl Rng) -> LatentPoint {
    LatentPoint::new((0..dim).map(|_| rng.sample(StandardNormal)).collect())
}

/// Model parameters plus the config that shaped them.
#[derive(Debug, Clone)]
pub struct Autoencoder {
    pub config: AeConfig,
    pub params: ParameterSet,
}

pub(crate) struct Layers {
    pub enc_f: GruCell,
    pub enc_b: GruCell,
    pub mu: Linear,
    pub lv: Linear,
    pub dec_init: Linear,
    pub dec: GruCell,
    pub out: Linear,
}

const EMB: &str = "ae.emb";

/// Decoder-side tensors for a teacher-forced batch.
pub(crate) struct DecoderInputs {
    pub tokens: TimeMajor,
    pub targets: Vec<Vec<Option<usize>>>,
}

impl DecoderInputs {
    /// Shifted inputs with each non-SOS input token replaced by UNK with probability
    /// `dropout`.
    pub fn new(seqs: &[&PeptideSequence], dropout: f64, rng: &mut impl Rng) -> Self {
        let (mut tokens, targets) = shifted_rows(seqs);
        if dropout > 0.0 {
            for t in 1..tokens.steps() {
                for b in 0..tokens.ids[t].len() {
                    if tokens.masks[t][b] == 1.0 && rng.random::<f64>() < dropout {
                        tokens.ids[t][b] = UNK as usize;
                    }
                }
            }
        }
        Self { tokens, targets }
    }

    /// Fraction of non-SOS real input positions holding UNK.
    #[cfg(test)]
    pub fn unk_fraction(&self) -> f64 {
        let (mut unk, mut total) = (0usize, 0usize);
        for t in 1..self.tokens.steps() {
            for (b, &id) in self.tokens.ids[t].iter().enumerate() {
                if self.tokens.masks[t][b] == 1.0 {
                    total += 1;
                    unk += usize::from(id == UNK as usize);
                }
            }
        }
        unk as f64 / total.max(1) as f64
    }
}

impl Autoencoder {
    pub(crate) fn layers(&self) -> Layers {
        let c = &self.config;
        Layers {
            enc_f: GruCell::new("ae.enc.f", c.embed_dim, c.hidden_size),
            enc_b: GruCell::new("ae.enc.b", c.embed_dim, c.hidden_size),
            mu: Linear::new("ae.enc.mu", 2 * c.hidden_size, c.latent_dim),
            lv: Linear::new("ae.enc.lv", 2 * c.hidden_size, c.latent_dim),
            dec_init: Linear::new("ae.dec.init", c.latent_dim, c.decoder_hidden),
            dec: GruCell::new("ae.dec.gru", c.embed_dim + c.latent_dim, c.decoder_hidden),
            out: Linear::new("ae.dec.out", c.decoder_hidden, Vocabulary::SIZE),
        }
    }

    pub fn init(config: AeConfig) -> Result<Self, AeError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut model = Self {
            config,
            params: ParameterSet::new(),
        };
        let l = model.layers();
        let ps = &mut model.params;
        ps.insert_uniform(EMB, Vocabulary::SIZE, model.config.embed_dim, 0.1, &mut rng)?;
        l.enc_f.init(ps, &mut rng)?;
        l.enc_b.init(ps, &mut rng)?;
        l.mu.init(ps, &mut rng)?;
        l.lv.init(ps, &mut rng)?;
        l.dec_init.init(ps, &mut rng)?;
        l.dec.init(ps, &mut rng)?;
        l.out.init(ps, &mut rng)?;
        Ok(model)
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    /// Encoder graph: returns `(mu, logvar)` as `batch × D` nodes, logvar clamped.
    pub(crate) fn encode_graph(
        &self,
        g: &mut Graph,
        ps: &ParameterSet,
        seqs: &[&PeptideSequence],
    ) -> Result<(Var, Var), TensorError> {
        let vocab = Vocabulary;
        let rows: Vec<Vec<u32>> = seqs.iter().map(|s| vocab.tokenize(s)).collect();
        let tm = TimeMajor::from_rows(&rows, PAD);
        let l = self.layers();
        let fwd = gru_forward(g, ps, EMB, &l.enc_f, None, &tm, Direction::Forward)?;
        let bwd = gru_forward(g, ps, EMB, &l.enc_b, None, &tm, Direction::Backward)?;
        let last = *fwd.last().ok_or_else(|| TensorError::Shape("empty batch".into()))?;
        let feat = g.concat_cols(&[last, bwd[0]]);
        let mu = l.mu.forward(g, ps, feat)?;
        let lv_raw = l.lv.forward(g, ps, feat)?;
        let lv = g.clamp(lv_raw, LOGVAR_MIN, LOGVAR_MAX);
        Ok((mu, lv))
    }

    /// Teacher-forced reconstruction loss (mean token cross-entropy over non-PAD targets)
    /// given latent codes `z` (`batch × D`).
    pub(crate) fn recon_graph(
        &self,
        g: &mut Graph,
        ps: &ParameterSet,
        z: Var,
        inputs: &DecoderInputs,
    ) -> Result<Var, TensorError> {
        let l = self.layers();
        let emb = g.param(ps, EMB)?;
        let init = l.dec_init.forward(g, ps, z)?;
        let h0 = g.tanh(init);
        let xs: Vec<Var> = inputs
            .tokens
            .ids
            .iter()
            .map(|ids| {
                let e = g.gather_rows(emb, ids);
                g.concat_cols(&[e, z])
            })
            .collect();
        let hs = l.dec.run(g, ps, &xs, &inputs.tokens.masks, h0, false)?;
        let total = inputs.targets.iter().flatten().filter(|t| t.is_some()).count();
        let mut terms = Vec::with_capacity(hs.len());
        for (h, tgt) in hs.iter().zip(&inputs.targets) {
            let n = tgt.iter().filter(|t| t.is_some()).count();
            if n == 0 {
                continue;
            }
            let logits = l.out.forward(g, ps, *h)?;
            let xent = g.softmax_xent(logits, tgt);
            terms.push(g.scale(xent, n as f64 / total as f64));
        }
        let stacked = g.concat_cols(&terms);
        Ok(g.sum(stacked))
    }

    pub fn encode(&self, seq: &PeptideSequence) -> Result<GaussianPosterior, AeError> {
        Ok(self.encode_batch(std::slice::from_ref(seq))?.remove(0))
    }

    /// Encodes in parallel chunks; results are independent of chunking.
    pub fn encode_batch(&self, seqs: &[PeptideSequence]) -> Result<Vec<GaussianPosterior>, AeError> {
        let chunks: Vec<Result<Vec<GaussianPosterior>, TensorError>> = seqs
            .par_chunks(64)
            .map(|chunk| {
                let refs: Vec<&PeptideSequence> = chunk.iter().collect();
                let mut g = Graph::new();
                let (mu, lv) = self.encode_graph(&mut g, &self.params, &refs)?;
                let (mu, lv) = (g.value(mu), g.value(lv));
                Ok((0..refs.len())
                    .map(|r| GaussianPosterior {
                        mu: mu.row_slice(r).to_vec(),
                        logvar: lv.row_slice(r).to_vec(),
                    })
                    .collect())
            })
            .collect();
        let mut out = Vec::with_capacity(seqs.len());
        for c in chunks {
            out.extend(c?);
        }
        Ok(out)
    }

    /// Mean per-token reconstruction NLL of `seqs` decoded from their posterior means.
    pub fn recon_nll(&self, seqs: &[PeptideSequence]) -> Result<f64, AeError> {
        let parts: Vec<Result<(f64, usize), TensorError>> = seqs
            .par_chunks(64)
            .map(|chunk| {
                let refs: Vec<&PeptideSequence> = chunk.iter().collect();
                let mut g = Graph::new();
                let (mu, _) = self.encode_graph(&mut g, &self.params, &refs)?;
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                let inputs = DecoderInputs::new(&refs, 0.0, &mut rng);
                let loss = self.recon_graph(&mut g, &self.params, mu, &inputs)?;
                let n: usize = refs.iter().map(|s| s.len() + 1).sum();
                Ok((g.value(loss).item() * n as f64, n))
            })
            .collect();
        let (mut total, mut count) = (0.0, 0usize);
        for p in parts {
            let (t, n) = p?;
            total += t;
            count += n;
        }
        Ok(total / count.max(1) as f64)
    }

    pub(crate) fn check_latent(&self, z: &LatentPoint) -> Result<(), AeError> {
        if z.dim() != self.config.latent_dim {
            return Err(AeError::LatentDim {
                expected: self.config.latent_dim,
                got: z.dim(),
            });
        }
        Ok(())
    }

    pub fn decode(&self, z: &LatentPoint) -> Result<PeptideSequence, AeError> {
        decode_beam(self, z, self.config.beam_size)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.set_meta("kind", "autoencoder");
        ck.set_meta("ae.config", serde_json::to_string(&self.config).expect("serializable"));
        ck.put_params("", &self.params);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, AeError> {
        let kind = ck.meta("kind")?;
        if kind != "autoencoder" {
            return Err(AeError::WrongKind(kind.to_owned()));
        }
        let config: AeConfig =
            serde_json::from_str(ck.meta("ae.config")?).map_err(|e| CheckpointError::BadMeta {
                key: "ae.config".into(),
                reason: e.to_string(),
            })?;
        let model = Self {
            config,
            params: ck.take_params("")?,
        };
        let expected = Self::init(model.config.clone())?;
        for (name, t) in expected.params.iter() {
            let got = model
                .params
                .get(name)
                .ok_or_else(|| CheckpointError::MissingTensor(name.clone()))?;
            if got.shape() != t.shape() {
                return Err(TensorError::Shape(format!("checkpoint tensor `{name}`")).into());
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), AeError> {
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, AeError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

pub(crate) fn rows_to_tensor(points: &[&[f64]]) -> Tensor {
    let cols = points.first().map_or(0, |p| p.len());
    let mut data = Vec::with_capacity(points.len() * cols);
    for p in points {
        data.extend_from_slice(p);
    }
    Tensor::matrix(points.len(), cols, data)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn tiny_config() -> AeConfig {
        AeConfig {
            embed_dim: 4,
            hidden_size: 5,
            decoder_hidden: 6,
            latent_dim: 3,
            mmd_feature_count: 16,
            ..AeConfig::default()
        }
    }

    fn seq(s: &str) -> PeptideSequence {
        PeptideSequence::new(s, DEFAULT_MAX_SEQ_LENGTH).unwrap()
    }

    #[test]
    fn default_dimension_and_determinism() {
        let model = Autoencoder::init(AeConfig::default()).unwrap();
        let a = model.encode(&seq("KKLLKKLLW")).unwrap();
        assert_eq!(a.dim(), 100);
        assert_eq!(a, model.encode(&seq("KKLLKKLLW")).unwrap());
    }

    #[test]
    fn batch_encoding_matches_single() {
        let model = Autoencoder::init(tiny_config()).unwrap();
        let seqs = vec![seq("ACD"), seq("KKLLKKLLWWAA"), seq("G")];
        let joint = model.encode_batch(&seqs).unwrap();
        for (s, j) in seqs.iter().zip(&joint) {
            let alone = model.encode(s).unwrap();
            for (a, b) in alone.mu.iter().zip(&j.mu) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn clamped_logvar_sample_is_mean() {
        let post = GaussianPosterior {
            mu: vec![0.5, -1.0],
            logvar: vec![-1e9, -40.0],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = sample_posterior(&post, &mut rng);
        for (a, b) in z.z.iter().zip(&post.mu) {
            assert!((a - b).abs() < 1e-3);
        }
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let wide = GaussianPosterior {
            mu: vec![0.0; 4],
            logvar: vec![0.0; 4],
        };
        assert_eq!(sample_posterior(&wide, &mut r1), sample_posterior(&wide, &mut r2));
    }

    #[test]
    fn posterior_sample_mean_within_standard_errors() {
        let post = GaussianPosterior {
            mu: vec![1.5, -0.3, 0.0],
            logvar: vec![0.4, -1.0, 1.5],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let mut sums = [0.0; 3];
        for _ in 0..n {
            for (s, v) in sums.iter_mut().zip(sample_posterior(&post, &mut rng).z) {
                *s += v;
            }
        }
        for k in 0..3 {
            let se = (post.logvar[k] / 2.0).exp() / (n as f64).sqrt();
            assert!((sums[k] / n as f64 - post.mu[k]).abs() < 4.0 * se);
        }
    }

    #[test]
    fn word_dropout_rate() {
        let seqs: Vec<PeptideSequence> = (0..400).map(|_| seq("ACDEFGHIKLMNPQRSTVWY")).collect();
        let refs: Vec<&PeptideSequence> = seqs.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let inputs = DecoderInputs::new(&refs, 0.3, &mut rng);
        assert!((inputs.unk_fraction() - 0.3).abs() < 0.01);
        assert!(inputs.tokens.ids[0].iter().all(|&t| t == crate::corpus::SOS as usize));
        let none = DecoderInputs::new(&refs, 0.0, &mut rng);
        assert_eq!(none.unk_fraction(), 0.0);
    }

    #[test]
    fn config_validation() {
        let c = AeConfig { word_dropout: 1.5, ..AeConfig::default() };
        assert!(matches!(Autoencoder::init(c), Err(AeError::Config(_))));
        let c = AeConfig { latent_dim: 0, ..AeConfig::default() };
        assert!(Autoencoder::init(c).is_err());
        assert_eq!(BetaSchedule { start: 0.0, end: 1.0, anneal_steps: 10 }.at(5), 0.5);
        assert_eq!(BetaSchedule { start: 0.0, end: 1.0, anneal_steps: 10 }.at(50), 1.0);
    }

    #[test]
    fn checkpoint_round_trip() {
        let model = Autoencoder::init(tiny_config()).unwrap();
        let back = Autoencoder::from_checkpoint(&model.to_checkpoint()).unwrap();
        assert_eq!(back.config, model.config);
        assert_eq!(back.params, model.params);
    }
}
