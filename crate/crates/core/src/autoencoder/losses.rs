use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{rows_to_tensor, AeError, Autoencoder, DecoderInputs, GaussianPosterior, LatentPoint, Objective};
use crate::corpus::PeptideSequence;
use crate::tensor::{grad_check, Graph, ParameterSet, Tensor, TensorError, Var};

/// `½ Σ (μ² + σ² − 1 − log σ²)`, the KL divergence to `N(0, I)`.
pub fn kl_closed_form(post: &GaussianPosterior) -> f64 {
    0.5 * post
        .mu
        .iter()
        .zip(&post.logvar)
        .map(|(m, lv)| m * m + lv.exp() - 1.0 - lv)
        .sum::<f64>()
}

/// Random Fourier features of the RBF kernel `exp(-|x - y|² / 2σ²)`:
/// `φ(z) = sqrt(2/F) cos(z W + b)` with `W ~ N(0, 1/σ²)` and `b ~ U(0, 2π)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RffFeatures {
    pub w: Tensor,
    pub b: Tensor,
    pub scale: f64,
}

impl RffFeatures {
    pub fn new(dim: usize, sigma: f64, count: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / sigma).expect("positive sigma");
        let w = (0..dim * count).map(|_| normal.sample(&mut rng)).collect();
        let b = (0..count).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        Self {
            w: Tensor::matrix(dim, count, w),
            b: Tensor::row(b),
            scale: (2.0 / count as f64).sqrt(),
        }
    }

    pub fn count(&self) -> usize {
        self.b.cols()
    }

    /// Mean feature vector of a set of points.
    pub fn mean_embedding(&self, points: &[&[f64]]) -> Vec<f64> {
        let (dim, count) = (self.w.rows(), self.count());
        let mut mean = vec![0.0; count];
        for p in points {
            assert_eq!(p.len(), dim, "feature dimension");
            for (f, m) in mean.iter_mut().enumerate() {
                let mut s = self.b.data()[f];
                for (d, &x) in p.iter().enumerate() {
                    s += x * self.w.data()[d * count + f];
                }
                *m += self.scale * s.cos();
            }
        }
        for m in &mut mean {
            *m /= points.len() as f64;
        }
        mean
    }

    /// Graph node holding the `1 × F` mean embedding of the rows of `z`.
    pub(crate) fn graph_mean(&self, g: &mut Graph, z: Var) -> Var {
        let w = g.constant(self.w.clone());
        let b = g.constant(self.b.clone());
        let zw = g.matmul(z, w);
        let pre = g.add_row(zw, b);
        let c = g.cos(pre);
        let phi = g.scale(c, self.scale);
        g.mean_rows(phi)
    }
}

/// `‖mean φ(z_q) − mean φ(z_p)‖²` under seeded random Fourier features.
pub fn mmd_rff(
    z_q: &[LatentPoint],
    z_p: &[LatentPoint],
    sigma: f64,
    feature_count: usize,
    seed: u64,
) -> f64 {
    assert!(!z_q.is_empty() && !z_p.is_empty(), "mmd_rff needs nonempty sets");
    let rff = RffFeatures::new(z_q[0].dim(), sigma, feature_count, seed);
    let q: Vec<&[f64]> = z_q.iter().map(|p| p.z.as_slice()).collect();
    let p: Vec<&[f64]> = z_p.iter().map(|p| p.z.as_slice()).collect();
    let (mq, mp) = (rff.mean_embedding(&q), rff.mean_embedding(&p));
    mq.iter().zip(&mp).map(|(a, b)| (a - b) * (a - b)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub recon: f64,
    /// KL (β-VAE) or MMD (WAE).
    pub constraint: f64,
    pub logvar_penalty: f64,
}

pub(crate) struct ObjectiveNodes {
    pub total: Var,
    pub recon: Var,
    pub constraint: Var,
    pub penalty: Option<Var>,
}

impl ObjectiveNodes {
    pub fn breakdown(&self, g: &Graph) -> LossBreakdown {
        LossBreakdown {
            total: g.value(self.total).item(),
            recon: g.value(self.recon).item(),
            constraint: g.value(self.constraint).item(),
            logvar_penalty: self.penalty.map_or(0.0, |p| g.value(p).item()),
        }
    }
}

/// Per-batch randomness, drawn outside the graph so that gradient checks can hold it fixed.
pub(crate) struct BatchNoise {
    pub inputs: DecoderInputs,
    /// `batch × D` standard normal draws for the reparameterization.
    pub eps: Tensor,
    /// `batch × D` prior samples for the MMD term.
    pub prior: Tensor,
}

impl BatchNoise {
    pub fn draw(model: &Autoencoder, seqs: &[&PeptideSequence], rng: &mut impl Rng) -> Self {
        let d = model.latent_dim();
        let n = seqs.len();
        let inputs = DecoderInputs::new(seqs, model.config.word_dropout, rng);
        let eps = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
        let prior = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
        Self {
            inputs,
            eps: Tensor::matrix(n, d, eps),
            prior: Tensor::matrix(n, d, prior),
        }
    }
}

/// Builds the training objective for `objective` with KL weight `beta` (β-VAE only).
pub(crate) fn objective_graph(
    model: &Autoencoder,
    g: &mut Graph,
    ps: &ParameterSet,
    seqs: &[&PeptideSequence],
    noise: &BatchNoise,
    objective: Objective,
    beta: f64,
    rff: &RffFeatures,
) -> Result<ObjectiveNodes, TensorError> {
    let (mu, lv) = model.encode_graph(g, ps, seqs)?;
    let half = g.scale(lv, 0.5);
    let std = g.exp(half);
    let eps = g.constant(noise.eps.clone());
    let noise_term = g.mul(std, eps);
    let z = g.add(mu, noise_term);
    let recon = model.recon_graph(g, ps, z, &noise.inputs)?;
    let batch = seqs.len() as f64;
    let dim = model.latent_dim() as f64;
    match objective {
        Objective::BetaVae => {
            let mu2 = g.square(mu);
            let var = g.exp(lv);
            let a = g.add(mu2, var);
            let b = g.sub(a, lv);
            let s = g.sum(b);
            let kl = g.affine(s, 0.5 / batch, -0.5 * dim);
            let weighted = g.scale(kl, beta);
            let total = g.add(recon, weighted);
            Ok(ObjectiveNodes {
                total,
                recon,
                constraint: kl,
                penalty: None,
            })
        }
        Objective::Wae => {
            let mq = rff.graph_mean(g, z);
            let prior_rows: Vec<&[f64]> =
                (0..noise.prior.rows()).map(|r| noise.prior.row_slice(r)).collect();
            let mp = g.constant(Tensor::row(rff.mean_embedding(&prior_rows)));
            let diff = g.sub(mq, mp);
            let sq = g.square(diff);
            let mmd = g.sum(sq);
            let lv2 = g.square(lv);
            let mean_lv2 = g.mean(lv2);
            let penalty = g.scale(mean_lv2, model.config.logvar_reg_weight);
            let partial = g.add(recon, mmd);
            let total = g.add(partial, penalty);
            Ok(ObjectiveNodes {
                total,
                recon,
                constraint: mmd,
                penalty: Some(penalty),
            })
        }
    }
}

/// Largest relative error between tape and central-difference gradients of the training
/// objective on `batch`, with the batch noise held fixed.
pub fn objective_grad_check(
    model: &Autoencoder,
    batch: &[PeptideSequence],
    objective: Objective,
    beta: f64,
    probes: usize,
    seed: u64,
) -> Result<f64, AeError> {
    let refs: Vec<&PeptideSequence> = batch.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = BatchNoise::draw(model, &refs, &mut rng);
    let rff = model_rff(model);
    Ok(grad_check(
        |g, ps| Ok(objective_graph(model, g, ps, &refs, &noise, objective, beta, &rff)?.total),
        &model.params,
        probes,
        seed,
    )?)
}

pub(crate) fn model_rff(model: &Autoencoder) -> RffFeatures {
    let c = &model.config;
    RffFeatures::new(c.latent_dim, c.mmd_sigma, c.mmd_feature_count, c.seed ^ 0x6d6d64)
}

fn finite(b: LossBreakdown) -> Result<LossBreakdown, AeError> {
    if [b.total, b.recon, b.constraint, b.logvar_penalty].iter().all(|v| v.is_finite()) {
        Ok(b)
    } else {
        Err(TensorError::NonFiniteLoss.into())
    }
}

/// β-VAE objective on a batch: `recon + beta · KL`, with KL summed over latent dimensions
/// and averaged over sequences.
pub fn loss_vae(
    model: &Autoencoder,
    batch: &[PeptideSequence],
    beta: f64,
    rng: &mut impl Rng,
) -> Result<LossBreakdown, AeError> {
    let seqs: Vec<&PeptideSequence> = batch.iter().collect();
    let noise = BatchNoise::draw(model, &seqs, rng);
    let mut g = Graph::new();
    let rff = RffFeatures::new(model.latent_dim(), 1.0, 1, 0);
    let nodes = objective_graph(model, &mut g, &model.params, &seqs, &noise, Objective::BetaVae, beta, &rff)?;
    finite(nodes.breakdown(&g))
}

/// WAE objective: `recon + MMD(z_q, prior) + w · mean(logvar²)`. `prior_samples` must have
/// one point per batch row.
pub fn loss_wae(
    model: &Autoencoder,
    batch: &[PeptideSequence],
    prior_samples: &[LatentPoint],
    rng: &mut impl Rng,
) -> Result<LossBreakdown, AeError> {
    if prior_samples.len() != batch.len() {
        return Err(AeError::Config(format!(
            "{} prior samples for a batch of {}",
            prior_samples.len(),
            batch.len()
        )));
    }
    for p in prior_samples {
        model.check_latent(p)?;
    }
    let seqs: Vec<&PeptideSequence> = batch.iter().collect();
    let mut noise = BatchNoise::draw(model, &seqs, rng);
    let rows: Vec<&[f64]> = prior_samples.iter().map(|p| p.z.as_slice()).collect();
    noise.prior = rows_to_tensor(&rows);
    let mut g = Graph::new();
    let rff = model_rff(model);
    let nodes = objective_graph(model, &mut g, &model.params, &seqs, &noise, Objective::Wae, 0.0, &rff)?;
    finite(nodes.breakdown(&g))
}
