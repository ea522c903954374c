use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses::{kl_closed_form, mmd_rff};
use super::{decode_many, sample_posterior, sample_prior, AeError, Autoencoder, LatentPoint};
use crate::corpus::PeptideSequence;
use crate::langmodel::SequenceScorer;

fn ngrams(s: &[u8], n: usize) -> HashMap<&[u8], usize> {
    let mut m = HashMap::new();
    if s.len() >= n {
        for w in s.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus-level BLEU-4 over residues: geometric mean of clipped 1..4-gram precisions times
/// the brevity penalty `exp(1 - r/c)` when the candidate total `c` is shorter than `r`.
pub fn corpus_bleu(candidates: &[&str], references: &[&str]) -> f64 {
    assert_eq!(candidates.len(), references.len(), "one reference per candidate");
    let mut matched = [0usize; 4];
    let mut possible = [0usize; 4];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for (c, r) in candidates.iter().zip(references) {
        let (c, r) = (c.as_bytes(), r.as_bytes());
        c_len += c.len();
        r_len += r.len();
        for n in 1..=4 {
            let rc = ngrams(r, n);
            for (g, k) in ngrams(c, n) {
                matched[n - 1] += k.min(*rc.get(g).unwrap_or(&0));
                possible[n - 1] += k;
            }
        }
    }
    if c_len == 0 || matched.contains(&0) {
        return 0.0;
    }
    let log_p: f64 = (0..4).map(|i| (matched[i] as f64 / possible[i] as f64).ln()).sum::<f64>() / 4.0;
    let bp = if c_len < r_len { (1.0 - r_len as f64 / c_len as f64).exp() } else { 1.0 };
    bp * log_p.exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Per-token reconstruction NLL of held-out sequences decoded from their means.
    pub recon_nll: f64,
    pub bleu: f64,
    /// L2 norm over dimensions of the held-out mean encoder log-variance.
    pub encoder_logvar_norm: f64,
    /// Mean posterior KL to the prior divided by the latent dimension.
    pub kl_per_dim: f64,
    /// MMD between aggregated held-out posterior samples and prior samples.
    pub mmd_to_prior: f64,
    /// Mean LM perplexity of decodes of prior samples.
    pub ppl_prior: f64,
    /// Mean LM perplexity of held-out reconstructions.
    pub ppl_heldout_recon: f64,
    /// Fraction of held-out sequences reconstructed exactly.
    pub exact_match: f64,
}

/// Four-metric evaluation panel on `heldout` with `prior_samples` decodes from `N(0, I)`.
pub fn evaluate(
    model: &Autoencoder,
    heldout: &[PeptideSequence],
    lm: &dyn SequenceScorer,
    prior_samples: usize,
    seed: u64,
) -> Result<EvalReport, AeError> {
    let d = model.latent_dim();
    let posts = model.encode_batch(heldout)?;
    let recon_nll = model.recon_nll(heldout)?;
    let means: Vec<LatentPoint> = posts.iter().map(|p| LatentPoint::new(p.mu.clone())).collect();
    let recons = decode_many(model, &means, model.config.beam_size)?;
    let cand: Vec<&str> = recons.iter().map(|s| s.as_str()).collect();
    let refs: Vec<&str> = heldout.iter().map(|s| s.as_str()).collect();
    let bleu = if heldout.is_empty() { 0.0 } else { corpus_bleu(&cand, &refs) };
    let exact = cand.iter().zip(&refs).filter(|(a, b)| a == b).count() as f64 / heldout.len().max(1) as f64;

    let n = posts.len().max(1) as f64;
    let mut mean_lv = vec![0.0; d];
    for p in &posts {
        for (m, v) in mean_lv.iter_mut().zip(&p.logvar) {
            *m += v / n;
        }
    }
    let encoder_logvar_norm = mean_lv.iter().map(|v| v * v).sum::<f64>().sqrt();
    let kl_per_dim = posts.iter().map(kl_closed_form).sum::<f64>() / n / d as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q: Vec<LatentPoint> = posts.iter().map(|p| sample_posterior(p, &mut rng)).collect();
    let prior: Vec<LatentPoint> = (0..prior_samples.max(1)).map(|_| sample_prior(d, &mut rng)).collect();
    let mmd_to_prior = if q.is_empty() {
        0.0
    } else {
        mmd_rff(&q, &prior, model.config.mmd_sigma, model.config.mmd_feature_count, seed)
    };
    let prior_decodes = decode_many(model, &prior[..prior_samples.min(prior.len())], model.config.beam_size)?;
    let mean = |v: Vec<f64>| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
    Ok(EvalReport {
        recon_nll,
        bleu,
        encoder_logvar_norm,
        kl_per_dim,
        mmd_to_prior,
        ppl_prior: mean(lm.perplexities(&prior_decodes)),
        ppl_heldout_recon: mean(lm.perplexities(&recons)),
        exact_match: exact,
    })
}
