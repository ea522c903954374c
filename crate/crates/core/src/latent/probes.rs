use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_dim, LatentClassifier, LatentError};
use crate::analysis::{descriptors, global_align, DescriptorVector};
use crate::autoencoder::{decode_many, Autoencoder, LatentPoint};
use crate::corpus::{Attribute, LabeledCorpus, PeptideSequence, Split};
use crate::stats::pearson;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub pair_id: usize,
    pub a: String,
    pub b: String,
    /// Percent identity of the global alignment.
    pub similarity: f64,
    /// Euclidean distance between the encoder means.
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityProbe {
    pub r: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub pairs: Vec<PairRecord>,
}

const BOOTSTRAP_RESAMPLES: usize = 1000;

/// Correlation between alignment identity and latent distance over sampled pairs of
/// training sequences. Each anchor is paired with its latent neighbour of rank
/// `floor(N^u) - 1`, `u ~ U(0, 1)`: rank 0 is the anchor itself, small ranks dominate and
/// the tail reaches across the whole space. The 95% interval is a percentile bootstrap.
pub fn probe_similarity_correlation(
    model: &Autoencoder,
    corpus: &LabeledCorpus,
    pair_count: usize,
    seed: u64,
) -> Result<SimilarityProbe, LatentError> {
    if pair_count < 10 {
        return Err(LatentError::Invalid(format!("need at least 10 pairs, got {pair_count}")));
    }
    let seqs: Vec<PeptideSequence> = corpus.sequences(Split::Train);
    if seqs.len() < 2 {
        return Err(LatentError::Empty);
    }
    let mus: Vec<Vec<f64>> = model.encode_batch(&seqs)?.into_iter().map(|p| p.mu).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = seqs.len();
    let picks: Vec<(usize, f64)> = (0..pair_count)
        .map(|_| (rng.random_range(0..n), rng.random::<f64>()))
        .collect();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let pairs: Vec<PairRecord> = picks
        .par_iter()
        .enumerate()
        .map(|(pair_id, &(i, u))| {
            let mut order: Vec<(f64, usize)> = (0..n).map(|j| (dist(&mus[i], &mus[j]), j)).collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1 != i).cmp(&(b.1 != i))).then(a.1.cmp(&b.1)));
            let rank = ((n as f64).powf(u).floor() as usize).saturating_sub(1).min(n - 1);
            let (distance, j) = order[rank];
            PairRecord {
                pair_id,
                a: seqs[i].to_string(),
                b: seqs[j].to_string(),
                similarity: global_align(seqs[i].residues(), seqs[j].residues()).identity_pct,
                distance,
            }
        })
        .collect();
    let sim: Vec<f64> = pairs.iter().map(|p| p.similarity).collect();
    let d: Vec<f64> = pairs.iter().map(|p| p.distance).collect();
    let r = pearson(&sim, &d);
    let mut boots: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| {
            let idx: Vec<usize> = (0..pairs.len()).map(|_| rng.random_range(0..pairs.len())).collect();
            let s: Vec<f64> = idx.iter().map(|&k| sim[k]).collect();
            let t: Vec<f64> = idx.iter().map(|&k| d[k]).collect();
            pearson(&s, &t)
        })
        .filter(|v| v.is_finite())
        .collect();
    boots.sort_by(f64::total_cmp);
    let q = |p: f64| boots.get(((boots.len() as f64 - 1.0) * p).round() as usize).copied().unwrap_or(f64::NAN);
    Ok(SimilarityProbe {
        r,
        ci_low: q(0.025),
        ci_high: q(0.975),
        pairs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolationStep {
    pub index: usize,
    pub z: Vec<f64>,
    pub sequence: String,
    pub descriptors: DescriptorVector,
    pub probabilities: Vec<(Attribute, f64)>,
}

/// Beam-decodes `steps` evenly spaced points on the segment from `start` to `end`.
pub fn interpolate(
    model: &Autoencoder,
    start: &LatentPoint,
    end: &LatentPoint,
    steps: usize,
    classifiers: &[LatentClassifier],
) -> Result<Vec<InterpolationStep>, LatentError> {
    if steps < 2 {
        return Err(LatentError::Invalid("interpolation needs at least 2 steps".into()));
    }
    let d = model.latent_dim();
    check_dim(d, start.dim())?;
    check_dim(d, end.dim())?;
    for c in classifiers {
        check_dim(d, c.dim())?;
    }
    let zs: Vec<LatentPoint> = (0..steps)
        .map(|i| {
            let t = i as f64 / (steps - 1) as f64;
            LatentPoint::new(start.z.iter().zip(&end.z).map(|(a, b)| a + t * (b - a)).collect())
        })
        .collect();
    let decoded = decode_many(model, &zs, model.config.beam_size)?;
    Ok(zs
        .into_iter()
        .zip(decoded)
        .enumerate()
        .map(|(index, (z, seq))| InterpolationStep {
            index,
            descriptors: descriptors(&seq, true, 7.0),
            probabilities: classifiers.iter().map(|c| (c.attribute, c.prob(&z.z))).collect(),
            sequence: seq.to_string(),
            z: z.z,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::{sample_prior, tests::tiny_config};
    use crate::corpus::synthetic::random_background;
    use crate::corpus::{RawRecord, DEFAULT_MAX_SEQ_LENGTH};

    fn model() -> Autoencoder {
        let mut c = tiny_config();
        c.max_seq_length = 12;
        c.beam_size = 3;
        Autoencoder::init(c).unwrap()
    }

    #[test]
    fn interpolation_endpoints_and_monotone_distance() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = sample_prior(3, &mut rng);
        let b = sample_prior(3, &mut rng);
        let clf = LatentClassifier { attribute: Attribute::Amp, weights: vec![1.0, 0.0, 0.0], bias: 0.0 };
        let path = interpolate(&m, &a, &b, 6, std::slice::from_ref(&clf)).unwrap();
        assert_eq!(path.len(), 6);
        assert_eq!(path[0].sequence, m.decode(&a).unwrap().to_string());
        assert_eq!(path[5].sequence, m.decode(&b).unwrap().to_string());
        let dist = |s: &InterpolationStep| s.z.iter().zip(&a.z).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        for w in path.windows(2) {
            assert!(dist(&w[1]) > dist(&w[0]));
        }
        assert!(path.iter().all(|s| s.probabilities[0].1 > 0.0 && s.probabilities[0].1 < 1.0));
        let same = interpolate(&m, &a, &a, 4, &[]).unwrap();
        assert!(same.iter().all(|s| s.sequence == same[0].sequence));
        assert!(interpolate(&m, &a, &b, 1, &[]).is_err());
    }

    #[test]
    fn probe_includes_self_pairs_and_validates() {
        let recs = (0..80).map(|i| RawRecord { sequence: random_background(i), labels: Vec::new() });
        let corpus = LabeledCorpus::from_records(recs, 1, DEFAULT_MAX_SEQ_LENGTH);
        let m = model();
        assert!(probe_similarity_correlation(&m, &corpus, 9, 0).is_err());
        let p = probe_similarity_correlation(&m, &corpus, 200, 0).unwrap();
        assert_eq!(p.pairs.len(), 200);
        let selfs: Vec<_> = p.pairs.iter().filter(|q| q.a == q.b).collect();
        assert!(!selfs.is_empty());
        assert!(selfs.iter().all(|q| q.distance == 0.0 && q.similarity == 100.0));
        assert!(p.ci_low <= p.r && p.r <= p.ci_high);
        assert_eq!(p, probe_similarity_correlation(&m, &corpus, 200, 0).unwrap());
    }
}
