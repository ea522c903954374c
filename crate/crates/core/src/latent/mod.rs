//! Explicit models fitted in the autoencoder latent space: a diagonal Gaussian mixture for
//! the aggregated posterior, per-attribute logistic classifiers, and latent-space probes.

mod gmm;
mod logistic;
mod probes;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use gmm::{fit_gmm, gmm_logpdf, gmm_sample, GmmConfig, GmmFit, MixtureDensity};
pub use logistic::{classifier_prob, fit_latent_classifier, logistic_grad_check, ClassifierFit, LatentClassifier, LogisticConfig};
pub use probes::{interpolate, probe_similarity_correlation, InterpolationStep, PairRecord, SimilarityProbe};

use crate::autoencoder::{sample_posterior, AeError, Autoencoder};
use crate::corpus::{Attribute, LabeledCorpus, Split};
use crate::tensor::CheckpointError;

#[derive(Debug, Error)]
pub enum LatentError {
    #[error("{points} latent points cannot support {components} mixture components")]
    TooFewPoints { points: usize, components: usize },
    #[error("mixture component {0} collapsed again after re-seeding")]
    DegenerateComponent(usize),
    #[error("attribute `{0}` has a single class in the training data")]
    SingleClass(Attribute),
    #[error("latent dimension {got} does not match expected {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("no latent points")]
    Empty,
    #[error("invalid parameter: {0}")]
    Invalid(String),
    #[error("optimizer failed: {0}")]
    Optimizer(String),
    #[error(transparent)]
    Autoencoder(#[from] AeError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Posterior draws for a set of corpus entries, each tagged with its source entry's labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDataset {
    pub dim: usize,
    pub points: Vec<Vec<f64>>,
    /// Index into `corpus.entries` of the sequence each point was drawn for.
    pub source: Vec<usize>,
    pub labels: Vec<BTreeMap<Attribute, bool>>,
}

impl LatentDataset {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Points labeled for `attribute`, with their labels.
    pub fn labeled(&self, attribute: Attribute) -> (Vec<&[f64]>, Vec<bool>) {
        self.points
            .iter()
            .zip(&self.labels)
            .filter_map(|(p, l)| l.get(&attribute).map(|&v| (p.as_slice(), v)))
            .unzip()
    }
}

/// `samples_per_seq` posterior draws for every entry of `split`, in corpus order.
pub fn embed_corpus(
    model: &Autoencoder,
    corpus: &LabeledCorpus,
    split: Split,
    samples_per_seq: usize,
    seed: u64,
) -> Result<LatentDataset, LatentError> {
    let idx: Vec<usize> = (0..corpus.entries.len())
        .filter(|&i| corpus.entries[i].split == split)
        .collect();
    let seqs: Vec<_> = idx.iter().map(|&i| corpus.entries[i].sequence.clone()).collect();
    let posts = model.encode_batch(&seqs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = LatentDataset {
        dim: model.latent_dim(),
        points: Vec::with_capacity(idx.len() * samples_per_seq),
        source: Vec::with_capacity(idx.len() * samples_per_seq),
        labels: Vec::with_capacity(idx.len() * samples_per_seq),
    };
    for (&i, post) in idx.iter().zip(&posts) {
        for _ in 0..samples_per_seq {
            out.points.push(sample_posterior(post, &mut rng).z);
            out.source.push(i);
            out.labels.push(corpus.entries[i].labels.clone());
        }
    }
    Ok(out)
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<(), LatentError> {
    if expected == got {
        Ok(())
    } else {
        Err(LatentError::DimMismatch { expected, got })
    }
}
