use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses::{model_rff, objective_graph, BatchNoise};
use super::{AeConfig, AeError, Autoencoder};
use crate::corpus::{training_batches, LabeledCorpus, PeptideSequence, Split};
use crate::tensor::{AdamConfig, Graph};

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Written at every log interval; on divergence the last good one is left in place.
    pub checkpoint: Option<PathBuf>,
    /// Line-delimited JSON training log.
    pub log: Option<PathBuf>,
    /// Number of held-out sequences scored for reconstruction NLL at each log interval.
    pub heldout_eval: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogLine {
    pub iter: usize,
    pub beta: f64,
    /// Interval means of the training terms (reconstruction is per token).
    pub recon: f64,
    pub constraint: f64,
    pub logvar_penalty: f64,
    pub total: f64,
    pub heldout_recon: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Autoencoder,
    pub log: Vec<TrainLogLine>,
}

/// Trains for `config.iterations` Adam steps on the train split. Single-threaded and fully
/// determined by `config.seed`.
pub fn train(corpus: &LabeledCorpus, config: &AeConfig, opts: &TrainOptions) -> Result<TrainOutcome, AeError> {
    let mut model = Autoencoder::init(config.clone())?;
    let mut batches = training_batches(corpus, config.batch_size, config.upsample, config.seed ^ 0xb7)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xa5);
    let rff = model_rff(&model);
    let adam = AdamConfig {
        lr: config.lr,
        clip_norm: config.clip_norm,
        ..AdamConfig::default()
    };
    let heldout: Vec<PeptideSequence> = corpus
        .sequences(Split::Heldout)
        .into_iter()
        .take(opts.heldout_eval)
        .collect();
    let mut writer = match &opts.log {
        Some(p) => Some(BufWriter::new(File::create(p)?)),
        None => None,
    };
    let mut log = Vec::new();
    let mut sums = [0.0; 4];
    let mut count = 0usize;
    let mut last_good = 0usize;
    for iter in 1..=config.iterations {
        let batch = batches.next_batch();
        let seqs: Vec<&PeptideSequence> = batch.entries.iter().map(|&i| &corpus.entries[i].sequence).collect();
        let noise = BatchNoise::draw(&model, &seqs, &mut rng);
        let beta = config.beta_schedule.at(iter);
        let mut g = Graph::new();
        let nodes = objective_graph(&model, &mut g, &model.params, &seqs, &noise, config.objective, beta, &rff)?;
        let parts = nodes.breakdown(&g);
        if !parts.total.is_finite() {
            return Err(AeError::Diverged { iteration: iter, last_good });
        }
        let grads = g.backward(nodes.total);
        if model.params.adam_update(&grads, &adam).is_err() {
            return Err(AeError::Diverged { iteration: iter, last_good });
        }
        for (s, v) in sums.iter_mut().zip([parts.recon, parts.constraint, parts.logvar_penalty, parts.total]) {
            *s += v;
        }
        count += 1;
        let at_interval = config.log_every > 0 && iter % config.log_every == 0;
        if at_interval || iter == config.iterations {
            let n = count as f64;
            let heldout_recon = if heldout.is_empty() { None } else { Some(model.recon_nll(&heldout)?) };
            let line = TrainLogLine {
                iter,
                beta,
                recon: sums[0] / n,
                constraint: sums[1] / n,
                logvar_penalty: sums[2] / n,
                total: sums[3] / n,
                heldout_recon,
            };
            info!(
                "ae iter {iter}: recon {:.4} constraint {:.5} total {:.4} heldout {:?}",
                line.recon, line.constraint, line.total, line.heldout_recon
            );
            if let Some(w) = writer.as_mut() {
                serde_json::to_writer(&mut *w, &line).map_err(std::io::Error::other)?;
                w.write_all(b"\n")?;
                w.flush()?;
            }
            if let Some(p) = &opts.checkpoint {
                let mut ck = model.to_checkpoint();
                ck.set_meta("ae.iteration", iter.to_string());
                ck.save(p)?;
            }
            last_good = iter;
            log.push(line);
            sums = [0.0; 4];
            count = 0;
        }
    }
    Ok(TrainOutcome { model, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::tests::tiny_config;
    use crate::corpus::synthetic::random_background;
    use crate::corpus::{RawRecord, DEFAULT_MAX_SEQ_LENGTH};

    fn corpus() -> LabeledCorpus {
        let records = (0..60).map(|i| RawRecord {
            sequence: random_background(i),
            labels: Vec::new(),
        });
        LabeledCorpus::from_records(records, 3, DEFAULT_MAX_SEQ_LENGTH)
    }

    #[test]
    fn short_run_is_deterministic_and_logs() {
        let c = corpus();
        let mut cfg = tiny_config();
        cfg.iterations = 12;
        cfg.log_every = 4;
        cfg.batch_size = 4;
        cfg.upsample = None;
        let dir = tempfile::tempdir().unwrap();
        let opts = TrainOptions {
            checkpoint: Some(dir.path().join("ae.ckpt")),
            log: Some(dir.path().join("log.jsonl")),
            heldout_eval: 4,
        };
        let a = train(&c, &cfg, &opts).unwrap();
        let bytes_a = std::fs::read(dir.path().join("ae.ckpt")).unwrap();
        let b = train(&c, &cfg, &opts).unwrap();
        let bytes_b = std::fs::read(dir.path().join("ae.ckpt")).unwrap();
        assert_eq!(bytes_a, bytes_b);
        assert_eq!(a.log, b.log);
        assert_eq!(a.log.len(), 3);
        let text = std::fs::read_to_string(dir.path().join("log.jsonl")).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().all(|l| l.contains("\"recon\"")));
    }

    #[test]
    fn divergence_is_typed() {
        let c = corpus();
        let mut cfg = tiny_config();
        cfg.iterations = 3;
        cfg.batch_size = 2;
        cfg.upsample = None;
        cfg.lr = f64::MAX;
        cfg.clip_norm = None;
        cfg.log_every = 1;
        match train(&c, &cfg, &TrainOptions::default()) {
            Err(AeError::Diverged { iteration, last_good }) => assert!(last_good < iteration),
            other => panic!("expected divergence, got {:?}", other.map(|o| o.log)),
        }
    }
}
