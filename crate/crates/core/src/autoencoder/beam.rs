use std::cmp::Ordering;

use rayon::prelude::*;

use super::{AeError, Autoencoder, LatentPoint, Layers, EMB};
use crate::corpus::{PeptideSequence, Vocabulary, EOS, SOS};
use crate::tensor::{Graph, Tensor, Var};

/// Incremental decoder over a single latent code. Rows of the hidden-state node are
/// hypotheses.
struct Session<'a> {
    model: &'a Autoencoder,
    layers: Layers,
    g: Graph,
    z: Var,
}

impl<'a> Session<'a> {
    fn new(model: &'a Autoencoder, z: &LatentPoint) -> Self {
        let mut g = Graph::new();
        let z = g.constant(Tensor::row(z.z.clone()));
        Self {
            model,
            layers: model.layers(),
            g,
            z,
        }
    }

    fn initial(&mut self) -> Var {
        let ps = &self.model.params;
        let pre = self.layers.dec_init.forward(&mut self.g, ps, self.z).expect("decoder shapes");
        self.g.tanh(pre)
    }

    /// Feeds `tokens[i]` to hypothesis row `parents[i]` of `h`; returns the new state and
    /// per-row log-probabilities over the vocabulary.
    fn step(&mut self, h: Var, parents: &[usize], tokens: &[u32]) -> (Var, Vec<Vec<f64>>) {
        let ps = &self.model.params;
        let g = &mut self.g;
        let h_rows = g.gather_rows(h, parents);
        let emb = g.param(ps, EMB).expect("embedding");
        let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let e = g.gather_rows(emb, &ids);
        let zr = g.gather_rows(self.z, &vec![0; tokens.len()]);
        let x = g.concat_cols(&[e, zr]);
        let h_new = self.layers.dec.step(g, ps, x, h_rows).expect("decoder shapes");
        let logits = self.layers.out.forward(g, ps, h_new).expect("decoder shapes");
        let lt = g.value(logits);
        let lps = (0..lt.rows()).map(|r| log_softmax(lt.row_slice(r))).collect();
        (h_new, lps)
    }
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - log_z).collect()
}

#[derive(Debug, Clone)]
struct Hyp {
    tokens: Vec<u32>,
    score: f64,
    row: usize,
}

/// Higher score first, then lexicographically smaller token ids.
fn rank(a: &(f64, Vec<u32>), b: &(f64, Vec<u32>)) -> Ordering {
    b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then_with(|| a.1.cmp(&b.1))
}

fn allowed(step: usize, max_len: usize) -> impl Iterator<Item = u32> {
    let vocab = Vocabulary;
    let residues = (0..Vocabulary::SIZE as u32).filter(move |&t| vocab.is_residue(t) && step < max_len);
    let eos = (step >= 1).then_some(EOS);
    eos.into_iter().chain(residues)
}

fn beam_search(model: &Autoencoder, z: &LatentPoint, beam: usize) -> (Vec<u32>, f64) {
    let max_len = model.config.max_seq_length;
    let mut session = Session::new(model, z);
    let mut h = session.initial();
    let mut active = vec![Hyp {
        tokens: Vec::new(),
        score: 0.0,
        row: 0,
    }];
    let mut finished: Vec<(f64, Vec<u32>)> = Vec::new();
    for step in 0..=max_len {
        if active.is_empty() {
            break;
        }
        let parents: Vec<usize> = active.iter().map(|a| a.row).collect();
        let inputs: Vec<u32> = active.iter().map(|a| *a.tokens.last().unwrap_or(&SOS)).collect();
        let (h_new, lps) = session.step(h, &parents, &inputs);
        h = h_new;
        let mut cands: Vec<(f64, Vec<u32>, usize)> = Vec::new();
        for (i, hyp) in active.iter().enumerate() {
            for t in allowed(step, max_len) {
                let mut toks = hyp.tokens.clone();
                toks.push(t);
                cands.push((hyp.score + lps[i][t as usize], toks, i));
            }
        }
        cands.sort_by(|a, b| {
            b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then_with(|| a.1.cmp(&b.1))
        });
        cands.truncate(beam);
        active.clear();
        for (score, toks, row) in cands {
            if *toks.last().expect("nonempty") == EOS {
                finished.push((score, toks));
            } else {
                active.push(Hyp { tokens: toks, score, row });
            }
        }
        // Scores only decrease, so no active hypothesis can overtake the best finished one.
        if let Some(best) = finished.iter().map(|f| f.0).reduce(f64::max) {
            if active.iter().all(|a| a.score < best) {
                break;
            }
        }
    }
    finished.sort_by(rank);
    let (score, mut toks) = finished.into_iter().next().expect("EOS forced at length cap");
    toks.pop();
    (toks, score)
}

fn to_sequence(model: &Autoencoder, toks: &[u32]) -> PeptideSequence {
    let s = Vocabulary.detokenize(toks);
    PeptideSequence::new(&s, model.config.max_seq_length).expect("decoder emits residues only")
}

/// Beam-search decoding of `z`: the EOS-terminated hypothesis with the highest total
/// log-probability, never worse than the greedy decode. Ties go to smaller token ids.
pub fn decode_beam(model: &Autoencoder, z: &LatentPoint, beam_size: usize) -> Result<PeptideSequence, AeError> {
    model.check_latent(z)?;
    let beam = beam_size.max(1);
    let (mut toks, mut score) = beam_search(model, z, beam);
    if beam > 1 {
        let (g_toks, g_score) = beam_search(model, z, 1);
        if g_score > score {
            toks = g_toks;
            score = g_score;
        }
    }
    debug_assert!(score.is_finite());
    Ok(to_sequence(model, &toks))
}

/// Decodes many latent points concurrently; output order follows input order.
pub fn decode_many(
    model: &Autoencoder,
    zs: &[LatentPoint],
    beam_size: usize,
) -> Result<Vec<PeptideSequence>, AeError> {
    zs.par_iter().map(|z| decode_beam(model, z, beam_size)).collect()
}

/// `log p(seq, EOS | z)` under the decoder.
pub fn sequence_log_prob(model: &Autoencoder, z: &LatentPoint, seq: &PeptideSequence) -> Result<f64, AeError> {
    model.check_latent(z)?;
    let mut session = Session::new(model, z);
    let mut h = session.initial();
    let mut prev = SOS;
    let mut total = 0.0;
    let toks = Vocabulary.tokenize(seq);
    for &t in toks.iter().chain(std::iter::once(&EOS)) {
        let (h_new, lps) = session.step(h, &[0], &[prev]);
        h = h_new;
        total += lps[0][t as usize];
        prev = t;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::tests::tiny_config;
    use crate::autoencoder::sample_prior;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn greedy_reference(model: &Autoencoder, z: &LatentPoint) -> PeptideSequence {
        let max_len = model.config.max_seq_length;
        let mut session = Session::new(model, z);
        let mut h = session.initial();
        let mut toks = Vec::new();
        let mut prev = SOS;
        for step in 0..=max_len {
            let (h_new, lps) = session.step(h, &[0], &[prev]);
            h = h_new;
            let mut best = None;
            for t in allowed(step, max_len) {
                let lp = lps[0][t as usize];
                if best.is_none_or(|(_, b)| lp > b) {
                    best = Some((t, lp));
                }
            }
            let (t, _) = best.unwrap();
            if t == EOS {
                break;
            }
            toks.push(t);
            prev = t;
        }
        to_sequence(model, &toks)
    }

    fn model(seed: u64) -> Autoencoder {
        let mut c = tiny_config();
        c.seed = seed;
        c.max_seq_length = 10;
        Autoencoder::init(c).unwrap()
    }

    #[test]
    fn beam_one_is_greedy_and_deterministic() {
        let m = model(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let z = sample_prior(3, &mut rng);
            let b1 = decode_beam(&m, &z, 1).unwrap();
            assert_eq!(b1, greedy_reference(&m, &z));
            assert_eq!(decode_beam(&m, &z, 5).unwrap(), decode_beam(&m, &z, 5).unwrap());
            assert!(b1.len() <= 10);
        }
    }

    #[test]
    fn rejects_wrong_dimension() {
        let m = model(1);
        assert!(matches!(
            decode_beam(&m, &LatentPoint::new(vec![0.0; 7]), 5),
            Err(AeError::LatentDim { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn wider_beam_never_loses_to_greedy(seed in 0u64..1000, beam in 2usize..6) {
            let m = model(seed % 5);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let z = sample_prior(3, &mut rng);
            let wide = decode_beam(&m, &z, beam).unwrap();
            let greedy = decode_beam(&m, &z, 1).unwrap();
            let lw = sequence_log_prob(&m, &z, &wide).unwrap();
            let lg = sequence_log_prob(&m, &z, &greedy).unwrap();
            prop_assert!(lw >= lg - 1e-9, "beam {lw} < greedy {lg}");
        }
    }
}
