//! Synthetic peptide corpora with a planted attribute, used for desk-scale runs.
//!
//! Sequences come from three families: a background family with roughly natural residue
//! frequencies, an anionic family, and a cationic amphipathic family that usually carries a
//! `KK` motif. The planted attribute is the rule [`planted_attribute`] evaluated on each
//! sequence, so labels are exact.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Attribute, RawRecord};
use crate::analysis::net_charge;

/// Approximate natural residue frequencies (percent), alphabetical order.
const BACKGROUND: [(u8, f64); 20] = [
    (b'A', 8.3),
    (b'C', 1.4),
    (b'D', 5.5),
    (b'E', 6.7),
    (b'F', 3.9),
    (b'G', 7.1),
    (b'H', 2.3),
    (b'I', 5.9),
    (b'K', 5.8),
    (b'L', 9.7),
    (b'M', 2.4),
    (b'N', 4.1),
    (b'P', 4.7),
    (b'Q', 3.9),
    (b'R', 5.5),
    (b'S', 6.6),
    (b'T', 5.3),
    (b'V', 6.9),
    (b'W', 1.1),
    (b'Y', 2.9),
];

const CATIONIC: [(u8, f64); 10] = [
    (b'K', 22.0),
    (b'R', 10.0),
    (b'L', 20.0),
    (b'W', 8.0),
    (b'I', 10.0),
    (b'A', 10.0),
    (b'F', 5.0),
    (b'G', 5.0),
    (b'V', 7.0),
    (b'H', 3.0),
];

const ANIONIC: [(u8, f64); 10] = [
    (b'E', 20.0),
    (b'D', 18.0),
    (b'S', 10.0),
    (b'G', 10.0),
    (b'A', 8.0),
    (b'T', 8.0),
    (b'N', 8.0),
    (b'Q', 6.0),
    (b'P', 6.0),
    (b'V', 6.0),
];

/// Oracle for the planted attribute: contains `KK` and has net charge ≥ +3 at pH 7
/// (amidated C-terminus).
pub fn planted_attribute(seq: &str) -> bool {
    seq.contains("KK") && net_charge(seq.as_bytes(), 7.0, true) >= 3.0
}

fn draw_residue(rng: &mut impl Rng, table: &[(u8, f64)]) -> u8 {
    let total: f64 = table.iter().map(|(_, w)| w).sum();
    let mut u = rng.random::<f64>() * total;
    for &(aa, w) in table {
        if u < w {
            return aa;
        }
        u -= w;
    }
    table[table.len() - 1].0
}

fn draw_from(rng: &mut impl Rng, table: &[(u8, f64)], len: usize) -> Vec<u8> {
    (0..len).map(|_| draw_residue(rng, table)).collect()
}

/// Shape of a synthetic corpus.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticSpec {
    pub count: usize,
    /// Fraction of sequences from the cationic family.
    pub cationic_fraction: f64,
    pub anionic_fraction: f64,
    /// Probability that a cationic sequence receives an explicit `KK` motif.
    pub motif_probability: f64,
    /// Fraction of sequences that carry a label for the planted attribute.
    pub labeled_fraction: f64,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            count: 5_000,
            cationic_fraction: 0.2,
            anionic_fraction: 0.15,
            motif_probability: 0.85,
            labeled_fraction: 0.3,
            min_len: 8,
            max_len: 18,
        }
    }
}

/// Distinct synthetic sequences; the planted attribute is attached as the `Amp` label on a
/// seeded subset.
pub fn planted_corpus(spec: &SyntheticSpec, seed: u64) -> Vec<RawRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(spec.count);
    while out.len() < spec.count {
        let len = rng.random_range(spec.min_len..=spec.max_len);
        let family = rng.random::<f64>();
        let residues = if family < spec.cationic_fraction {
            let mut r = draw_from(&mut rng, &CATIONIC, len);
            if rng.random::<f64>() < spec.motif_probability {
                let at = rng.random_range(0..len - 1);
                r[at] = b'K';
                r[at + 1] = b'K';
            }
            r
        } else if family < spec.cationic_fraction + spec.anionic_fraction {
            draw_from(&mut rng, &ANIONIC, len)
        } else {
            draw_from(&mut rng, &BACKGROUND, len)
        };
        let seq = String::from_utf8(residues).expect("ascii residues");
        if !seen.insert(seq.clone()) {
            continue;
        }
        let labels = if rng.random::<f64>() < spec.labeled_fraction {
            vec![(Attribute::Amp, planted_attribute(&seq))]
        } else {
            Vec::new()
        };
        out.push(RawRecord {
            sequence: seq,
            labels,
        });
    }
    out
}

/// A background-family sequence determined by `index`; handy for fixtures.
pub fn random_background(index: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(index ^ 0x5eed_0000);
    let len = rng.random_range(5..=20);
    String::from_utf8(draw_from(&mut rng, &BACKGROUND, len)).expect("ascii residues")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_examples() {
        assert!(planted_attribute("KKLLKRLL"));
        assert!(!planted_attribute("KLKLKRLL"));
        assert!(!planted_attribute("KKEEDL"));
    }

    #[test]
    fn planted_rate_is_moderate() {
        let recs = planted_corpus(&SyntheticSpec::default(), 1);
        assert_eq!(recs.len(), 5_000);
        let pos = recs.iter().filter(|r| planted_attribute(&r.sequence)).count() as f64 / 5_000.0;
        assert!(pos > 0.08 && pos < 0.3, "planted rate {pos}");
        let labeled = recs.iter().filter(|r| !r.labels.is_empty()).count() as f64 / 5_000.0;
        assert!((labeled - 0.3).abs() < 0.03);
    }
}
