//! Sequence analysis: descriptors, alignment-based novelty and k-mer statistics.

pub mod align;
pub mod descriptors;

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use align::{global_align, AlignmentResult, SubstitutionMatrix};
pub use descriptors::{descriptors, hydrophobic_moment, net_charge, DescriptorVector};

use crate::corpus::PeptideSequence;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("every sequence is shorter than k = {0}")]
    AllShorterThanK(usize),
    #[error("reference corpus is empty")]
    EmptyCorpus,
}

pub(crate) fn verify_checksum(body: &str, expected: &str, name: &str) {
    let digest = hex::encode(Sha256::digest(body.as_bytes()));
    assert_eq!(digest, expected, "vendored table {name} failed its checksum");
}

/// Fraction of distinct k-mers (pooled over all sequences) that occur exactly once.
pub fn kmer_uniqueness<S: AsRef<str>>(sequences: &[S], k: usize) -> Result<f64, AnalysisError> {
    if k == 0 {
        return Err(AnalysisError::ZeroK);
    }
    let mut counts: HashMap<&[u8], usize> = HashMap::new();
    for s in sequences {
        for w in s.as_ref().as_bytes().windows(k) {
            *counts.entry(w).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(AnalysisError::AllShorterThanK(k));
    }
    let once = counts.values().filter(|&&c| c == 1).count();
    Ok(once as f64 / counts.len() as f64)
}

/// Best global alignment of one candidate against a reference set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoveltyHit {
    pub candidate: String,
    pub closest: String,
    pub alignment: AlignmentResult,
}

/// For each candidate, the highest-scoring global alignment over `reference`. Ties go to the
/// lexicographically smallest reference sequence, so the report does not depend on the
/// reference order.
pub fn novelty_report(
    candidates: &[PeptideSequence],
    reference: &[PeptideSequence],
) -> Result<Vec<NoveltyHit>, AnalysisError> {
    if reference.is_empty() {
        return Err(AnalysisError::EmptyCorpus);
    }
    Ok(candidates
        .par_iter()
        .map(|cand| {
            let mut best: Option<(&PeptideSequence, AlignmentResult)> = None;
            for r in reference {
                let aln = global_align(cand.residues(), r.residues());
                let better = match &best {
                    None => true,
                    Some((bs, ba)) => {
                        aln.score > ba.score || (aln.score == ba.score && r.as_str() < bs.as_str())
                    }
                };
                if better {
                    best = Some((r, aln));
                }
            }
            let (closest, alignment) = best.expect("nonempty reference");
            NoveltyHit {
                candidate: cand.to_string(),
                closest: closest.to_string(),
                alignment,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::validate_sequence;
    use proptest::prelude::*;

    fn seqs(v: &[&str]) -> Vec<PeptideSequence> {
        v.iter().map(|s| validate_sequence(s).unwrap()).collect()
    }

    #[test]
    fn kmer_examples() {
        assert_eq!(kmer_uniqueness(&["AAAA"], 3).unwrap(), 0.0);
        assert_eq!(kmer_uniqueness(&["ACDEF"], 3).unwrap(), 1.0);
        assert_eq!(kmer_uniqueness(&["AC"], 3), Err(AnalysisError::AllShorterThanK(3)));
        assert_eq!(kmer_uniqueness(&["AC"], 0), Err(AnalysisError::ZeroK));
    }

    proptest! {
        #[test]
        fn kmer_fraction_bounded(v in proptest::collection::vec("[ACDK]{0,10}", 1..6), k in 1usize..4) {
            if let Ok(f) = kmer_uniqueness(&v, k) {
                prop_assert!((0.0..=1.0).contains(&f));
            }
        }
    }

    #[test]
    fn identical_candidate_is_fully_covered() {
        let reference = seqs(&["GLFDIVKKVV", "FPLTWLKWWKWKK", "KRWW"]);
        let hits = novelty_report(&seqs(&["FPLTWLKWWKWKK"]), &reference).unwrap();
        assert_eq!(hits[0].closest, "FPLTWLKWWKWKK");
        assert_eq!(hits[0].alignment.identity_pct, 100.0);
        assert_eq!(hits[0].alignment.coverage_pct, 100.0);
    }

    #[test]
    fn fk13_against_puroindoline_variant() {
        // Fixture reference: a one-residue deletion variant of the PuroA domain.
        let reference = seqs(&["FPVTWWWKWWKG", "GLFDIVKKVVGALGSL", "KWKLFKKIGAVLKVL"]);
        let hits = novelty_report(&seqs(&["FPLTWLKWWKWKK"]), &reference).unwrap();
        let a = &hits[0].alignment;
        assert_eq!(hits[0].closest, "FPVTWWWKWWKG");
        assert!(a.identity_pct < 75.0, "identity {}", a.identity_pct);
        assert!((a.coverage_pct - 85.0).abs() < 1.0, "coverage {}", a.coverage_pct);
        assert!(a.gap_pct > 0.0);
    }

    #[test]
    fn report_is_order_invariant() {
        let mut reference = seqs(&["KKLLKK", "KKLLKR", "AAGG", "WWKW"]);
        let cands = seqs(&["KKLLK", "AWG", "WKWK"]);
        let a = novelty_report(&cands, &reference).unwrap();
        reference.reverse();
        let b = novelty_report(&cands, &reference).unwrap();
        assert_eq!(a, b);
        assert_eq!(novelty_report(&cands, &[]), Err(AnalysisError::EmptyCorpus));
    }
}
