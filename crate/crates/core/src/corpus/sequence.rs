use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default maximum peptide length accepted by the pipeline.
pub const DEFAULT_MAX_SEQ_LENGTH: usize = 25;

/// The twenty natural amino acids, in alphabetical one-letter order.
pub const AMINO_ACIDS: [u8; 20] = *b"ACDEFGHIKLMNPQRSTVWY";

/// Index of `residue` in [`AMINO_ACIDS`], if it is one of the twenty natural residues.
pub fn residue_index(residue: u8) -> Option<usize> {
    match residue {
        b'A' => Some(0),
        b'C' => Some(1),
        b'D' => Some(2),
        b'E' => Some(3),
        b'F' => Some(4),
        b'G' => Some(5),
        b'H' => Some(6),
        b'I' => Some(7),
        b'K' => Some(8),
        b'L' => Some(9),
        b'M' => Some(10),
        b'N' => Some(11),
        b'P' => Some(12),
        b'Q' => Some(13),
        b'R' => Some(14),
        b'S' => Some(15),
        b'T' => Some(16),
        b'V' => Some(17),
        b'W' => Some(18),
        b'Y' => Some(19),
        _ => None,
    }
}

/// Why a raw string was not accepted as a peptide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Error, Serialize, Deserialize)]
pub enum Rejection {
    #[error("empty sequence")]
    Empty,
    #[error("lowercase residue present")]
    LowercasePresent,
    #[error("non-natural residue")]
    NonNaturalResidue,
    #[error("sequence longer than the configured maximum")]
    TooLong,
}

impl Rejection {
    pub fn name(self) -> &'static str {
        match self {
            Rejection::Empty => "Empty",
            Rejection::LowercasePresent => "LowercasePresent",
            Rejection::NonNaturalResidue => "NonNaturalResidue",
            Rejection::TooLong => "TooLong",
        }
    }
}

/// A validated peptide over the 20 natural amino acids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PeptideSequence(String);

impl PeptideSequence {
    /// Validates `raw` against the residue alphabet and `max_len`. Never normalizes case or
    /// strips characters.
    pub fn new(raw: &str, max_len: usize) -> Result<Self, Rejection> {
        if raw.is_empty() {
            return Err(Rejection::Empty);
        }
        if raw.bytes().any(|b| b.is_ascii_lowercase()) {
            return Err(Rejection::LowercasePresent);
        }
        if raw.bytes().any(|b| residue_index(b).is_none()) {
            return Err(Rejection::NonNaturalResidue);
        }
        if raw.len() > max_len {
            return Err(Rejection::TooLong);
        }
        Ok(Self(raw.to_owned()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn residues(&self) -> &[u8] {
        self.0.as_bytes()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Shorthand for [`PeptideSequence::new`] with the default length cap.
pub fn validate_sequence(raw: &str) -> Result<PeptideSequence, Rejection> {
    PeptideSequence::new(raw, DEFAULT_MAX_SEQ_LENGTH)
}

impl fmt::Display for PeptideSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for PeptideSequence {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for PeptideSequence {
    type Error = Rejection;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        // Deserialized sequences come from our own artifacts, so only the alphabet is checked.
        PeptideSequence::new(&value, usize::MAX)
    }
}

impl From<PeptideSequence> for String {
    fn from(value: PeptideSequence) -> Self {
        value.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_table_peptide() {
        let s = validate_sequence("FPLTWLKWWKWKK").unwrap();
        assert_eq!(s.len(), 13);
    }

    #[test]
    fn rejects_excluded_letters() {
        assert_eq!(validate_sequence("AXLB"), Err(Rejection::NonNaturalResidue));
        for c in ["B", "J", "O", "U", "X", "Z"] {
            assert_eq!(validate_sequence(&format!("AA{c}")), Err(Rejection::NonNaturalResidue));
        }
    }

    #[test]
    fn rejects_long_and_empty_and_lowercase() {
        assert_eq!(validate_sequence(&"A".repeat(26)), Err(Rejection::TooLong));
        assert!(validate_sequence(&"A".repeat(25)).is_ok());
        assert_eq!(validate_sequence(""), Err(Rejection::Empty));
        assert_eq!(validate_sequence("AkA"), Err(Rejection::LowercasePresent));
        assert_eq!(validate_sequence(" KK"), Err(Rejection::NonNaturalResidue));
    }

    #[test]
    fn residue_table_is_consistent() {
        for (i, &aa) in AMINO_ACIDS.iter().enumerate() {
            assert_eq!(residue_index(aa), Some(i));
        }
    }
}
