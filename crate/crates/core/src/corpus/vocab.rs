use serde::{Deserialize, Serialize};

use super::sequence::{residue_index, PeptideSequence, AMINO_ACIDS};

pub const PAD: u32 = 0;
pub const SOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
const FIRST_RESIDUE: u32 = 4;

/// Token table: `PAD`, `SOS`, `EOS`, `UNK`, then the 20 residues in alphabetical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Vocabulary;

impl Vocabulary {
    pub const SIZE: usize = 24;

    pub fn size(&self) -> usize {
        Self::SIZE
    }

    pub fn residue_token(&self, residue: u8) -> Option<u32> {
        residue_index(residue).map(|i| i as u32 + FIRST_RESIDUE)
    }

    /// The residue a token stands for; `None` for special tokens.
    pub fn token_residue(&self, token: u32) -> Option<u8> {
        token
            .checked_sub(FIRST_RESIDUE)
            .and_then(|i| AMINO_ACIDS.get(i as usize).copied())
    }

    pub fn is_residue(&self, token: u32) -> bool {
        self.token_residue(token).is_some()
    }

    pub fn tokenize(&self, seq: &PeptideSequence) -> Vec<u32> {
        seq.residues()
            .iter()
            .map(|&r| self.residue_token(r).expect("validated sequence"))
            .collect()
    }

    /// Framed row `[SOS, residues.., EOS, PAD..]` of width `max_len + 2`.
    pub fn frame(&self, seq: &PeptideSequence, max_len: usize) -> Vec<u32> {
        let mut row = Vec::with_capacity(max_len + 2);
        row.push(SOS);
        row.extend(self.tokenize(seq));
        row.push(EOS);
        row.resize(max_len + 2, PAD);
        row
    }

    /// Inverse of [`tokenize`](Self::tokenize); stops at the first `EOS` and skips other
    /// special tokens.
    pub fn detokenize(&self, tokens: &[u32]) -> String {
        tokens
            .iter()
            .take_while(|&&t| t != EOS)
            .filter_map(|&t| self.token_residue(t))
            .map(char::from)
            .collect()
    }

    pub fn token_names(&self) -> Vec<String> {
        let mut names: Vec<String> = ["<pad>", "<sos>", "<eos>", "<unk>"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        names.extend(AMINO_ACIDS.iter().map(|&c| char::from(c).to_string()));
        names
    }
}
