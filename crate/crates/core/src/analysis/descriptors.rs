//! Global physicochemical descriptors of a peptide.
//!
//! Scales and formulas are the standard ones behind common peptide-analysis tools:
//! Eisenberg consensus hydrophobicity, Kyte–Doolittle GRAVY, Ikai aliphatic index,
//! Guruprasad instability index (DIWV dipeptide table) and Henderson–Hasselbalch charge.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::corpus::{residue_index, PeptideSequence, AMINO_ACIDS};

/// Eisenberg consensus hydrophobicity, alphabetical residue order.
pub const EISENBERG: [f64; 20] = [
    0.62, 0.29, -0.90, -0.74, 1.19, 0.48, -0.40, 1.38, -1.50, 1.06, 0.64, -0.78, 0.12, -0.85,
    -2.53, -0.18, -0.05, 1.08, 0.81, 0.26,
];

/// Kyte–Doolittle hydropathy, alphabetical residue order.
pub const KYTE_DOOLITTLE: [f64; 20] = [
    1.8, 2.5, -3.5, -3.5, 2.8, -0.4, -3.2, 4.5, -3.9, 3.8, 1.9, -3.5, -1.6, -3.5, -4.5, -0.8,
    -0.7, 4.2, -0.9, -1.3,
];

/// Average residue masses (Da), alphabetical residue order.
const RESIDUE_MASS: [f64; 20] = [
    71.0788, 103.1388, 115.0886, 129.1155, 147.1766, 57.0519, 137.1411, 113.1594, 128.1741,
    113.1594, 131.1926, 114.1038, 97.1167, 128.1307, 156.1875, 87.0782, 101.1051, 99.1326,
    186.2132, 163.1760,
];
const WATER_MASS: f64 = 18.01524;
/// Mass change of C-terminal amidation (-OH → -NH2).
const AMIDATION_DELTA: f64 = -0.98476;

const PKA_N_TERM: f64 = 9.0;
const PKA_C_TERM: f64 = 3.55;
const PKA_POSITIVE: [(u8, f64); 3] = [(b'K', 10.0), (b'R', 12.0), (b'H', 6.0)];
const PKA_NEGATIVE: [(u8, f64); 4] = [(b'D', 4.05), (b'E', 4.25), (b'C', 9.0), (b'Y', 10.07)];

pub const HELIX_ANGLE_DEG: f64 = 100.0;

const DIWV_TSV: &str = include_str!("../../data/diwv.tsv");
const DIWV_SHA256: &str = "31a306db2778567cd3fac8d65964f4b91a67596e47596206f9309eb4368d9d73";

fn diwv() -> &'static [[f64; 20]; 20] {
    static TABLE: OnceLock<[[f64; 20]; 20]> = OnceLock::new();
    TABLE.get_or_init(|| {
        super::verify_checksum(DIWV_TSV, DIWV_SHA256, "diwv.tsv");
        let mut t = [[0.0; 20]; 20];
        let mut lines = DIWV_TSV.lines();
        let header: Vec<u8> = lines
            .next()
            .expect("diwv header")
            .split('\t')
            .skip(1)
            .map(|c| c.as_bytes()[0])
            .collect();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let mut fields = line.split('\t');
            let row = residue_index(fields.next().expect("row label").as_bytes()[0])
                .expect("diwv row residue");
            for (col, v) in header.iter().zip(fields) {
                let c = residue_index(*col).expect("diwv column residue");
                t[row][c] = v.parse().expect("diwv value");
            }
        }
        t
    })
}

fn idx(residues: &[u8]) -> impl Iterator<Item = usize> + '_ {
    residues
        .iter()
        .map(|&r| residue_index(r).expect("residue validated upstream"))
}

fn positive_fraction(pka: f64, ph: f64) -> f64 {
    1.0 / (1.0 + 10f64.powf(ph - pka))
}

fn negative_fraction(pka: f64, ph: f64) -> f64 {
    1.0 / (1.0 + 10f64.powf(pka - ph))
}

/// Henderson–Hasselbalch net charge. The C-terminal carboxyl is skipped when `amidated`.
pub fn net_charge(residues: &[u8], ph: f64, amidated: bool) -> f64 {
    let mut charge = positive_fraction(PKA_N_TERM, ph);
    if !amidated {
        charge -= negative_fraction(PKA_C_TERM, ph);
    }
    for &r in residues {
        if let Some(&(_, pka)) = PKA_POSITIVE.iter().find(|(aa, _)| *aa == r) {
            charge += positive_fraction(pka, ph);
        } else if let Some(&(_, pka)) = PKA_NEGATIVE.iter().find(|(aa, _)| *aa == r) {
            charge -= negative_fraction(pka, ph);
        }
    }
    charge
}

pub fn molecular_weight(residues: &[u8], amidated: bool) -> f64 {
    let mw: f64 = idx(residues).map(|i| RESIDUE_MASS[i]).sum::<f64>() + WATER_MASS;
    if amidated {
        mw + AMIDATION_DELTA
    } else {
        mw
    }
}

/// pH at which [`net_charge`] crosses zero, by bisection on [0, 14].
pub fn isoelectric_point(residues: &[u8], amidated: bool) -> f64 {
    let (mut lo, mut hi) = (0.0_f64, 14.0_f64);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if net_charge(residues, mid, amidated) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn eisenberg_mean(residues: &[u8]) -> f64 {
    idx(residues).map(|i| EISENBERG[i]).sum::<f64>() / residues.len() as f64
}

/// Helical-wheel hydrophobic moment `|Σ H_n (cos nδ, sin nδ)| / N` on the Eisenberg scale.
pub fn hydrophobic_moment(residues: &[u8], angle_deg: f64) -> f64 {
    let values: Vec<f64> = idx(residues).map(|i| EISENBERG[i]).collect();
    moment_of(&values, angle_deg)
}

/// Moment of an arbitrary per-position value profile.
pub fn moment_of(values: &[f64], angle_deg: f64) -> f64 {
    let delta = angle_deg.to_radians();
    let (mut c, mut s) = (0.0, 0.0);
    for (n, h) in values.iter().enumerate() {
        let theta = n as f64 * delta;
        c += h * theta.cos();
        s += h * theta.sin();
    }
    c.hypot(s) / values.len() as f64
}

pub fn gravy(residues: &[u8]) -> f64 {
    idx(residues).map(|i| KYTE_DOOLITTLE[i]).sum::<f64>() / residues.len() as f64
}

fn fraction_in(residues: &[u8], set: &[u8]) -> f64 {
    residues.iter().filter(|r| set.contains(r)).count() as f64 / residues.len() as f64
}

pub fn aromaticity(residues: &[u8]) -> f64 {
    fraction_in(residues, b"FWY")
}

pub fn hydrophobic_ratio(residues: &[u8]) -> f64 {
    fraction_in(residues, b"ACFILMVWY")
}

/// Ikai: `100 · (x_A + 2.9 x_V + 3.9 (x_I + x_L))` with mole fractions.
pub fn aliphatic_index(residues: &[u8]) -> f64 {
    let x = |aa: u8| fraction_in(residues, &[aa]);
    100.0 * (x(b'A') + 2.9 * x(b'V') + 3.9 * (x(b'I') + x(b'L')))
}

/// Guruprasad: `(10 / L) Σ DIWV(x_i, x_{i+1})`.
pub fn instability_index(residues: &[u8]) -> f64 {
    let table = diwv();
    let ids: Vec<usize> = idx(residues).collect();
    let sum: f64 = ids.windows(2).map(|w| table[w[0]][w[1]]).sum();
    10.0 * sum / residues.len() as f64
}

/// Descriptor panel, column order fixed for CSV output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescriptorVector {
    pub charge: f64,
    pub charge_density: f64,
    pub hydrophobicity_h: f64,
    pub hydrophobic_moment_uh: f64,
    pub hydrophobic_ratio: f64,
    pub aromaticity: f64,
    pub aliphatic_index: f64,
    pub instability_index: f64,
    pub isoelectric_point: f64,
    pub gravy: f64,
}

impl DescriptorVector {
    pub const COLUMNS: [&'static str; 10] = [
        "charge",
        "charge_density",
        "hydrophobicity_h",
        "hydrophobic_moment_uh",
        "hydrophobic_ratio",
        "aromaticity",
        "aliphatic_index",
        "instability_index",
        "isoelectric_point",
        "gravy",
    ];

    pub fn values(&self) -> [f64; 10] {
        [
            self.charge,
            self.charge_density,
            self.hydrophobicity_h,
            self.hydrophobic_moment_uh,
            self.hydrophobic_ratio,
            self.aromaticity,
            self.aliphatic_index,
            self.instability_index,
            self.isoelectric_point,
            self.gravy,
        ]
    }
}

pub fn descriptors(seq: &PeptideSequence, c_terminal_amidated: bool, ph: f64) -> DescriptorVector {
    let r = seq.residues();
    let charge = net_charge(r, ph, c_terminal_amidated);
    DescriptorVector {
        charge,
        charge_density: charge / molecular_weight(r, c_terminal_amidated),
        hydrophobicity_h: eisenberg_mean(r),
        hydrophobic_moment_uh: hydrophobic_moment(r, HELIX_ANGLE_DEG),
        hydrophobic_ratio: hydrophobic_ratio(r),
        aromaticity: aromaticity(r),
        aliphatic_index: aliphatic_index(r),
        instability_index: instability_index(r),
        isoelectric_point: isoelectric_point(r, c_terminal_amidated),
        gravy: gravy(r),
    }
}

/// Residue-indexed lookup used by property tests.
pub fn eisenberg_of(residue: u8) -> f64 {
    EISENBERG[AMINO_ACIDS.iter().position(|&a| a == residue).expect("natural residue")]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::validate_sequence;
    use proptest::prelude::*;

    fn panel(s: &str) -> DescriptorVector {
        descriptors(&validate_sequence(s).unwrap(), true, 7.0)
    }

    #[test]
    fn table_peptides_charge_and_moment() {
        let yi = panel("YLRLIRYMAKMI");
        assert!((yi.charge - 3.99).abs() < 0.15, "{}", yi.charge);
        assert!((yi.hydrophobicity_h - 0.08).abs() < 0.05);
        assert!((yi.hydrophobic_moment_uh - 0.79).abs() < 0.05);
        let fk = panel("FPLTWLKWWKWKK");
        assert!((fk.charge - 5.00).abs() < 0.15);
        assert!((fk.gravy + 0.854).abs() < 0.01, "{}", fk.gravy);
        assert!((fk.aliphatic_index - 60.0).abs() < 1.0);
        assert!((fk.instability_index - 15.45).abs() < 1.0, "{}", fk.instability_index);
        assert!(panel("EYLIEVRESAKMTQ").charge.abs() < 0.15);
    }

    #[test]
    fn moment_edge_cases() {
        assert!((hydrophobic_moment(b"W", 100.0) - 0.81).abs() < 1e-12);
        assert_eq!(moment_of(&[0.0; 12], 100.0), 0.0);
        let m = hydrophobic_moment(b"AAAA", 90.0);
        assert!(m.abs() < 1e-12, "four-fold symmetric sum cancels, got {m}");
    }

    #[test]
    fn amidation_shifts_charge_by_c_terminus() {
        let r = b"GLFDK";
        let delta = net_charge(r, 7.0, true) - net_charge(r, 7.0, false);
        assert!((delta - negative_fraction(PKA_C_TERM, 7.0)).abs() < 1e-12);
    }

    #[test]
    fn isoelectric_point_zero_charge() {
        let r = b"FPLTWLKWWKWKK";
        let pi = isoelectric_point(r, false);
        assert!(net_charge(r, pi, false).abs() < 1e-9);
        assert!(pi > 10.0);
    }

    proptest! {
        #[test]
        fn lysine_removal_is_additive(s in "[ACDEFGHILMNPQRSTVWY]{0,15}", t in "[ACDEFGHIKLMNPQRSTVWY]{0,8}") {
            let with_k = format!("{s}K{t}");
            let without = format!("{s}{t}");
            let d = net_charge(with_k.as_bytes(), 7.0, true) - net_charge(without.as_bytes(), 7.0, true);
            prop_assert!((d - positive_fraction(10.0, 7.0)).abs() < 1e-6);
            prop_assert!((d - 1.0).abs() < 0.01);
        }

        #[test]
        fn moment_two_ways_agree(s in "[ACDEFGHIKLMNPQRSTVWY]{1,25}", angle in 0.0f64..360.0) {
            // Complex accumulation as the second route.
            let delta = angle.to_radians();
            let mut acc = (0.0f64, 0.0f64);
            let mut rot = (1.0f64, 0.0f64);
            let step = (delta.cos(), delta.sin());
            let mut errs = 0.0f64;
            for (n, b) in s.bytes().enumerate() {
                let h = eisenberg_of(b);
                let exact = ((n as f64 * delta).cos(), (n as f64 * delta).sin());
                errs = errs.max((exact.0 - rot.0).abs() + (exact.1 - rot.1).abs());
                acc.0 += h * exact.0;
                acc.1 += h * exact.1;
                rot = (rot.0 * step.0 - rot.1 * step.1, rot.0 * step.1 + rot.1 * step.0);
            }
            let second = acc.0.hypot(acc.1) / s.len() as f64;
            prop_assert!((second - hydrophobic_moment(s.as_bytes(), angle)).abs() < 1e-12);
            prop_assert!(errs < 1e-9);
        }

        #[test]
        fn fractions_in_unit_interval(s in "[ACDEFGHIKLMNPQRSTVWY]{1,25}") {
            let d = panel(&s);
            for f in [d.aromaticity, d.hydrophobic_ratio] {
                prop_assert!((0.0..=1.0).contains(&f));
            }
            let mw = molecular_weight(s.as_bytes(), true);
            prop_assert!((d.charge_density - d.charge / mw).abs() < 1e-15);
        }
    }
}
