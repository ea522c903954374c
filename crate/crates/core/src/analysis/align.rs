//! Affine-gap global alignment (Gotoh) with the PAM30 substitution matrix.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::corpus::residue_index;

const PAM30_TXT: &str = include_str!("../../data/pam30.txt");
const PAM30_SHA256: &str = "56978fa11cdd9356434efbd9ac8ddaf9ba60c09d91a0f919d3365a9fbda7331d";

pub const GAP_OPEN: i32 = -9;
pub const GAP_EXTEND: i32 = -1;

/// Symmetric 20×20 substitution scores indexed in alphabetical residue order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubstitutionMatrix {
    scores: [[i32; 20]; 20],
}

impl SubstitutionMatrix {
    pub fn pam30() -> &'static SubstitutionMatrix {
        static PAM30: OnceLock<SubstitutionMatrix> = OnceLock::new();
        PAM30.get_or_init(|| {
            super::verify_checksum(PAM30_TXT, PAM30_SHA256, "pam30.txt");
            SubstitutionMatrix::parse(PAM30_TXT).expect("vendored PAM30 parses")
        })
    }

    /// Parses a whitespace-separated matrix with a residue header row; `#` lines are comments.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header: Vec<usize> = lines
            .next()
            .ok_or("missing header")?
            .split_whitespace()
            .map(|c| residue_index(c.as_bytes()[0]).ok_or(format!("bad column `{c}`")))
            .collect::<Result<_, _>>()?;
        let mut scores = [[0i32; 20]; 20];
        let mut seen = 0;
        for line in lines {
            let mut fields = line.split_whitespace();
            let label = fields.next().ok_or("empty row")?;
            let row = residue_index(label.as_bytes()[0]).ok_or(format!("bad row `{label}`"))?;
            for (&col, v) in header.iter().zip(fields) {
                scores[row][col] = v.parse().map_err(|e| format!("{label}: {e}"))?;
            }
            seen += 1;
        }
        if seen != 20 || header.len() != 20 {
            return Err(format!("expected 20x20 matrix, got {seen}x{}", header.len()));
        }
        Ok(Self { scores })
    }

    pub fn score(&self, a: u8, b: u8) -> i32 {
        let i = residue_index(a).expect("natural residue");
        let j = residue_index(b).expect("natural residue");
        self.scores[i][j]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub score: f64,
    pub aligned_a: String,
    pub aligned_b: String,
    pub identity_pct: f64,
    pub positive_pct: f64,
    pub gap_pct: f64,
    /// Share of `a` residues aligned against a residue of `b`.
    pub coverage_pct: f64,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum State {
    Match,
    Delete,
    Insert,
}

const NEG_INF: i64 = i64::MIN / 4;

/// Global alignment of `a` against `b`. A gap of length `L` costs `open + (L-1)·extend`.
/// Ties in traceback prefer match, then delete (residue of `a` against a gap), then insert.
pub fn global_align(a: &[u8], b: &[u8]) -> AlignmentResult {
    align_with(a, b, SubstitutionMatrix::pam30(), GAP_OPEN, GAP_EXTEND)
}

pub fn align_with(
    a: &[u8],
    b: &[u8],
    matrix: &SubstitutionMatrix,
    gap_open: i32,
    gap_extend: i32,
) -> AlignmentResult {
    let (n, m) = (a.len(), b.len());
    let (open, ext) = (i64::from(gap_open), i64::from(gap_extend));
    let w = m + 1;
    let mut mm = vec![NEG_INF; (n + 1) * w];
    let mut dd = vec![NEG_INF; (n + 1) * w];
    let mut ii = vec![NEG_INF; (n + 1) * w];
    mm[0] = 0;
    for i in 1..=n {
        dd[i * w] = open + (i as i64 - 1) * ext;
    }
    for j in 1..=m {
        ii[j] = open + (j as i64 - 1) * ext;
    }
    for i in 1..=n {
        for j in 1..=m {
            let k = i * w + j;
            let diag = (i - 1) * w + (j - 1);
            let up = (i - 1) * w + j;
            let left = i * w + (j - 1);
            let s = i64::from(matrix.score(a[i - 1], b[j - 1]));
            mm[k] = s + mm[diag].max(dd[diag]).max(ii[diag]);
            dd[k] = (mm[up] + open).max(dd[up] + ext).max(ii[up] + open);
            ii[k] = (mm[left] + open).max(ii[left] + ext).max(dd[left] + open);
        }
    }

    let end = n * w + m;
    let best = mm[end].max(dd[end]).max(ii[end]);
    let mut state = if mm[end] == best {
        State::Match
    } else if dd[end] == best {
        State::Delete
    } else {
        State::Insert
    };

    let (mut i, mut j) = (n, m);
    let mut ra = Vec::with_capacity(n + m);
    let mut rb = Vec::with_capacity(n + m);
    while i > 0 || j > 0 {
        let k = i * w + j;
        match state {
            State::Match => {
                let s = i64::from(matrix.score(a[i - 1], b[j - 1]));
                let diag = (i - 1) * w + (j - 1);
                let prev = mm[k] - s;
                ra.push(a[i - 1]);
                rb.push(b[j - 1]);
                i -= 1;
                j -= 1;
                state = if mm[diag] == prev {
                    State::Match
                } else if dd[diag] == prev {
                    State::Delete
                } else {
                    State::Insert
                };
            }
            State::Delete => {
                let up = (i - 1) * w + j;
                let cur = dd[k];
                ra.push(a[i - 1]);
                rb.push(b'-');
                i -= 1;
                state = if mm[up] + open == cur {
                    State::Match
                } else if dd[up] + ext == cur {
                    State::Delete
                } else {
                    State::Insert
                };
            }
            State::Insert => {
                let left = i * w + (j - 1);
                let cur = ii[k];
                ra.push(b'-');
                rb.push(b[j - 1]);
                j -= 1;
                state = if mm[left] + open == cur {
                    State::Match
                } else if dd[left] + open == cur {
                    State::Delete
                } else {
                    State::Insert
                };
            }
        }
    }
    ra.reverse();
    rb.reverse();
    summarize(best as f64, ra, rb, n, matrix)
}

fn summarize(
    score: f64,
    ra: Vec<u8>,
    rb: Vec<u8>,
    query_len: usize,
    matrix: &SubstitutionMatrix,
) -> AlignmentResult {
    let cols = ra.len();
    let mut ident = 0usize;
    let mut positive = 0usize;
    let mut gaps = 0usize;
    for (&x, &y) in ra.iter().zip(&rb) {
        if x == b'-' || y == b'-' {
            gaps += 1;
            continue;
        }
        if x == y {
            ident += 1;
        }
        if matrix.score(x, y) > 0 {
            positive += 1;
        }
    }
    let aligned_query = cols - gaps;
    let pct = |k: usize, d: usize| if d == 0 { 0.0 } else { 100.0 * k as f64 / d as f64 };
    AlignmentResult {
        score,
        identity_pct: pct(ident, cols),
        positive_pct: pct(positive, cols),
        gap_pct: pct(gaps, cols),
        coverage_pct: pct(aligned_query, query_len),
        aligned_a: String::from_utf8(ra).expect("ascii"),
        aligned_b: String::from_utf8(rb).expect("ascii"),
    }
}
