use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ScreenConfig, ScreenError};

/// Contact counts between a peptide's positive residues and membrane beads over a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactSeries {
    pub sequence_id: String,
    /// `(time_ns, contacts)` with strictly increasing times.
    pub frames: Vec<(f64, u32)>,
}

impl ContactSeries {
    pub fn new(sequence_id: impl Into<String>, frames: Vec<(f64, u32)>) -> Result<Self, ScreenError> {
        let id = sequence_id.into();
        let bad = |m: String| Err(ScreenError::BadContactSeries { id: id.clone(), reason: m });
        if frames.len() < 2 {
            return bad("needs at least two frames".into());
        }
        if let Some(w) = frames.windows(2).find(|w| !(w[1].0 > w[0].0)) {
            return bad(format!("time {} does not increase past {}", w[1].0, w[0].0));
        }
        if frames.iter().any(|f| !f.0.is_finite()) {
            return bad("non-finite time".into());
        }
        Ok(Self { sequence_id: id, frames })
    }

    pub fn total_sim_time_ns(&self) -> f64 {
        self.frames[self.frames.len() - 1].0 - self.frames[0].0
    }

    /// Reads a `time_ns,contacts` CSV.
    pub fn from_csv(sequence_id: &str, path: &Path) -> Result<Self, ScreenError> {
        #[derive(Deserialize)]
        struct Row {
            time_ns: f64,
            contacts: u32,
        }
        let mut rdr = csv::Reader::from_path(path)?;
        let frames = rdr
            .deserialize::<Row>()
            .map(|r| r.map(|r| (r.time_ns, r.contacts)))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(sequence_id, frames)
    }
}

/// Loads every series listed in a `sequence_id,path` manifest; relative paths resolve
/// against the manifest's directory.
pub fn load_contact_manifest(path: &Path) -> Result<Vec<ContactSeries>, ScreenError> {
    #[derive(Deserialize)]
    struct Row {
        sequence_id: String,
        path: String,
    }
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize::<Row>()
        .map(|r| {
            let r = r?;
            ContactSeries::from_csv(&r.sequence_id, &dir.join(&r.path))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactStats {
    pub binding_time_ns: f64,
    pub mean_contacts: f64,
    /// Population variance over the frames from binding onward.
    pub var_contacts: f64,
    pub frames: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ContactOutcome {
    Bound(ContactStats),
    NotBound,
}

/// Binding is the first frame with contacts after which at most `gap_tolerance` of the
/// remaining frames are contact-free. Mean and variance cover that frame and all later ones.
pub fn contact_stats(series: &ContactSeries, gap_tolerance: f64) -> ContactOutcome {
    let n = series.frames.len();
    let mut zeros_after = vec![0usize; n + 1];
    for i in (0..n).rev() {
        zeros_after[i] = zeros_after[i + 1] + usize::from(series.frames[i].1 == 0);
    }
    let start = (0..n).find(|&i| {
        series.frames[i].1 > 0 && zeros_after[i] as f64 <= gap_tolerance * (n - i) as f64
    });
    let Some(i) = start else {
        return ContactOutcome::NotBound;
    };
    let window = &series.frames[i..];
    let k = window.len() as f64;
    let mean = window.iter().map(|f| f.1 as f64).sum::<f64>() / k;
    let var = window.iter().map(|f| (f.1 as f64 - mean).powi(2)).sum::<f64>() / k;
    ContactOutcome::Bound(ContactStats {
        binding_time_ns: series.frames[i].0,
        mean_contacts: mean,
        var_contacts: var,
        frames: window.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimReason {
    NotBound,
    BindingTime,
    MeanContacts,
    ContactVariance,
}

impl fmt::Display for SimReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SimReason::NotBound => "not_bound",
            SimReason::BindingTime => "binding_time",
            SimReason::MeanContacts => "mean_contacts",
            SimReason::ContactVariance => "contact_variance",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimVerdict {
    pub pass: bool,
    /// Every violated rule, in rule order.
    pub reasons: Vec<SimReason>,
}

/// Passes when binding happens before `binding_time_max_ns`, mean contacts reach
/// `contact_mean_min` and the variance stays at or below `contact_var_max`.
pub fn simscreen_filter(outcome: &ContactOutcome, config: &ScreenConfig) -> SimVerdict {
    let reasons = match outcome {
        ContactOutcome::NotBound => vec![SimReason::NotBound],
        ContactOutcome::Bound(s) => {
            let mut r = Vec::new();
            if !(s.binding_time_ns < config.binding_time_max_ns) {
                r.push(SimReason::BindingTime);
            }
            if !(s.mean_contacts >= config.contact_mean_min) {
                r.push(SimReason::MeanContacts);
            }
            if !(s.var_contacts <= config.contact_var_max) {
                r.push(SimReason::ContactVariance);
            }
            r
        }
    };
    SimVerdict {
        pass: reasons.is_empty(),
        reasons,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(values: &[u32]) -> ContactSeries {
        ContactSeries::new("s", values.iter().enumerate().map(|(t, &c)| (t as f64, c)).collect()).unwrap()
    }

    fn stats(b: f64, m: f64, v: f64) -> ContactOutcome {
        ContactOutcome::Bound(ContactStats {
            binding_time_ns: b,
            mean_contacts: m,
            var_contacts: v,
            frames: 100,
        })
    }

    #[test]
    fn constant_and_empty_series() {
        match contact_stats(&series(&[6; 50]), 0.05) {
            ContactOutcome::Bound(s) => {
                assert_eq!((s.binding_time_ns, s.mean_contacts, s.var_contacts), (0.0, 6.0, 0.0));
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(contact_stats(&series(&[0; 50]), 0.05), ContactOutcome::NotBound);
    }

    #[test]
    fn transient_contacts_do_not_count_as_binding() {
        // Early touch at t=2, then contact-free until t=20.
        let mut v = vec![0u32; 40];
        v[2] = 3;
        for x in &mut v[20..] {
            *x = 5;
        }
        match contact_stats(&series(&v), 0.05) {
            ContactOutcome::Bound(s) => assert_eq!(s.binding_time_ns, 20.0),
            other => panic!("{other:?}"),
        }
        // A single gap in 40 bound frames (2.5%) is tolerated.
        let mut w = vec![0u32; 10];
        w.extend(std::iter::repeat_n(4, 40));
        w[30] = 0;
        match contact_stats(&series(&w), 0.05) {
            ContactOutcome::Bound(s) => {
                assert_eq!(s.binding_time_ns, 10.0);
                assert!((s.mean_contacts - 39.0 * 4.0 / 40.0).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rule_examples() {
        let cfg = ScreenConfig::default();
        assert!(simscreen_filter(&stats(100.0, 8.0, 1.0), &cfg).pass);
        assert_eq!(simscreen_filter(&stats(600.0, 8.0, 1.0), &cfg).reasons, vec![SimReason::BindingTime]);
        assert_eq!(simscreen_filter(&stats(100.0, 4.9, 1.0), &cfg).reasons, vec![SimReason::MeanContacts]);
        assert_eq!(simscreen_filter(&stats(100.0, 8.0, 2.1), &cfg).reasons, vec![SimReason::ContactVariance]);
        assert_eq!(simscreen_filter(&stats(500.0, 8.0, 2.0), &cfg).reasons, vec![SimReason::BindingTime]);
        assert!(simscreen_filter(&stats(499.9, 5.0, 2.0), &cfg).pass);
        assert_eq!(simscreen_filter(&ContactOutcome::NotBound, &cfg).reasons, vec![SimReason::NotBound]);
    }

    #[test]
    fn series_validation() {
        assert!(ContactSeries::new("x", vec![(0.0, 1), (0.0, 2)]).is_err());
        assert!(ContactSeries::new("x", vec![(0.0, 1)]).is_err());
        assert!(ContactSeries::new("x", vec![(0.0, 1), (f64::NAN, 2)]).is_err());
    }

    proptest! {
        #[test]
        fn time_rescaling(values in proptest::collection::vec(0u32..9, 2..80), k in 0.1f64..20.0) {
            let a = series(&values);
            let b = ContactSeries::new("s", a.frames.iter().map(|&(t, c)| (t * k, c)).collect()).unwrap();
            match (contact_stats(&a, 0.05), contact_stats(&b, 0.05)) {
                (ContactOutcome::Bound(x), ContactOutcome::Bound(y)) => {
                    prop_assert_eq!(x.mean_contacts, y.mean_contacts);
                    prop_assert_eq!(x.var_contacts, y.var_contacts);
                    prop_assert!((y.binding_time_ns - k * x.binding_time_ns).abs() < 1e-9 * (1.0 + y.binding_time_ns));
                }
                (ContactOutcome::NotBound, ContactOutcome::NotBound) => {}
                other => prop_assert!(false, "mismatch {:?}", other),
            }
        }
    }
}
