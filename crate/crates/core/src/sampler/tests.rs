use super::*;
use crate::autoencoder::tests::tiny_config;
use crate::corpus::{RawRecord, DEFAULT_MAX_SEQ_LENGTH};
use crate::stats::{chi_square_gof, ks_two_sample, simpson};
use proptest::prelude::*;

fn std_normal_1d() -> MixtureDensity {
    MixtureDensity {
        weights: vec![1.0],
        means: vec![vec![0.0]],
        vars: vec![vec![1.0]],
    }
}

fn clf(attribute: Attribute, weights: Vec<f64>, bias: f64) -> LatentClassifier {
    LatentClassifier { attribute, weights, bias }
}

fn phi(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn cfg(workers: usize, seed: u64) -> SamplerConfig {
    SamplerConfig { workers, max_attempts: None, seed }
}

/// Bin index over `[lo, hi]` split in `bins`, tails folded into the edge bins.
fn bin_of(z: f64, lo: f64, hi: f64, bins: usize) -> usize {
    (((z - lo) / (hi - lo) * bins as f64).floor().max(0.0) as usize).min(bins - 1)
}

#[test]
fn unit_acceptance_reproduces_the_mixture() {
    let g = MixtureDensity {
        weights: vec![0.4, 0.6],
        means: vec![vec![-2.0], vec![1.5]],
        vars: vec![vec![0.5], vec![1.0]],
    };
    let always = clf(Attribute::Amp, vec![0.0], 1e6);
    let s = class_sample(&g, &[always], &AttributeTarget::single(Attribute::Amp, true), 4000, &cfg(4, 1)).unwrap();
    assert_eq!(s.acceptance_rate, 1.0);
    assert_eq!(s.attempts, 4000);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let direct: Vec<f64> = (0..4000).map(|_| g.sample(&mut rng).z[0]).collect();
    let acc: Vec<f64> = s.accepted.iter().map(|a| a.z.z[0]).collect();
    let (_, p) = ks_two_sample(&acc, &direct);
    assert!(p > 0.01, "KS p = {p}");
}

#[test]
fn zero_acceptance_is_unrealizable() {
    let never = clf(Attribute::Amp, vec![0.0], -1e6);
    let c = SamplerConfig { workers: 2, max_attempts: Some(20_000), seed: 0 };
    match class_sample(&std_normal_1d(), &[never], &AttributeTarget::single(Attribute::Amp, true), 10, &c) {
        Err(SamplerError::UnrealizableAttributeCombination { attempts }) => assert_eq!(attempts, 20_000),
        other => panic!("expected unrealizable, got {other:?}"),
    }
}

#[test]
fn one_dimensional_tilted_density() {
    // Q = N(0, 1), q(a | z) = sigmoid(4z): E_Q[q] = 1/2 by symmetry.
    let c = clf(Attribute::Amp, vec![4.0], 0.0);
    let target = AttributeTarget::single(Attribute::Amp, true);
    let (lo, hi, bins) = (-3.0, 3.0, 20);
    let probs: Vec<f64> = (0..bins)
        .map(|b| {
            let a = if b == 0 { -12.0 } else { lo + (hi - lo) * b as f64 / bins as f64 };
            let e = if b == bins - 1 { 12.0 } else { lo + (hi - lo) * (b + 1) as f64 / bins as f64 };
            simpson(|z| phi(z) * sigmoid(4.0 * z), a, e, 2000)
        })
        .collect();
    let mass: f64 = probs.iter().sum();
    assert!((mass - 0.5).abs() < 1e-9);
    for seed in 0..5 {
        let s = class_sample(&std_normal_1d(), std::slice::from_ref(&c), &target, 20_000, &cfg(4, seed)).unwrap();
        let n = s.attempts as f64;
        let sd = (0.25 / n).sqrt();
        assert!((s.acceptance_rate - 0.5).abs() < 3.0 * sd, "rate {}", s.acceptance_rate);
        let mut counts = vec![0usize; bins];
        for a in &s.accepted {
            counts[bin_of(a.z.z[0], lo, hi, bins)] += 1;
        }
        let (_, p) = chi_square_gof(&counts, &probs);
        assert!(p > 0.01, "seed {seed}: chi-square p = {p}");
    }
}

/// Two-component 2-D mixture tilted by sigmoid(1.5 z0 - z1 + 0.5).
fn toy_2d() -> (MixtureDensity, LatentClassifier) {
    let g = MixtureDensity {
        weights: vec![0.3, 0.7],
        means: vec![vec![-1.0, 0.5], vec![1.0, -0.5]],
        vars: vec![vec![0.6, 1.2], vec![1.0, 0.4]],
    };
    (g, clf(Attribute::Toxic, vec![1.5, -1.0], 0.5))
}

fn toy_2d_cells(bins: usize, lo: f64, hi: f64) -> (Vec<f64>, f64) {
    let (g, c) = toy_2d();
    // Midpoint grid whose cell edges include every bin edge.
    let grid = 950;
    let (a, b) = (-9.5, 9.5);
    let h = (b - a) / grid as f64;
    let mut cells = vec![0.0; bins * bins];
    let mut total = 0.0;
    for i in 0..grid {
        for j in 0..grid {
            let z = [a + (i as f64 + 0.5) * h, a + (j as f64 + 0.5) * h];
            let w = g.logpdf(&z).exp() * c.prob(&z) * h * h;
            cells[bin_of(z[0], lo, hi, bins) * bins + bin_of(z[1], lo, hi, bins)] += w;
            total += w;
        }
    }
    (cells, total)
}

#[test]
fn two_dimensional_tilted_density() {
    let (g, c) = toy_2d();
    let (bins, lo, hi) = (5, -2.5, 2.5);
    let (cells, mass) = toy_2d_cells(bins, lo, hi);
    let target = AttributeTarget::single(Attribute::Toxic, true);
    for seed in 0..5 {
        let s = class_sample(&g, std::slice::from_ref(&c), &target, 20_000, &cfg(3, seed)).unwrap();
        let sd = (mass * (1.0 - mass) / s.attempts as f64).sqrt();
        assert!((s.acceptance_rate - mass).abs() < 3.0 * sd, "rate {} vs {mass}", s.acceptance_rate);
        let mut counts = vec![0usize; bins * bins];
        for a in &s.accepted {
            counts[bin_of(a.z.z[0], lo, hi, bins) * bins + bin_of(a.z.z[1], lo, hi, bins)] += 1;
        }
        let (_, p) = chi_square_gof(&counts, &cells);
        assert!(p > 0.01, "seed {seed}: chi-square p = {p}");
    }
}

#[test]
fn acceptance_rate_is_unbiased() {
    let (g, c) = toy_2d();
    let (_, mass) = toy_2d_cells(2, -1.0, 1.0);
    let target = AttributeTarget::single(Attribute::Toxic, true);
    let rates: Vec<f64> = (0..100)
        .map(|t| {
            // The budget binds, so each trial is a fixed number of proposals.
            let c2 = SamplerConfig { workers: 2, max_attempts: Some(5000), seed: t };
            class_sample(&g, std::slice::from_ref(&c), &target, 10_000, &c2).unwrap().acceptance_rate
        })
        .collect();
    let m = rates.iter().sum::<f64>() / 100.0;
    let sd = (rates.iter().map(|r| (r - m).powi(2)).sum::<f64>() / 99.0).sqrt();
    assert!((m - mass).abs() < 2.0 * sd / 10.0, "mean {m} vs {mass}");
}

#[test]
fn worker_streams_merge_deterministically() {
    let c = clf(Attribute::Amp, vec![4.0], 0.0);
    let target = AttributeTarget::single(Attribute::Amp, true);
    let one = class_sample(&std_normal_1d(), std::slice::from_ref(&c), &target, 3000, &cfg(1, 5)).unwrap();
    let four = class_sample(&std_normal_1d(), std::slice::from_ref(&c), &target, 3001, &cfg(4, 5)).unwrap();
    assert_eq!(one.accepted.len(), 3000);
    assert_eq!(four.accepted.len(), 3001);
    let per: Vec<usize> = (0..4).map(|w| four.accepted.iter().filter(|a| a.worker == w).count()).collect();
    assert_eq!(per, vec![751, 750, 750, 750]);
    assert!(four
        .accepted
        .windows(2)
        .all(|w| (w[0].worker, w[0].draw) < (w[1].worker, w[1].draw)));
    let a: Vec<f64> = one.accepted.iter().map(|x| x.z.z[0]).collect();
    let b: Vec<f64> = four.accepted.iter().map(|x| x.z.z[0]).collect();
    let (_, p) = ks_two_sample(&a, &b);
    assert!(p > 0.01, "KS p = {p}");
    let again = class_sample(&std_normal_1d(), std::slice::from_ref(&c), &target, 3001, &cfg(4, 5)).unwrap();
    assert_eq!(four, again);
}

#[test]
fn target_parsing_and_resolution() {
    let t: AttributeTarget = "amp=1, toxic=0".parse().unwrap();
    assert_eq!(t.targets, vec![(Attribute::Amp, true), (Attribute::Toxic, false)]);
    assert_eq!(t.to_string(), "amp=1,toxic=0");
    assert!(matches!("amp=1,amp=0".parse::<AttributeTarget>(), Err(SamplerError::DuplicateAttribute(_))));
    assert!("amp".parse::<AttributeTarget>().is_err());
    assert!("amp=2".parse::<AttributeTarget>().is_err());
    let c = clf(Attribute::Amp, vec![1.0], 0.0);
    assert!(matches!(
        class_sample(&std_normal_1d(), std::slice::from_ref(&c), &t, 5, &cfg(1, 0)),
        Err(SamplerError::MissingClassifier(Attribute::Toxic))
    ));
    let wide = clf(Attribute::Amp, vec![1.0, 2.0], 0.0);
    assert!(matches!(
        class_sample(&std_normal_1d(), &[wide], &AttributeTarget::single(Attribute::Amp, true), 5, &cfg(1, 0)),
        Err(SamplerError::DimMismatch { .. })
    ));
    let z = LatentPoint::new(vec![0.3]);
    let both = vec![c, clf(Attribute::Toxic, vec![-2.0], 0.1)];
    let p = acceptance_prob(&both, &t, &z).unwrap();
    assert!((p - sigmoid(0.3) * (1.0 - sigmoid(-0.6 + 0.1))).abs() < 1e-12);
}

#[test]
fn candidates_dedup_flag_and_write() {
    let mut ac = tiny_config();
    ac.max_seq_length = 8;
    ac.beam_size = 2;
    let model = Autoencoder::init(ac).unwrap();
    let g = MixtureDensity {
        weights: vec![1.0],
        means: vec![vec![0.0; 3]],
        vars: vec![vec![0.05; 3]],
    };
    let c = clf(Attribute::Amp, vec![1.0, 0.0, 0.0], 0.0);
    let target = AttributeTarget::single(Attribute::Amp, true);
    let probe = generate_candidates(&model, &g, std::slice::from_ref(&c), &target, 60, &cfg(2, 3), &LabeledCorpus::from_records(Vec::new(), 0, 25)).unwrap();
    assert_eq!(probe.accepted_points, 60);
    assert!(probe.candidates.len() <= 60);
    assert!(probe.candidates.iter().all(|c| c.novel));
    // Put the first decode in the training corpus: the rerun marks it not novel.
    let known = probe.candidates[0].sequence.to_string();
    let corpus = LabeledCorpus::from_records(
        vec![RawRecord { sequence: known.clone(), labels: Vec::new() }],
        0,
        DEFAULT_MAX_SEQ_LENGTH,
    );
    let set = generate_candidates(&model, &g, std::slice::from_ref(&c), &target, 60, &cfg(2, 3), &corpus).unwrap();
    let mut seen = std::collections::HashSet::new();
    for cand in &set.candidates {
        assert!(seen.insert(cand.sequence.to_string()));
        assert_eq!(cand.novel, cand.sequence.as_str() != known);
        assert!(cand.accept_prob > 0.0 && cand.accept_prob <= 1.0);
        assert!((cand.accept_prob - c.prob(&cand.origin_z.z)).abs() < 1e-15);
    }
    let mut fasta = Vec::new();
    write_fasta(&set.candidates, &mut fasta).unwrap();
    let text = String::from_utf8(fasta).unwrap();
    let first = text.lines().next().unwrap();
    assert!(first.starts_with(">cand_00001|") && first.ends_with("|not_novel"), "{first}");
    let mut csv_out = Vec::new();
    write_candidate_csv(&set.candidates, std::slice::from_ref(&c), &mut csv_out).unwrap();
    let csv_text = String::from_utf8(csv_out).unwrap();
    assert!(csv_text.starts_with("id,sequence,accept_prob,novel,z_norm,p_amp\n"));
    assert_eq!(csv_text.lines().count(), set.candidates.len() + 1);
}

#[test]
fn verdicts_are_append_only() {
    let mut c = Candidate {
        id: "cand_00001".into(),
        sequence: PeptideSequence::new("KKLL", 25).unwrap(),
        origin_z: LatentPoint::new(vec![0.0]),
        accept_prob: 0.5,
        novel: true,
        verdicts: BTreeMap::new(),
    };
    c.record("amp", 9.0, true).unwrap();
    assert!(matches!(c.record("amp", 1.0, false), Err(SamplerError::VerdictExists(_))));
    assert_eq!(c.verdicts["amp"], Verdict { score: 9.0, pass: true });
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn merge_preserves_counts(n in 0usize..200, workers in 1usize..7, seed in 0u64..100) {
        let c = clf(Attribute::Amp, vec![2.0], -0.5);
        let target = AttributeTarget::single(Attribute::Amp, true);
        if n == 0 {
            let s = class_sample(&std_normal_1d(), std::slice::from_ref(&c), &target, 0, &cfg(workers, seed)).unwrap();
            prop_assert!(s.accepted.is_empty());
        } else {
            let s = class_sample(&std_normal_1d(), std::slice::from_ref(&c), &target, n, &cfg(workers, seed)).unwrap();
            prop_assert_eq!(s.accepted.len(), n);
            prop_assert!(!s.exhausted);
            prop_assert!(s.accepted.iter().all(|a| a.accept_prob > 0.0 && a.accept_prob <= 1.0));
        }
    }
}
