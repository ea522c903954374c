use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_dim, LatentError};
use crate::autoencoder::LatentPoint;
use crate::tensor::{Checkpoint, CheckpointError, Tensor};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const CHUNK: usize = 512;

/// Mixture of diagonal-covariance Gaussians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureDensity {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub vars: Vec<Vec<f64>>,
}

impl MixtureDensity {
    pub fn component_count(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    /// Weights on the simplex, positive variances, consistent shapes.
    pub fn validate(&self) -> Result<(), LatentError> {
        let k = self.weights.len();
        let d = self.dim();
        let bad = |m: &str| Err(LatentError::Invalid(format!("mixture: {m}")));
        if k == 0 || d == 0 {
            return bad("empty");
        }
        if self.means.len() != k || self.vars.len() != k {
            return bad("component count mismatch");
        }
        if self.means.iter().chain(&self.vars).any(|r| r.len() != d) {
            return bad("ragged parameters");
        }
        if self.weights.iter().any(|&w| !(w >= 0.0)) || (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("weights off the simplex");
        }
        if self.vars.iter().flatten().any(|&v| !(v > 0.0 && v.is_finite())) {
            return bad("non-positive variance");
        }
        if self.means.iter().flatten().any(|v| !v.is_finite()) {
            return bad("non-finite mean");
        }
        Ok(())
    }

    /// `log w_k + log N(z; m_k, diag v_k)` for every component.
    fn component_terms(&self, z: &[f64], log_norm: &[f64], out: &mut [f64]) {
        for k in 0..self.weights.len() {
            let mut q = 0.0;
            for ((x, m), v) in z.iter().zip(&self.means[k]).zip(&self.vars[k]) {
                let d = x - m;
                q += d * d / v;
            }
            out[k] = log_norm[k] - 0.5 * q;
        }
    }

    fn log_norms(&self) -> Vec<f64> {
        let d = self.dim() as f64;
        self.weights
            .iter()
            .zip(&self.vars)
            .map(|(w, v)| w.ln() - 0.5 * (d * LN_2PI + v.iter().map(|x| x.ln()).sum::<f64>()))
            .collect()
    }

    pub fn logpdf(&self, z: &[f64]) -> f64 {
        let mut t = vec![0.0; self.weights.len()];
        self.component_terms(z, &self.log_norms(), &mut t);
        log_sum_exp(&t)
    }

    /// Mean log-density over `points`.
    pub fn mean_logpdf(&self, points: &[Vec<f64>]) -> f64 {
        if points.is_empty() {
            return f64::NAN;
        }
        let ln = self.log_norms();
        let total: f64 = points
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut t = vec![0.0; self.weights.len()];
                chunk
                    .iter()
                    .map(|z| {
                        self.component_terms(z, &ln, &mut t);
                        log_sum_exp(&t)
                    })
                    .sum::<f64>()
            })
            .collect::<Vec<_>>()
            .iter()
            .sum();
        total / points.len() as f64
    }

    pub fn sample(&self, rng: &mut impl Rng) -> LatentPoint {
        let k = WeightedIndex::new(&self.weights).expect("validated weights").sample(rng);
        LatentPoint::new(
            self.means[k]
                .iter()
                .zip(&self.vars[k])
                .map(|(m, v)| m + v.sqrt() * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        )
    }

    pub fn put_into(&self, ck: &mut Checkpoint, prefix: &str) {
        let (k, d) = (self.component_count(), self.dim());
        ck.tensors.insert(format!("{prefix}weights"), Tensor::row(self.weights.clone()));
        ck.tensors.insert(format!("{prefix}means"), Tensor::matrix(k, d, self.means.concat()));
        ck.tensors.insert(format!("{prefix}vars"), Tensor::matrix(k, d, self.vars.concat()));
    }

    pub fn take_from(ck: &Checkpoint, prefix: &str) -> Result<Self, LatentError> {
        let w = ck.tensor(&format!("{prefix}weights"))?;
        let m = ck.tensor(&format!("{prefix}means"))?;
        let v = ck.tensor(&format!("{prefix}vars"))?;
        let k = w.len();
        if m.rows() != k || v.rows() != k || m.cols() != v.cols() {
            return Err(CheckpointError::BadMeta {
                key: format!("{prefix}means"),
                reason: "mixture tensor shapes disagree".into(),
            }
            .into());
        }
        let rows = |t: &Tensor| (0..k).map(|r| t.row_slice(r).to_vec()).collect();
        let gmm = Self {
            weights: w.data().to_vec(),
            means: rows(m),
            vars: rows(v),
        };
        gmm.validate()?;
        Ok(gmm)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.set_meta("kind", "gmm");
        self.put_into(&mut ck, "gmm.");
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, LatentError> {
        let kind = ck.meta("kind")?;
        if kind != "gmm" {
            return Err(LatentError::Invalid(format!("checkpoint kind `{kind}` is not a mixture")));
        }
        Self::take_from(ck, "gmm.")
    }
}

pub fn gmm_logpdf(gmm: &MixtureDensity, z: &LatentPoint) -> f64 {
    gmm.logpdf(&z.z)
}

pub fn gmm_sample(gmm: &MixtureDensity, rng: &mut impl Rng) -> LatentPoint {
    gmm.sample(rng)
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmConfig {
    pub components: usize,
    pub var_floor: f64,
    pub max_iter: usize,
    /// Stop once the relative change in mean training log-likelihood drops below this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            components: 100,
            var_floor: 1e-4,
            max_iter: 500,
            tol: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmFit {
    pub gmm: MixtureDensity,
    /// Mean training log-likelihood at each iterate, initial parameters first.
    pub train_ll: Vec<f64>,
    /// Mean held-out log-likelihood at the same iterates (empty without held-out data).
    pub heldout_ll: Vec<f64>,
    pub converged: bool,
    /// Iterations at which a collapsed component was re-seeded.
    pub reseeds: Vec<usize>,
}

impl GmmFit {
    pub fn final_heldout_ll(&self) -> Option<f64> {
        self.heldout_ll.last().copied()
    }
}

struct Stats {
    n: Vec<f64>,
    s: Vec<Vec<f64>>,
    ss: Vec<Vec<f64>>,
    ll: f64,
}

impl Stats {
    fn zeros(k: usize, d: usize) -> Self {
        Self {
            n: vec![0.0; k],
            s: vec![vec![0.0; d]; k],
            ss: vec![vec![0.0; d]; k],
            ll: 0.0,
        }
    }

    fn merge(&mut self, o: &Stats) {
        self.ll += o.ll;
        for k in 0..self.n.len() {
            self.n[k] += o.n[k];
            for (a, b) in self.s[k].iter_mut().zip(&o.s[k]) {
                *a += b;
            }
            for (a, b) in self.ss[k].iter_mut().zip(&o.ss[k]) {
                *a += b;
            }
        }
    }
}

/// Responsibility-weighted sufficient statistics; chunk partials are summed in order so
/// the result does not depend on the thread count.
fn e_step(gmm: &MixtureDensity, points: &[Vec<f64>]) -> Stats {
    let (k, d) = (gmm.component_count(), gmm.dim());
    let ln = gmm.log_norms();
    let parts: Vec<Stats> = points
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut st = Stats::zeros(k, d);
            let mut t = vec![0.0; k];
            for z in chunk {
                gmm.component_terms(z, &ln, &mut t);
                let lse = log_sum_exp(&t);
                st.ll += lse;
                for j in 0..k {
                    let r = (t[j] - lse).exp();
                    if r == 0.0 {
                        continue;
                    }
                    st.n[j] += r;
                    for ((s, ss), x) in st.s[j].iter_mut().zip(st.ss[j].iter_mut()).zip(z) {
                        *s += r * x;
                        *ss += r * x * x;
                    }
                }
            }
            st
        })
        .collect();
    let mut total = Stats::zeros(k, d);
    for p in &parts {
        total.merge(p);
    }
    total
}

fn global_var(points: &[Vec<f64>], floor: f64) -> Vec<f64> {
    let d = points[0].len();
    let n = points.len() as f64;
    (0..d)
        .map(|j| {
            let m = points.iter().map(|p| p[j]).sum::<f64>() / n;
            (points.iter().map(|p| (p[j] - m).powi(2)).sum::<f64>() / n).max(floor)
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// k-means++ seeding of the means; shared global variance and uniform weights.
fn init(points: &[Vec<f64>], k: usize, floor: f64, rng: &mut ChaCha8Rng) -> MixtureDensity {
    let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
    let mut dist: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            WeightedIndex::new(&dist).expect("non-negative distances").sample(rng)
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[next].clone();
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centers.push(c);
    }
    let v = global_var(points, floor);
    MixtureDensity {
        weights: vec![1.0 / k as f64; k],
        vars: vec![v; k],
        means: centers,
    }
}

/// Fits a diagonal mixture by EM. The variance floor makes each M-step the constrained
/// maximiser, so the training likelihood never decreases between re-seeds.
pub fn fit_gmm(train: &[Vec<f64>], heldout: &[Vec<f64>], config: &GmmConfig) -> Result<GmmFit, LatentError> {
    let k = config.components;
    if k == 0 {
        return Err(LatentError::Invalid("component count must be positive".into()));
    }
    if train.len() < k {
        return Err(LatentError::TooFewPoints {
            points: train.len(),
            components: k,
        });
    }
    let d = train[0].len();
    for p in train.iter().chain(heldout) {
        check_dim(d, p.len())?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut gmm = init(train, k, config.var_floor, &mut rng);
    let n = train.len() as f64;
    let mut fit = GmmFit {
        gmm: gmm.clone(),
        train_ll: Vec::new(),
        heldout_ll: Vec::new(),
        converged: false,
        reseeds: Vec::new(),
    };
    let mut reseeded = vec![false; k];
    for iter in 0..=config.max_iter {
        let st = e_step(&gmm, train);
        let ll = st.ll / n;
        if let Some(&prev) = fit.train_ll.last() {
            if ((ll - prev) / prev.abs().max(f64::MIN_POSITIVE)).abs() < config.tol {
                fit.converged = true;
            }
        }
        fit.train_ll.push(ll);
        if !heldout.is_empty() {
            fit.heldout_ll.push(gmm.mean_logpdf(heldout));
        }
        if fit.converged || iter == config.max_iter {
            break;
        }
        let mut next = MixtureDensity {
            weights: vec![0.0; k],
            means: vec![vec![0.0; d]; k],
            vars: vec![vec![0.0; d]; k],
        };
        let mut collapsed = Vec::new();
        for j in 0..k {
            if st.n[j] < 1e-8 {
                collapsed.push(j);
                continue;
            }
            next.weights[j] = st.n[j] / n;
            for c in 0..d {
                let m = st.s[j][c] / st.n[j];
                next.means[j][c] = m;
                next.vars[j][c] = (st.ss[j][c] / st.n[j] - m * m).max(config.var_floor);
            }
        }
        if !collapsed.is_empty() {
            // Re-seed each collapsed component on the worst-explained training point.
            let mut scores: Vec<(f64, usize)> = train
                .par_iter()
                .enumerate()
                .map(|(i, p)| (gmm.logpdf(p), i))
                .collect();
            scores.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let v = global_var(train, config.var_floor);
            for (slot, &j) in collapsed.iter().enumerate() {
                if reseeded[j] {
                    return Err(LatentError::DegenerateComponent(j));
                }
                reseeded[j] = true;
                next.means[j] = train[scores[slot % scores.len()].1].clone();
                next.vars[j] = v.clone();
                next.weights[j] = 1.0 / n;
            }
            let total: f64 = next.weights.iter().sum();
            next.weights.iter_mut().for_each(|w| *w /= total);
            fit.reseeds.push(iter);
        }
        gmm = next;
    }
    fit.gmm = gmm;
    Ok(fit)
}
