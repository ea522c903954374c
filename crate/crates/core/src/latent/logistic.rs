use argmin::core::{CostFunction, Executor, Gradient, State, TerminationReason};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::LBFGS;
use serde::{Deserialize, Serialize};

use super::{check_dim, LatentError};
use crate::autoencoder::LatentPoint;
use crate::corpus::Attribute;
use crate::tensor::{Checkpoint, Tensor};

/// Logits beyond this magnitude are clamped, keeping probabilities strictly inside (0, 1).
const LOGIT_CLAMP: f64 = 30.0;

/// Linear logistic model `q(a = 1 | z) = sigmoid(w·z + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentClassifier {
    pub attribute: Attribute,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LatentClassifier {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn logit(&self, z: &[f64]) -> f64 {
        debug_assert_eq!(z.len(), self.weights.len());
        self.bias + self.weights.iter().zip(z).map(|(w, x)| w * x).sum::<f64>()
    }

    /// Probability that the attribute is present.
    pub fn prob(&self, z: &[f64]) -> f64 {
        sigmoid(self.logit(z).clamp(-LOGIT_CLAMP, LOGIT_CLAMP))
    }

    /// Probability of the attribute taking `value`.
    pub fn prob_of(&self, z: &[f64], value: bool) -> f64 {
        let p = self.prob(z);
        if value {
            p
        } else {
            1.0 - p
        }
    }

    pub fn accuracy(&self, xs: &[&[f64]], ys: &[bool]) -> f64 {
        if xs.is_empty() {
            return f64::NAN;
        }
        let hits = xs.iter().zip(ys).filter(|(x, &y)| (self.logit(x) > 0.0) == y).count();
        hits as f64 / xs.len() as f64
    }

    pub fn put_into(&self, ck: &mut Checkpoint, prefix: &str) {
        ck.set_meta(&format!("{prefix}attribute"), self.attribute.name());
        ck.tensors.insert(format!("{prefix}w"), Tensor::row(self.weights.clone()));
        ck.tensors.insert(format!("{prefix}b"), Tensor::scalar(self.bias));
    }

    pub fn take_from(ck: &Checkpoint, prefix: &str) -> Result<Self, LatentError> {
        let attribute: Attribute = ck
            .meta(&format!("{prefix}attribute"))?
            .parse()
            .map_err(|s| LatentError::Invalid(format!("unknown attribute `{s}`")))?;
        let clf = Self {
            attribute,
            weights: ck.tensor(&format!("{prefix}w"))?.data().to_vec(),
            bias: ck.tensor(&format!("{prefix}b"))?.item(),
        };
        if !clf.bias.is_finite() || clf.weights.iter().any(|w| !w.is_finite()) {
            return Err(LatentError::Invalid("non-finite classifier parameters".into()));
        }
        Ok(clf)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.set_meta("kind", "latent_classifier");
        self.put_into(&mut ck, "clf.");
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, LatentError> {
        let kind = ck.meta("kind")?;
        if kind != "latent_classifier" {
            return Err(LatentError::Invalid(format!("checkpoint kind `{kind}` is not a latent classifier")));
        }
        Self::take_from(ck, "clf.")
    }
}

pub fn classifier_prob(clf: &LatentClassifier, z: &LatentPoint) -> Result<f64, LatentError> {
    check_dim(clf.dim(), z.dim())?;
    Ok(clf.prob(&z.z))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticConfig {
    /// Inverse L2 strength: minimises `C·Σ logloss + ½‖w‖²`, bias unpenalised.
    pub c: f64,
    pub max_iter: u64,
    /// Gradient-norm target on the objective divided by the sample count.
    pub grad_tol: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            max_iter: 300,
            grad_tol: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierFit {
    pub classifier: LatentClassifier,
    pub iterations: u64,
    pub grad_norm: f64,
    pub converged: bool,
    pub train_accuracy: f64,
}

/// Objective scaled by `1/n`; parameters are `[w..., b]`.
pub(crate) struct Problem<'a> {
    pub xs: &'a [&'a [f64]],
    pub ys: &'a [bool],
    pub c: f64,
}

impl Problem<'_> {
    pub(crate) fn value_grad(&self, p: &[f64]) -> (f64, Vec<f64>) {
        let d = p.len() - 1;
        let n = self.xs.len() as f64;
        let mut f = 0.0;
        let mut g = vec![0.0; d + 1];
        for (x, &y) in self.xs.iter().zip(self.ys) {
            let s = p[d] + p[..d].iter().zip(x.iter()).map(|(w, v)| w * v).sum::<f64>();
            // logloss = softplus(s) - y·s, derivative sigmoid(s) - y
            f += softplus(s) - if y { s } else { 0.0 };
            let r = sigmoid(s) - if y { 1.0 } else { 0.0 };
            for (gj, xj) in g[..d].iter_mut().zip(x.iter()) {
                *gj += r * xj;
            }
            g[d] += r;
        }
        f *= self.c;
        g.iter_mut().for_each(|v| *v *= self.c);
        let reg: f64 = p[..d].iter().map(|w| w * w).sum();
        f += 0.5 * reg;
        for j in 0..d {
            g[j] += p[j];
        }
        (f / n, g.into_iter().map(|v| v / n).collect())
    }
}

impl CostFunction for Problem<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> Result<f64, argmin::core::Error> {
        Ok(self.value_grad(p).0)
    }
}

impl Gradient for Problem<'_> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, p: &Self::Param) -> Result<Vec<f64>, argmin::core::Error> {
        Ok(self.value_grad(p).1)
    }
}

/// Largest relative error between the analytic gradient of the fitting objective at
/// `params = [w..., b]` and central differences.
pub fn logistic_grad_check(xs: &[&[f64]], ys: &[bool], c: f64, params: &[f64]) -> f64 {
    let pr = Problem { xs, ys, c };
    let (_, g) = pr.value_grad(params);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for j in 0..params.len() {
        let mut a = params.to_vec();
        let mut b = params.to_vec();
        a[j] += h;
        b[j] -= h;
        let fd = (pr.value_grad(&a).0 - pr.value_grad(&b).0) / (2.0 * h);
        worst = worst.max((fd - g[j]).abs() / fd.abs().max(g[j].abs()).max(1e-7));
    }
    worst
}

/// L2-regularised logistic regression fitted with L-BFGS from zero.
pub fn fit_latent_classifier(
    attribute: Attribute,
    xs: &[&[f64]],
    ys: &[bool],
    config: &LogisticConfig,
) -> Result<ClassifierFit, LatentError> {
    if xs.is_empty() {
        return Err(LatentError::Empty);
    }
    if xs.len() != ys.len() {
        return Err(LatentError::Invalid("one label per point".into()));
    }
    let d = xs[0].len();
    for x in xs {
        check_dim(d, x.len())?;
    }
    if ys.iter().all(|&y| y) || ys.iter().all(|&y| !y) {
        return Err(LatentError::SingleClass(attribute));
    }
    if !(config.c > 0.0) {
        return Err(LatentError::Invalid("C must be positive".into()));
    }
    let problem = Problem { xs, ys, c: config.c };
    let solver = LBFGS::new(MoreThuenteLineSearch::new(), 10)
        .with_tolerance_grad(config.grad_tol)
        .and_then(|s| s.with_tolerance_cost(0.0))
        .map_err(|e| LatentError::Optimizer(e.to_string()))?;
    let res = Executor::new(problem, solver)
        .configure(|s| s.param(vec![0.0; d + 1]).max_iters(config.max_iter))
        .timer(false)
        .run()
        .map_err(|e| LatentError::Optimizer(e.to_string()))?;
    let state = res.state();
    let p = state
        .get_best_param()
        .cloned()
        .ok_or_else(|| LatentError::Optimizer("no parameters returned".into()))?;
    let iterations = state.get_iter();
    let reason = state.get_termination_reason().cloned();
    let problem = Problem { xs, ys, c: config.c };
    let grad_norm = problem.value_grad(&p).1.iter().map(|v| v * v).sum::<f64>().sqrt();
    let classifier = LatentClassifier {
        attribute,
        weights: p[..d].to_vec(),
        bias: p[d],
    };
    Ok(ClassifierFit {
        train_accuracy: classifier.accuracy(xs, ys),
        converged: grad_norm < config.grad_tol || matches!(reason, Some(TerminationReason::SolverConverged)),
        grad_norm,
        iterations,
        classifier,
    })
}
