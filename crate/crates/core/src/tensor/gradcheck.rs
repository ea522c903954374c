use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, ParameterSet, TensorError, Var};

const STEP: f64 = 1e-4;
/// Floor on the relative-error denominator so coordinates with vanishing gradient are
/// judged on absolute error.
const DENOM_FLOOR: f64 = 1e-7;

fn eval<F>(f: &F, params: &ParameterSet) -> Result<f64, TensorError>
where
    F: Fn(&mut Graph, &ParameterSet) -> Result<Var, TensorError>,
{
    let mut g = Graph::new();
    let loss = f(&mut g, params)?;
    let v = g.value(loss).item();
    if v.is_finite() {
        Ok(v)
    } else {
        Err(TensorError::NonFiniteLoss)
    }
}

/// Compares tape gradients with central differences (`h = 1e-4`) on `probe_count` seeded
/// random coordinates; returns the largest relative error.
pub fn grad_check<F>(
    f: F,
    params: &ParameterSet,
    probe_count: usize,
    seed: u64,
) -> Result<f64, TensorError>
where
    F: Fn(&mut Graph, &ParameterSet) -> Result<Var, TensorError>,
{
    let mut g = Graph::new();
    let loss = f(&mut g, params)?;
    if !g.value(loss).item().is_finite() {
        return Err(TensorError::NonFiniteLoss);
    }
    let grads = g.backward(loss);

    let coords: Vec<(String, usize)> = params
        .iter()
        .flat_map(|(name, t)| (0..t.len()).map(move |k| (name.clone(), k)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut probe = params.clone();
    if coords.is_empty() {
        return Ok(0.0);
    }
    for _ in 0..probe_count {
        let (name, k) = &coords[rng.random_range(0..coords.len())];
        let analytic = grads.get(name).map_or(0.0, |t| t.data()[*k]);
        let orig = params.get(name).expect("known name").data()[*k];
        probe.get_mut(name).expect("known name").data_mut()[*k] = orig + STEP;
        let up = eval(&f, &probe)?;
        probe.get_mut(name).expect("known name").data_mut()[*k] = orig - STEP;
        let down = eval(&f, &probe)?;
        probe.get_mut(name).expect("known name").data_mut()[*k] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        let denom = analytic.abs().max(numeric.abs()).max(DENOM_FLOOR);
        worst = worst.max((analytic - numeric).abs() / denom);
    }
    Ok(worst)
}
