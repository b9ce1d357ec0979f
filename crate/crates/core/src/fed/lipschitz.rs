use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::optim::Objective;

const SAFETY_FACTOR: f64 = 2.0;
const FLOOR: f64 = 1e-8;

/// Gradient Lipschitz estimate of `objective` near `z`.
///
/// Draws `n_probes` points uniformly from the ball of `radius` around `z` and
/// returns twice the largest pairwise ratio `‖∇l(a) − ∇l(b)‖ / ‖a − b‖`,
/// never less than 1e-8.
pub fn estimate_lipschitz<O: Objective + ?Sized>(
    objective: &O,
    z: &[f64],
    n_probes: usize,
    radius: f64,
    seed: u64,
) -> Result<f64> {
    if n_probes < 2 {
        return invalid("lipschitz estimation needs at least two probes");
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return invalid("probe radius must be positive");
    }
    let p = z.len();
    if p == 0 || p != objective.dim() {
        return invalid("probe center does not match the objective dimension");
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut probes = Vec::with_capacity(n_probes);
    for _ in 0..n_probes {
        let dir: Vec<f64> = (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        let r = radius * rng.gen::<f64>().powf(1.0 / p as f64);
        let point: Vec<f64> = z.iter().zip(&dir).map(|(c, d)| c + r * d / norm).collect();
        let (_, g) = objective
            .value_and_grad(&point)
            .map_err(|e| Error::Optimization(format!("lipschitz estimation: gradient failed at a probe: {e}")))?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Optimization("lipschitz estimation: non-finite gradient at a probe".into()));
        }
        probes.push((point, g));
    }
    let mut best: f64 = 0.0;
    for (i, (a, ga)) in probes.iter().enumerate() {
        for (b, gb) in &probes[i + 1..] {
            let dx = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            if dx > 0.0 {
                let dg = ga.iter().zip(gb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                best = best.max(dg / dx);
            }
        }
    }
    Ok((SAFETY_FACTOR * best).max(FLOOR))
}
