use std::f64::consts::{FRAC_2_PI, PI};

use super::spec::KernelFamily;
use crate::error::{invalid, Result};

/// Tolerance beyond ±1 that is silently clamped before `asin`/`acos`.
const CLAMP_TOL: f64 = 1e-12;

pub(crate) fn check_pair(x: &[f64], x2: &[f64], dim: usize) -> Result<()> {
    if x.len() != dim || x2.len() != dim {
        return invalid(format!(
            "kernel input dimension mismatch: expected {dim}, got {} and {}",
            x.len(),
            x2.len()
        ));
    }
    if x.iter().chain(x2).any(|v| !v.is_finite()) {
        return invalid("kernel input contains a non-finite value");
    }
    Ok(())
}

fn check_params(lp: &[f64], expected: usize) -> Result<()> {
    if lp.len() != expected {
        return invalid(format!("expected {expected} kernel parameters, got {}", lp.len()));
    }
    if lp.iter().any(|v| !v.is_finite()) {
        return invalid("kernel parameter is not finite");
    }
    Ok(())
}

/// ARD squared-exponential kernel, `log_params = [log σ², log ℓ_1, …, log ℓ_d]`.
pub fn eval_ard_se(x: &[f64], x2: &[f64], log_params: &[f64]) -> Result<f64> {
    check_pair(x, x2, x.len())?;
    check_params(log_params, x.len() + 1)?;
    Ok(ard_se(x, x2, log_params, None))
}

/// Neural-network (arcsine) kernel, `log_params` = log diagonal of `Σ` (d + 1 entries).
pub fn eval_neural_net(x: &[f64], x2: &[f64], log_params: &[f64]) -> Result<f64> {
    check_pair(x, x2, x.len())?;
    check_params(log_params, x.len() + 1)?;
    Ok(neural_net(x, x2, log_params, None))
}

/// Periodic kernel on scalar inputs, `log_params = [log σ², log ℓ, log p]`.
pub fn eval_periodic(t: f64, t2: f64, log_params: &[f64]) -> Result<f64> {
    check_pair(&[t], &[t2], 1)?;
    check_params(log_params, 3)?;
    Ok(periodic(&[t], &[t2], log_params, None))
}

/// Arc-cosine kernel of order `q` composed over `layers` layers.
pub fn eval_arc_cosine(x: &[f64], x2: &[f64], q: u32, layers: u32) -> Result<f64> {
    check_pair(x, x2, x.len())?;
    if layers == 0 {
        return invalid("arc-cosine kernel needs at least one layer");
    }
    arc_cosine(x, x2, q, layers)
}

/// Evaluates one leaf. When `grad` is given it receives d k / d(log param).
pub(crate) fn eval_leaf(
    family: KernelFamily,
    x: &[f64],
    x2: &[f64],
    lp: &[f64],
    grad: Option<&mut [f64]>,
) -> Result<f64> {
    match family {
        KernelFamily::ArdSe => Ok(ard_se(x, x2, lp, grad)),
        KernelFamily::Periodic => Ok(periodic(x, x2, lp, grad)),
        KernelFamily::NeuralNet => Ok(neural_net(x, x2, lp, grad)),
        KernelFamily::ArcCosine { order, layers } => arc_cosine(x, x2, order, layers),
    }
}

fn ard_se(x: &[f64], x2: &[f64], lp: &[f64], grad: Option<&mut [f64]>) -> f64 {
    let signal_var = lp[0].exp();
    match grad {
        None => {
            let s: f64 = x
                .iter()
                .zip(x2)
                .zip(&lp[1..])
                .map(|((a, b), ll)| {
                    let d = a - b;
                    d * d / ll.exp()
                })
                .sum();
            signal_var * (-s).exp()
        }
        Some(g) => {
            let mut s = 0.0;
            for (j, (a, b)) in x.iter().zip(x2).enumerate() {
                let d = a - b;
                let q = d * d / lp[1 + j].exp();
                g[1 + j] = q;
                s += q;
            }
            let k = signal_var * (-s).exp();
            g[0] = k;
            for gj in &mut g[1..] {
                *gj *= k;
            }
            k
        }
    }
}

fn periodic(x: &[f64], x2: &[f64], lp: &[f64], grad: Option<&mut [f64]>) -> f64 {
    let r = x.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let signal_var = lp[0].exp();
    let ell2 = (2.0 * lp[1]).exp();
    let arg = PI * r / lp[2].exp();
    let s = arg.sin();
    let k = signal_var * (-2.0 * s * s / ell2).exp();
    if let Some(g) = grad {
        g[0] = k;
        g[1] = k * 4.0 * s * s / ell2;
        g[2] = k * 4.0 * s * arg.cos() * arg / ell2;
    }
    k
}

fn neural_net(x: &[f64], x2: &[f64], lp: &[f64], grad: Option<&mut [f64]>) -> f64 {
    // Augmented inputs [1, x]; Σ is diagonal.
    let aug = |v: &[f64], i: usize| if i == 0 { 1.0 } else { v[i - 1] };
    let mut cross = 0.0;
    let mut self_a = 0.0;
    let mut self_b = 0.0;
    for (i, ls) in lp.iter().enumerate() {
        let s = ls.exp();
        let (a, b) = (aug(x, i), aug(x2, i));
        cross += s * (a * b);
        self_a += s * (a * a);
        self_b += s * (b * b);
    }
    let na = 1.0 + 2.0 * self_a;
    let nb = 1.0 + 2.0 * self_b;
    let denom = (na * nb).sqrt();
    let u = clamp_unit(2.0 * cross / denom);
    let k = FRAC_2_PI * u.asin();
    if let Some(g) = grad {
        let dk_du = FRAC_2_PI / (1.0 - u * u).max(f64::MIN_POSITIVE).sqrt();
        for (i, ls) in lp.iter().enumerate() {
            let s = ls.exp();
            let (a, b) = (aug(x, i), aug(x2, i));
            let du = 2.0 * (a * b) / denom - u * ((a * a) / na + (b * b) / nb);
            g[i] = dk_du * du * s;
        }
    }
    k
}

fn clamp_unit(u: f64) -> f64 {
    debug_assert!(u.abs() <= 1.0 + CLAMP_TOL || u.is_nan(), "unit-interval argument {u} out of range");
    u.clamp(-1.0, 1.0)
}

/// Angular part `J_q(θ)` of the arc-cosine kernel,
/// `k_q(x, x') = ‖x‖^q ‖x'‖^q J_q(θ) / π`.
///
/// Uses `J_q(θ) = q! Σ_k C(q,k) cos^(q−k)θ ∫_0^(π−θ) cos^k ψ dψ`, valid for
/// every integer order.
pub fn arc_cosine_angular(order: u32, theta: f64) -> f64 {
    let n = order as usize;
    let a = PI - theta;
    let (sa, ca) = a.sin_cos();
    // I_k = ∫_0^a cos^k ψ dψ by the standard reduction formula.
    let mut partial = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let v = match k {
            0 => a,
            1 => sa,
            _ => ca.powi(k as i32 - 1) * sa / k as f64 + (k as f64 - 1.0) / k as f64 * partial[k - 2],
        };
        partial.push(v);
    }
    let c = theta.cos();
    let mut binom = 1.0;
    let mut sum = 0.0;
    for (k, ik) in partial.iter().enumerate() {
        sum += binom * c.powi((n - k) as i32) * ik;
        binom = binom * (n - k) as f64 / (k + 1) as f64;
    }
    let factorial: f64 = (1..=n).map(|i| i as f64).product();
    factorial * sum
}

fn arc_cosine(x: &[f64], x2: &[f64], q: u32, layers: u32) -> Result<f64> {
    let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let ny = x2.iter().map(|v| v * v).sum::<f64>().sqrt();
    if q == 0 && (nx == 0.0 || ny == 0.0) {
        return invalid("order-0 arc-cosine kernel is undefined for a zero-norm input");
    }
    let qf = q as f64;
    let j0 = arc_cosine_angular(q, 0.0);

    let angle = |cross: f64, norm_prod: f64| {
        if norm_prod > 0.0 {
            clamp_unit(cross / norm_prod).acos()
        } else {
            0.0
        }
    };

    let nprod = nx * ny;
    // Kahan's form 2·atan2(‖x̂ − ŷ‖, ‖x̂ + ŷ‖) stays accurate near θ = 0 and π.
    let theta0 = if nprod > 0.0 {
        let (mut diff, mut sum) = (0.0, 0.0);
        for (a, b) in x.iter().zip(x2) {
            let (ua, ub) = (a / nx, b / ny);
            diff += (ua - ub) * (ua - ub);
            sum += (ua + ub) * (ua + ub);
        }
        2.0 * diff.sqrt().atan2(sum.sqrt())
    } else {
        0.0
    };
    let mut kxy = nprod.powi(q as i32) * arc_cosine_angular(q, theta0) / PI;
    let mut kxx = nx.powi(2 * q as i32) * j0 / PI;
    let mut kyy = ny.powi(2 * q as i32) * j0 / PI;
    for _ in 1..layers {
        let norm_prod = (kxx * kyy).sqrt();
        let theta = angle(kxy, norm_prod);
        kxy = (kxx * kyy).powf(qf / 2.0) * arc_cosine_angular(q, theta) / PI;
        kxx = kxx.powi(q as i32) * j0 / PI;
        kyy = kyy.powi(q as i32) * j0 / PI;
    }
    Ok(kxy)
}
