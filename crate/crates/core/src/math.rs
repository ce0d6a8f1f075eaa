//! Log-domain numerics shared by the likelihood and sampling code.

use rand::Rng;
use statrs::function::gamma::ln_gamma;

/// Beyond this many terms the rising factorial switches from an explicit
/// sum of logs to a difference of `ln_gamma` values.
const RISING_SUM_LIMIT: u32 = 32;

/// `ln(a (a+1) ... (a+n-1)) = lnΓ(a+n) - lnΓ(a)` for `a > 0`.
pub fn ln_rising(a: f64, n: u32) -> f64 {
    if n <= RISING_SUM_LIMIT {
        // one log of the product; falls back if the product leaves f64 range
        let p: f64 = (0..n).map(|i| a + f64::from(i)).product();
        if p.is_normal() {
            p.ln()
        } else {
            (0..n).map(|i| (a + f64::from(i)).ln()).sum()
        }
    } else {
        ln_gamma(a + f64::from(n)) - ln_gamma(a)
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// Normalises log-weights into probabilities. Returns `None` when every
/// weight is `-inf` or any weight is NaN.
pub fn normalize_log_weights(log_weights: &[f64]) -> Option<Vec<f64>> {
    if log_weights.iter().any(|w| w.is_nan()) {
        return None;
    }
    let total = log_sum_exp(log_weights);
    if !total.is_finite() {
        return None;
    }
    Some(log_weights.iter().map(|&w| (w - total).exp()).collect())
}

/// Draws an index with probability proportional to `exp(log_weights[i])`.
pub fn sample_log_weights<R: Rng + ?Sized>(rng: &mut R, log_weights: &[f64]) -> Option<usize> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() || log_weights.iter().any(|w| w.is_nan()) {
        return None;
    }
    let mut cumulative = Vec::with_capacity(log_weights.len());
    let mut total = 0.0;
    for &w in log_weights {
        total += (w - max).exp();
        cumulative.push(total);
    }
    let u = rng.random::<f64>() * total;
    let idx = cumulative.partition_point(|&c| c <= u);
    // u < total always, but guard against a trailing zero-weight entry
    let idx = idx.min(log_weights.len() - 1);
    Some(last_positive_at_or_before(log_weights, idx))
}

/// Draws an index with probability proportional to nonnegative `weights`.
pub fn sample_weights<R: Rng + ?Sized>(rng: &mut R, weights: &[f64]) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || !total.is_finite() || weights.iter().any(|&w| w < 0.0) {
        return None;
    }
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return Some(i);
        }
    }
    weights.iter().rposition(|&w| w > 0.0)
}

fn last_positive_at_or_before(log_weights: &[f64], idx: usize) -> usize {
    if log_weights[idx] > f64::NEG_INFINITY {
        return idx;
    }
    log_weights[..idx]
        .iter()
        .rposition(|&w| w > f64::NEG_INFINITY)
        .unwrap_or(idx)
}
