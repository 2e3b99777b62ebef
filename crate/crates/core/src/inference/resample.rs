//! Systematic resampling and effective sample size.

use rand::Rng;

/// Effective sample size `1 / sum w^2` of normalized weights.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return 0.0;
    }
    let sq: f64 = weights.iter().map(|w| (w / total) * (w / total)).sum();
    1.0 / sq
}

/// Draws `count` ancestor indices proportionally to `weights` using a single
/// uniform offset. Weights need not be normalized. Returns `None` when the
/// total weight is not positive and finite.
pub fn systematic_indices<R: Rng + ?Sized>(
    weights: &[f64],
    count: usize,
    rng: &mut R,
) -> Option<Vec<usize>> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || !total.is_finite() || weights.is_empty() {
        return None;
    }
    let step = total / count as f64;
    let mut u = rng.random::<f64>() * step;
    let mut out = Vec::with_capacity(count);
    let mut cumulative = weights[0];
    let mut i = 0;
    for _ in 0..count {
        while u > cumulative && i + 1 < weights.len() {
            i += 1;
            cumulative += weights[i];
        }
        out.push(i);
        u += step;
    }
    Some(out)
}

/// True when all weights are equal (the common case right after resampling).
pub fn is_uniform(weights: &[f64]) -> bool {
    match weights.first() {
        Some(&w0) => weights.iter().all(|&w| w == w0),
        None => true,
    }
}
