//! Log-weight arithmetic and systematic resampling.

/// `ln sum exp(v)`, `-inf` for an empty or all `-inf` slice.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Normalized linear weights from log weights.
pub fn normalized(log_w: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(log_w);
    log_w.iter().map(|l| (l - lse).exp()).collect()
}

/// `(sum w)^2 / sum w^2`, computed from log weights.
pub fn ess(log_w: &[f64]) -> f64 {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return 0.0;
    }
    let (s1, s2) = log_w.iter().fold((0.0, 0.0), |(a, b), l| {
        let w = (l - max).exp();
        (a + w, b + w * w)
    });
    s1 * s1 / s2
}

/// Systematic resampling with a single uniform `u` in `[0, 1)`: offspring
/// `k` selects the particle whose cumulative weight interval contains
/// `(k + u) / N`. `weights` must sum to one.
pub fn systematic(weights: &[f64], u: f64) -> Vec<usize> {
    let n = weights.len();
    let mut out = Vec::with_capacity(n);
    let mut cum = 0.0;
    let mut j = 0;
    for k in 0..n {
        let target = (k as f64 + u) / n as f64;
        while j < n - 1 && cum + weights[j] <= target {
            cum += weights[j];
            j += 1;
        }
        out.push(j);
    }
    out
}
