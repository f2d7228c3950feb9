//! Overflow-safe scalar kernels shared by the loss and preference code.

/// Logistic sigmoid, evaluated in the branch that never exponentiates a
/// positive argument.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` computed as `max(x, 0) + ln(1 + e^{-|x|})`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `ln σ(x) = -softplus(-x)`.
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

/// `ln(Σ e^{x_i})` with max subtraction. Returns `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// `ln((1/n) Σ e^{x_i})`. The mean is taken before the log so a constant
/// input comes back exactly.
pub fn log_mean_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let mean = xs.iter().map(|&x| (x - max).exp()).sum::<f64>() / xs.len() as f64;
    max + mean.ln()
}

/// Softmax weights `e^{x_i} / Σ e^{x_j}`, stabilized by the max.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|&x| (x - lse).exp()).collect()
}

/// Bernoulli KL divergence `KL(p ‖ q) = p ln(p/q) + (1-p) ln((1-p)/(1-q))`
/// with the `0 ln 0 = 0` convention. `q` must lie in `(0, 1)`.
pub fn bernoulli_kl(p: f64, q: f64) -> f64 {
    fn term(a: f64, b: f64) -> f64 {
        if a == 0.0 {
            0.0
        } else {
            a * (a / b).ln()
        }
    }
    term(p, q) + term(1.0 - p, 1.0 - q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(1000.0) <= 1.0 && sigmoid(1000.0) > 1.0 - 1e-12);
        assert!(sigmoid(-1000.0) >= 0.0);
        assert!((sigmoid(3f64.ln()) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softplus_matches_naive_in_safe_range() {
        for i in -300..=300 {
            let x = i as f64 / 10.0;
            let naive = (1.0 + x.exp()).ln();
            assert!((softplus(x) - naive).abs() <= 1e-12 * naive.max(1.0), "x = {x}");
        }
        assert!((softplus(1e4) - 1e4).abs() < 1e-9);
        assert!(softplus(-1e4) >= 0.0 && softplus(-1e4) < 1e-300);
    }

    #[test]
    fn log_mean_exp_of_constant_is_constant() {
        assert!((log_mean_exp(&[2.5; 7]) - 2.5).abs() < 1e-15);
        assert!((log_mean_exp(&[1e9, 1e9]) - 1e9).abs() < 1e-6);
    }

    #[test]
    fn kl_boundary_values() {
        assert_eq!(bernoulli_kl(0.3, 0.3), 0.0);
        assert!((bernoulli_kl(1.0, 0.9) + 0.9f64.ln()).abs() < 1e-15);
        assert!((bernoulli_kl(0.0, 0.9) + 0.1f64.ln()).abs() < 1e-15);
    }
}
