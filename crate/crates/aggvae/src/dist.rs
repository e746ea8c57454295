//! Log-density helpers shared by the prior constructors and the posterior
//! evaluators. All densities include their normalizing constants so values
//! are comparable across models.

use statrs::function::gamma::ln_gamma;

/// Inverse-gamma log-density with shape `alpha` and scale `beta`.
/// Returns negative infinity outside the support.
pub fn inv_gamma_logpdf(x: f64, alpha: f64, beta: f64) -> f64 {
    if x <= 0.0 || !x.is_finite() {
        return f64::NEG_INFINITY;
    }
    alpha * beta.ln() - ln_gamma(alpha) - (alpha + 1.0) * x.ln() - beta / x
}

/// Half-normal log-density with scale `a` (the standard deviation of the
/// underlying zero-mean normal). Support is x >= 0.
pub fn half_normal_logpdf(x: f64, a: f64) -> f64 {
    if x < 0.0 || !x.is_finite() {
        return f64::NEG_INFINITY;
    }
    0.5 * (2.0 / std::f64::consts::PI).ln() - a.ln() - x * x / (2.0 * a * a)
}

/// Normal log-density.
pub fn normal_logpdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * (2.0 * std::f64::consts::PI).ln() - sd.ln() - 0.5 * z * z
}

/// log(n choose k) via log-gamma.
pub fn ln_choose(n: u64, k: u64) -> f64 {
    debug_assert!(k <= n);
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Numerically stable log(1 + exp(x)).
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
