use crate::num::Real;

pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 10.0;

/// `log(1 + e^x)` without overflow for large `x` or cancellation for small.
#[inline]
pub fn softplus<T: Real>(x: T) -> T {
    let thirty = T::lit(30.0);
    if x > thirty {
        x + (-x).exp().ln_1p()
    } else if x < -thirty {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Derivative of [`softplus`].
#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn clamp_log_var<T: Real>(lv: T) -> T {
    lv.max(T::lit(LOG_VAR_MIN)).min(T::lit(LOG_VAR_MAX))
}

#[inline]
fn in_clamp_range<T: Real>(lv: T) -> bool {
    lv > T::lit(LOG_VAR_MIN) && lv < T::lit(LOG_VAR_MAX)
}

/// KL divergence of the diagonal Gaussian `N(mu, exp(log_var))` from the
/// standard normal, accumulated in `f64`.
pub fn gaussian_kl<T: Real>(mu: &[T], log_var: &[T]) -> f64 {
    mu.iter()
        .zip(log_var)
        .map(|(&m, &lv)| {
            let (m, lv) = (m.as_f64(), clamp_log_var(lv).as_f64());
            0.5 * (m * m + lv.exp_m1() - lv)
        })
        .sum()
}

/// Gradients of [`gaussian_kl`] with respect to `mu` and `log_var`, added
/// into the output slices scaled by `scale`.
pub fn gaussian_kl_grad<T: Real>(
    mu: &[T],
    log_var: &[T],
    scale: T,
    d_mu: &mut [T],
    d_log_var: &mut [T],
) {
    let half = T::lit(0.5);
    for i in 0..mu.len() {
        d_mu[i] += scale * mu[i];
        if in_clamp_range(log_var[i]) {
            d_log_var[i] += scale * half * log_var[i].exp_m1();
        }
    }
}

/// Log density of `x` under the diagonal Gaussian `N(mu, exp(log_var))`.
pub fn gaussian_loglik<T: Real>(x: &[T], mu: &[T], log_var: &[T]) -> f64 {
    let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    x.iter()
        .zip(mu)
        .zip(log_var)
        .map(|((&x, &m), &lv)| {
            let lv = clamp_log_var(lv).as_f64();
            let d = x.as_f64() - m.as_f64();
            -half_log_2pi - 0.5 * lv - d * d / (2.0 * lv.exp())
        })
        .sum()
}

/// Gradient of the negative log-likelihood with respect to `mu` and
/// `log_var`, added into the output slices scaled by `scale`.
pub fn gaussian_nll_grad<T: Real>(
    x: &[T],
    mu: &[T],
    log_var: &[T],
    scale: T,
    d_mu: &mut [T],
    d_log_var: &mut [T],
) {
    let half = T::lit(0.5);
    for i in 0..x.len() {
        let lv = clamp_log_var(log_var[i]);
        let inv_var = (-lv).exp();
        let d = x[i] - mu[i];
        d_mu[i] += -scale * d * inv_var;
        if in_clamp_range(log_var[i]) {
            d_log_var[i] += scale * half * (T::one() - d * d * inv_var);
        }
    }
}

/// `mu + exp(log_var / 2) * eps`, elementwise.
pub fn reparameterize<T: Real>(mu: &[T], log_var: &[T], eps: &[T]) -> Vec<T> {
    let half = T::lit(0.5);
    mu.iter()
        .zip(log_var)
        .zip(eps)
        .map(|((&m, &lv), &e)| m + (half * clamp_log_var(lv)).exp() * e)
        .collect()
}
