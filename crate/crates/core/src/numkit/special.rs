use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Stirling remainder `ln(m!) - (m + 1/2) ln m + m - ln sqrt(2 pi)`.
fn stirlerr(m: f64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    if m <= 15.0 {
        return ln_gamma(m + 1.0) - (m + 0.5) * m.ln() + m - LN_SQRT_2PI;
    }
    let m2 = m * m;
    if m > 500.0 {
        return (S0 - S1 / m2) / m;
    }
    if m > 80.0 {
        return (S0 - (S1 - S2 / m2) / m2) / m;
    }
    if m > 35.0 {
        return (S0 - (S1 - (S2 - S3 / m2) / m2) / m2) / m;
    }
    (S0 - (S1 - (S2 - (S3 - S4 / m2) / m2) / m2) / m2) / m
}

/// Deviance term `x ln(x/mu) + mu - x`, accurate when `x` is close to `mu`.
fn bd0(x: f64, mu: f64) -> f64 {
    if (x - mu).abs() < 0.1 * (x + mu) {
        let v = (x - mu) / (x + mu);
        let mut s = (x - mu) * v;
        let mut ej = 2.0 * x * v;
        let v2 = v * v;
        let mut j = 1.0;
        loop {
            ej *= v2;
            let s1 = s + ej / (2.0 * j + 1.0);
            if s1 == s {
                return s1;
            }
            s = s1;
            j += 1.0;
        }
    }
    x * (x / mu).ln() + mu - x
}

/// `ln(lambda^m e^{-lambda} / m!)`.
///
/// Uses the saddle-point form so that the result stays accurate when both
/// `lambda` and `m` are large.
pub fn log_poisson_pmf(lambda: f64, m: u64) -> Result<f64> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidInput(format!(
            "Poisson mean must be finite and >= 0, got {lambda}"
        )));
    }
    Ok(log_poisson_pmf_unchecked(lambda, m))
}

pub(crate) fn log_poisson_pmf_unchecked(lambda: f64, m: u64) -> f64 {
    if lambda == 0.0 {
        return if m == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if m == 0 {
        return -lambda;
    }
    let x = m as f64;
    -stirlerr(x) - bd0(x, lambda) - 0.5 * (2.0 * std::f64::consts::PI * x).ln()
}

/// Poisson pmf for `m = 0..=kmax`.
///
/// Anchored at the mode and filled by the two-sided ratio recurrence, so the
/// relative error per entry grows only with the distance from the mode.
pub fn poisson_pmf_vec(lambda: f64, kmax: usize) -> Vec<f64> {
    let mut out = vec![0.0; kmax + 1];
    if lambda == 0.0 {
        out[0] = 1.0;
        return out;
    }
    let mode = (lambda.floor() as usize).min(kmax);
    out[mode] = log_poisson_pmf_unchecked(lambda, mode as u64).exp();
    for m in mode + 1..=kmax {
        out[m] = out[m - 1] * lambda / m as f64;
        if out[m] == 0.0 {
            break;
        }
    }
    for m in (0..mode).rev() {
        out[m] = out[m + 1] * (m + 1) as f64 / lambda;
        if out[m] == 0.0 {
            break;
        }
    }
    out
}

/// A point beyond which the Poisson(lambda) tail is far below any tolerance
/// we accept (`< 1e-300` is not claimed, but well below 1e-30).
fn poisson_scan_limit(lambda: f64) -> usize {
    (lambda + 40.0 * lambda.sqrt() + 60.0).ceil() as usize
}

/// Smallest `K` with `P(X <= K) >= 1 - tail_tol` for `X ~ Poisson(lambda)`.
///
/// Tails are accumulated from the far end so that tolerances far below
/// machine epsilon are honoured.
pub fn poisson_truncation(lambda: f64, tail_tol: f64) -> Result<usize> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidInput(format!(
            "Poisson mean must be finite and >= 0, got {lambda}"
        )));
    }
    if !(tail_tol > 0.0 && tail_tol < 1.0) {
        return Err(Error::InvalidInput(format!(
            "tail tolerance must lie in (0, 1), got {tail_tol}"
        )));
    }
    if lambda == 0.0 {
        return Ok(0);
    }
    let limit = poisson_scan_limit(lambda);
    let pmf = poisson_pmf_vec(lambda, limit);
    // tail after index k is sum of pmf[k+1..]
    let mut tail = 0.0;
    let mut k = limit;
    while k > 0 {
        let next = tail + pmf[k];
        if next > tail_tol {
            return Ok(k);
        }
        tail = next;
        k -= 1;
    }
    Ok(0)
}

/// `ln` of the Erlang(ell, rate) density at `t`.
pub fn erlang_logpdf(ell: u64, rate: f64, t: f64) -> Result<f64> {
    if ell == 0 {
        return Err(Error::InvalidInput("Erlang shape must be >= 1".into()));
    }
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(Error::InvalidInput(format!("Erlang rate must be > 0, got {rate}")));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidInput(format!(
            "Erlang argument must be finite and >= 0, got {t}"
        )));
    }
    Ok(rate.ln() + log_poisson_pmf_unchecked(rate * t, ell - 1))
}

/// `P(Erlang(ell, rate) <= t)`.
pub fn erlang_cdf(ell: u64, rate: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t.is_infinite() {
        return 1.0;
    }
    gamma_lr(ell as f64, rate * t)
}

/// `P(Erlang(ell, rate) > t)`, accurate in the far upper tail.
pub fn erlang_sf(ell: u64, rate: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    if t.is_infinite() {
        return 0.0;
    }
    gamma_ur(ell as f64, rate * t)
}

/// Smallest `t` (to bisection precision) with `P(Erlang(ell, rate) > t) <= tail`.
pub fn erlang_upper_quantile(ell: u64, rate: f64, tail: f64) -> f64 {
    let mean = ell as f64 / rate;
    let sd = (ell as f64).sqrt() / rate;
    let mut hi = mean + 10.0 * sd + 10.0 / rate;
    while erlang_sf(ell, rate, hi) > tail {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if erlang_sf(ell, rate, mid) > tail {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    hi
}

/// Largest `t` (to bisection precision) with `P(Erlang(ell, rate) <= t) <= tail`.
pub fn erlang_lower_quantile(ell: u64, rate: f64, tail: f64) -> f64 {
    if erlang_cdf(ell, rate, ell as f64 / rate) <= tail {
        return ell as f64 / rate;
    }
    let mut lo = 0.0;
    let mut hi = ell as f64 / rate;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if erlang_cdf(ell, rate, mid) <= tail {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    lo
}
