//! Scalar special functions shared by the estimators.
//!
//! The normal CDF is evaluated with two expansions: a power series around
//! zero for `|z| < TAIL_CUTOVER` and the Laplace continued fraction for the
//! Mills ratio beyond it. The continued fraction carries the lower tail, so
//! `log_phi_cdf` stays finite far below the point where `phi_cdf` underflows.

use crate::{Error, Result};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

/// Switch from the series to the continued fraction.
const TAIL_CUTOVER: f64 = 3.0;

/// Standard normal density.
pub fn phi(z: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * z * z).exp()
}

/// `sum_{n>=0} z^(2n+1) / (2n+1)!!`, so that `Phi(z) = 1/2 + phi(z) * S(z)`.
fn odd_series(z: f64) -> f64 {
    let z2 = z * z;
    let mut term = z;
    let mut sum = z;
    let mut n = 1.0;
    loop {
        term *= z2 / (2.0 * n + 1.0);
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() {
            return sum;
        }
        n += 1.0;
    }
}

/// Terms of the continued fraction kept for `z >= TAIL_CUTOVER`; enough for
/// full double precision there.
const CF_TERMS: usize = 56;

/// Mills ratio `(1 - Phi(z)) / phi(z)` for `z >= TAIL_CUTOVER`, from the
/// convergent of `1 / (z + 1 / (z + 2 / (z + 3 / (z + ...))))` built by the
/// forward three-term recurrence.
fn mills_ratio(z: f64) -> f64 {
    let (mut a_prev, mut a) = (1.0, 0.0);
    let (mut b_prev, mut b) = (0.0, 1.0);
    for n in 1..=CF_TERMS {
        let coef = if n == 1 { 1.0 } else { (n - 1) as f64 };
        (a, a_prev) = (z * a + coef * a_prev, a);
        (b, b_prev) = (z * b + coef * b_prev, b);
        if n % 8 == 0 {
            // Rescale so large z cannot overflow.
            let s = b.recip();
            a *= s;
            a_prev *= s;
            b_prev *= s;
            b = 1.0;
        }
    }
    a / b
}

/// Upper tail `1 - Phi(z)` for `z >= 0`.
fn upper_tail(z: f64) -> f64 {
    if z < TAIL_CUTOVER {
        0.5 - phi(z) * odd_series(z)
    } else {
        phi(z) * mills_ratio(z)
    }
}

/// Standard normal cumulative distribution function.
#[allow(non_snake_case)]
pub fn Phi(z: f64) -> f64 {
    phi_cdf(z)
}

pub fn phi_cdf(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    if z >= 0.0 {
        1.0 - upper_tail(z)
    } else {
        upper_tail(-z)
    }
}

/// `log Phi(z)` without underflow in the lower tail.
pub fn log_phi_cdf(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    if z <= -TAIL_CUTOVER {
        let t = -z;
        -0.5 * t * t - LN_SQRT_2PI + mills_ratio(t).ln()
    } else if z < 0.0 {
        upper_tail(-z).ln()
    } else {
        (-upper_tail(z)).ln_1p()
    }
}

/// Inverse Mills ratio `phi(z) / Phi(z)`, the derivative of `log Phi`.
pub fn inverse_mills(z: f64) -> f64 {
    if z <= -TAIL_CUTOVER {
        1.0 / mills_ratio(-z)
    } else {
        phi(z) / phi_cdf(z)
    }
}

/// `(log Phi(z), phi(z) / Phi(z))` sharing one tail evaluation.
pub fn log_phi_cdf_and_mills(z: f64) -> (f64, f64) {
    if z.is_nan() {
        return (f64::NAN, f64::NAN);
    }
    if z <= -TAIL_CUTOVER {
        let t = -z;
        let m = mills_ratio(t);
        (-0.5 * t * t - LN_SQRT_2PI + m.ln(), 1.0 / m)
    } else {
        let d = phi(z);
        let (cdf, log_cdf) = if z < 0.0 {
            let p = upper_tail(-z);
            (p, p.ln())
        } else {
            let q = upper_tail(z);
            (1.0 - q, (-q).ln_1p())
        };
        (log_cdf, d / cdf)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log sigmoid(z) = -log(1 + exp(-z))`.
pub fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter index where the worst error occurred.
    pub worst_index: usize,
}

/// Compare an analytic gradient with central finite differences.
///
/// `loss_fn` returns the loss and its analytic gradient at the given
/// parameters. The relative error of coordinate `i` is
/// `|g_i - n_i| / max(|g_i|, |n_i|, 1e-8)`.
pub fn grad_check<F>(mut loss_fn: F, params: &[f64], step: f64) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    if !(step > 0.0) {
        return Err(Error::Validation(format!("finite-difference step must be positive, got {step}")));
    }
    let (loss, analytic) = loss_fn(params);
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss at the checked point".into()));
    }
    if analytic.len() != params.len() {
        return Err(Error::DimensionMismatch { expected: params.len(), got: analytic.len() });
    }
    let mut probe = params.to_vec();
    let mut report = GradCheckReport { max_relative_error: 0.0, worst_index: 0 };
    for i in 0..params.len() {
        probe[i] = params[i] + step;
        let (up, _) = loss_fn(&probe);
        probe[i] = params[i] - step;
        let (down, _) = loss_fn(&probe);
        probe[i] = params[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("loss while perturbing parameter {i}")));
        }
        let numeric = (up - down) / (2.0 * step);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        let err = (analytic[i] - numeric).abs() / denom;
        if err > report.max_relative_error {
            report = GradCheckReport { max_relative_error: err, worst_index: i };
        }
    }
    Ok(report)
}
