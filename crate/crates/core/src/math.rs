//! Special functions and bracketed root finding.
//!
//! Everything here is a pure function of its arguments. The normal CDF is
//! built on `libm::erfc`, which keeps full relative accuracy in both tails;
//! the quantile is a rational first guess polished by one Halley step against
//! that CDF; Lambert W uses branch-specific starting points and Halley (or
//! Newton on the logarithmic form where `w e^w` would over- or underflow).

use std::f64::consts::{E, FRAC_1_SQRT_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 1/√(2π)
pub const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// −1/e, the branch point of Lambert W.
pub const NEG_INV_E: f64 = -1.0 / E;

/// Standard normal density.
#[inline]
pub fn normal_pdf(z: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal CDF Φ.
#[inline]
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// Upper tail Φᶜ(z) = 1 − Φ(z), accurate for large positive `z`.
#[inline]
pub fn normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z * FRAC_1_SQRT_2)
}

/// Inverse of [`normal_cdf`] on the open unit interval.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!(
            "normal quantile requires 0 < p < 1, got {p}"
        )));
    }
    Ok(quantile_unchecked(p))
}

/// Quantile without the domain check. `p` must lie in (0, 1).
#[inline]
pub(crate) fn quantile_unchecked(p: f64) -> f64 {
    // 1 − p is exact for p ≥ 1/2, so the upper half reflects without loss.
    if p > 0.5 {
        -lower_quantile(1.0 - p)
    } else {
        lower_quantile(p)
    }
}

fn lower_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.024_25;

    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };

    // One Halley step against the erfc-based CDF.
    let e = normal_cdf(x) - p;
    let u = e * (2.0 * PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

/// Branch of the real Lambert W function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// W₀, defined on [−1/e, ∞) with values ≥ −1.
    Principal,
    /// W₋₁, defined on [−1/e, 0) with values ≤ −1.
    MinusOne,
}

const LAMBERT_MAX_ITER: usize = 64;

/// Real Lambert W: the `w` on the requested branch with `w·e^w = x`.
pub fn lambert_w(branch: Branch, x: f64) -> Result<f64> {
    if x.is_nan() {
        return Err(Error::Domain("lambert_w of NaN".into()));
    }
    // Allow a few ulps below −1/e: callers compute arguments like −2πk² that
    // land exactly on the branch point up to rounding.
    let branch_gap = x.mul_add(E, 1.0);
    if branch_gap < -4.0 * f64::EPSILON {
        return Err(Error::Domain(format!(
            "lambert_w({branch:?}) requires x >= -1/e, got {x}"
        )));
    }
    // Within an ulp of −1/e the argument cannot be told apart from the branch
    // point itself, so both branches meet at −1 there.
    let branch_gap = if branch_gap <= f64::EPSILON { 0.0 } else { branch_gap };
    match branch {
        Branch::Principal => Ok(w_principal(x, branch_gap)),
        Branch::MinusOne => {
            if x >= 0.0 {
                return Err(Error::Domain(format!(
                    "lambert_w(MinusOne) requires -1/e <= x < 0, got {x}"
                )));
            }
            Ok(w_minus_one(x, branch_gap))
        }
    }
}

/// Series about the branch point in p = ±√(2(ex+1)); `p > 0` gives W₀.
fn branch_point_series(p: f64) -> f64 {
    let p2 = p * p;
    -1.0 + p - p2 / 3.0 + 11.0 / 72.0 * p2 * p - 43.0 / 540.0 * p2 * p2
        + 769.0 / 17280.0 * p2 * p2 * p
}

fn halley(mut w: f64, x: f64) -> f64 {
    for _ in 0..LAMBERT_MAX_ITER {
        let ew = w.exp();
        let f = w * ew - x;
        let wp1 = w + 1.0;
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        if denom == 0.0 || !denom.is_finite() {
            break;
        }
        let step = f / denom;
        w -= step;
        if step.abs() <= 4.0 * f64::EPSILON * (1.0 + w.abs()) {
            break;
        }
    }
    w
}

/// Newton on g(w) = w + ln|w| − ln|x|, well conditioned where `e^w` is not.
fn newton_log_form(mut w: f64, x: f64) -> f64 {
    let target = x.abs().ln();
    for _ in 0..LAMBERT_MAX_ITER {
        let g = w + w.abs().ln() - target;
        let step = g / (1.0 + 1.0 / w);
        w -= step;
        if step.abs() <= 4.0 * f64::EPSILON * (1.0 + w.abs()) {
            break;
        }
    }
    w
}

fn w_principal(x: f64, branch_gap: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    if branch_gap == 0.0 {
        return -1.0;
    }
    if branch_gap < 1e-5 {
        // Within the singular region the series is more accurate than any
        // iteration, whose derivative vanishes at w = −1.
        return branch_point_series((2.0 * branch_gap).sqrt());
    }
    if x > 1e10 {
        let l1 = x.ln();
        let l2 = l1.ln();
        return newton_log_form(l1 - l2 + l2 / l1, x);
    }
    let guess = if x < -0.25 {
        branch_point_series((2.0 * branch_gap).sqrt())
    } else if x < 3.0 {
        x.ln_1p()
    } else {
        let l1 = x.ln();
        let l2 = l1.ln();
        l1 - l2 + l2 / l1
    };
    halley(guess, x)
}

fn w_minus_one(x: f64, branch_gap: f64) -> f64 {
    if branch_gap == 0.0 {
        return -1.0;
    }
    let p = -(2.0 * branch_gap).sqrt();
    if branch_gap < 1e-5 {
        return branch_point_series(p);
    }
    if x < -0.25 {
        halley(branch_point_series(p), x)
    } else {
        let l1 = (-x).ln();
        let l2 = (-l1).ln();
        newton_log_form(l1 - l2 + l2 / l1, x)
    }
}

/// Termination settings for [`find_root`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RootConfig {
    /// Absolute tolerance on the unknown.
    pub abs_tol: f64,
    pub max_iter: usize,
}

impl Default for RootConfig {
    fn default() -> Self {
        Self { abs_tol: 1e-12, max_iter: 200 }
    }
}

impl RootConfig {
    pub fn with_tol(abs_tol: f64) -> Self {
        Self { abs_tol, ..Self::default() }
    }
}

/// Bracketed root of a continuous `f` on `[lo, hi]`.
///
/// Brent's method: inverse quadratic / secant steps, falling back to
/// bisection whenever an interpolated step would leave the bracket or shrink
/// it too slowly, so the bracket always contracts. Stops when `f` is exactly
/// zero or the half-width of the bracket drops below
/// `2·ε·|x| + abs_tol/2`.
pub fn find_root<F>(mut f: F, lo: f64, hi: f64, cfg: RootConfig) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (f(a), f(b));
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.is_nan() || fb.is_nan() || fa.signum() == fb.signum() {
        return Err(Error::NoBracket { lo, hi, f_lo: fa, f_hi: fb });
    }

    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..cfg.max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * cfg.abs_tol;
        let half = 0.5 * (c - b);
        if half.abs() <= tol || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * half * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * half * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * half * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = half;
                e = d;
            }
        } else {
            d = half;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(half) };
        fb = f(b);
        if fb.is_nan() {
            return Err(Error::NoConvergence { iterations: 0, estimate: b });
        }
    }
    Err(Error::NoConvergence { iterations: cfg.max_iter, estimate: b })
}
