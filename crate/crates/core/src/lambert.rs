//! Real Lambert-W on the principal (`W₀`) and lower (`W₋₁`) branches.
//!
//! Both branches start from a branch-specific guess and are refined by
//! Halley's method. Within `1e-6` of the branch point `-1/e` the series in
//! `p = ±sqrt(2(1 + e·x))` is used directly, because iteration on
//! `w·eʷ - x` has a vanishing derivative there. Far from the branch point,
//! `W₋₁` near zero and `W₀` for large arguments iterate on the logarithmic
//! form `w + ln|w| = ln|x|`, which stays finite where `eʷ` under/overflows.

use crate::error::{Error, Result};

/// `-1/e`, the common branch point.
pub const BRANCH_POINT: f64 = -0.367_879_441_171_442_33;

const E_HI: f64 = std::f64::consts::E;
const E_LO: f64 = 1.445_646_891_729_250_1e-16;
const SERIES_ONLY: f64 = 1e-6 * E_HI;
const MAX_ITER: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Principal,
    MinusOne,
}

/// A Lambert-W value tagged with the branch it was taken from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchValue {
    pub value: f64,
    pub branch: Branch,
}

impl BranchValue {
    pub fn eval(x: f64, branch: Branch) -> Result<Self> {
        let value = match branch {
            Branch::Principal => lambert_w0(x)?,
            Branch::MinusOne => lambert_wm1(x)?,
        };
        Ok(Self { value, branch })
    }
}

/// `1 + e·x` with `e` split into two doubles, so the cancellation near the
/// branch point keeps its low-order bits.
fn branch_distance(x: f64) -> f64 {
    E_HI.mul_add(x, 1.0) + E_LO * x
}

/// Series about the branch point; `p > 0` gives `W₀`, `p < 0` gives `W₋₁`.
fn branch_series(p: f64) -> f64 {
    const C: [f64; 9] = [
        -1.0,
        1.0,
        -1.0 / 3.0,
        11.0 / 72.0,
        -43.0 / 540.0,
        769.0 / 17280.0,
        -221.0 / 8505.0,
        680_863.0 / 43_545_600.0,
        -1963.0 / 204_120.0,
    ];
    C.iter().rev().fold(0.0, |acc, &c| acc.mul_add(p, c))
}

fn halley_direct(mut w: f64, x: f64) -> f64 {
    for _ in 0..MAX_ITER {
        let ew = w.exp();
        let f = w * ew - x;
        let wp1 = w + 1.0;
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        let step = f / denom;
        if !step.is_finite() {
            break;
        }
        w -= step;
        if step.abs() <= 4.0 * f64::EPSILON * (1.0 + w.abs()) {
            break;
        }
    }
    w
}

/// Halley on `g(w) = w + ln|w| - ln|x|`, valid away from `w = -1`.
fn halley_log(mut w: f64, ln_abs_x: f64) -> f64 {
    for _ in 0..MAX_ITER {
        let g = w + w.abs().ln() - ln_abs_x;
        let g1 = 1.0 + 1.0 / w;
        let g2 = -1.0 / (w * w);
        let step = g / (g1 - g * g2 / (2.0 * g1));
        if !step.is_finite() {
            break;
        }
        w -= step;
        if step.abs() <= 4.0 * f64::EPSILON * (1.0 + w.abs()) {
            break;
        }
    }
    w
}

fn residual_ok(w: f64, x: f64) -> bool {
    if !w.is_finite() {
        return false;
    }
    let lhs = w * w.exp();
    if lhs.is_finite() {
        (lhs - x).abs() <= 1e-12 * x.abs().max(1.0)
    } else {
        // eʷ overflowed: compare in log space
        ((w + w.ln()) - x.ln()).abs() <= 1e-12
    }
}

fn bisect(mut lo: f64, mut hi: f64, x: f64, increasing: bool) -> f64 {
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let above = mid * mid.exp() > x;
        if above == increasing {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Principal branch `W₀(x)` for `x ≥ -1/e`.
pub fn lambert_w0(x: f64) -> Result<f64> {
    if x.is_nan() {
        return Err(Error::domain("lambert_w0 of NaN"));
    }
    if x == f64::INFINITY {
        return Ok(f64::INFINITY);
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    let r = branch_distance(x);
    if r < -1e-15 {
        return Err(Error::domain(format!("lambert_w0 undefined for x = {x} < -1/e")));
    }
    if r <= 0.0 {
        return Ok(-1.0);
    }
    if r < SERIES_ONLY {
        return Ok(branch_series((2.0 * r).sqrt()));
    }
    let w = if x < -0.32 {
        halley_direct(branch_series((2.0 * r).sqrt()), x)
    } else if x <= E_HI {
        // Winitzki's approximation
        let l = x.ln_1p();
        halley_direct(l * (1.0 - l.ln_1p() / (2.0 + l)), x)
    } else {
        let l1 = x.ln();
        let l2 = l1.ln();
        halley_log(l1 - l2 + l2 / l1, l1)
    };
    if residual_ok(w, x) && w >= -1.0 {
        return Ok(w);
    }
    let hi = if x > 0.0 { x.ln().max(1.0) + 1.0 } else { 0.0 };
    Ok(bisect(-1.0, hi, x, true))
}

/// Lower branch `W₋₁(x)` for `-1/e ≤ x < 0`.
pub fn lambert_wm1(x: f64) -> Result<f64> {
    if !(x < 0.0) {
        return Err(Error::domain(format!("lambert_wm1 undefined for x = {x} >= 0")));
    }
    let r = branch_distance(x);
    if r < -1e-15 {
        return Err(Error::domain(format!("lambert_wm1 undefined for x = {x} < -1/e")));
    }
    if r <= 0.0 {
        return Ok(-1.0);
    }
    if r < SERIES_ONLY {
        return Ok(branch_series(-(2.0 * r).sqrt()));
    }
    let w = if x < -0.25 {
        halley_direct(branch_series(-(2.0 * r).sqrt()), x)
    } else {
        let l1 = (-x).ln();
        let l2 = (-l1).ln();
        halley_log(l1 - l2 + l2 / l1, l1)
    };
    if residual_ok(w, x) && w <= -1.0 {
        return Ok(w);
    }
    let mut lo: f64 = -2.0;
    while lo * lo.exp() < x && lo > -1e4 {
        lo *= 2.0;
    }
    Ok(bisect(lo, -1.0, x, false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Plain bisection on `w·eʷ = x` over a caller-supplied bracket.
    fn oracle(x: f64, mut lo: f64, mut hi: f64) -> f64 {
        let h = |w: f64| w * w.exp() - x;
        let sign_lo = h(lo).signum();
        for _ in 0..300 {
            let mid = 0.5 * (lo + hi);
            if h(mid).signum() == sign_lo {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn residual(w: f64, x: f64) -> f64 {
        (w * w.exp() - x).abs() / x.abs().max(1.0)
    }

    #[test]
    fn fixed_points() {
        assert_eq!(lambert_w0(0.0).unwrap(), 0.0);
        assert_eq!(lambert_w0(BRANCH_POINT).unwrap(), -1.0);
        assert_eq!(lambert_wm1(BRANCH_POINT).unwrap(), -1.0);
        assert!((lambert_w0(E_HI).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn matches_bisection_oracle() {
        let w0 = lambert_w0(-0.1).unwrap();
        assert!((w0 - oracle(-0.1, -1.0, 0.0)).abs() < 1e-13);
        assert!((w0 - -0.111_832_559_158_963).abs() < 1e-12);
        let wm1 = lambert_wm1(-0.1).unwrap();
        assert!((wm1 - oracle(-0.1, -10.0, -1.0)).abs() < 1e-12);
        assert!((wm1 - -3.577_152_063_957_297).abs() < 1e-12);
    }

    #[test]
    fn conjugate_root_of_half() {
        let v = 0.5f64;
        let x = -v * (-v).exp();
        let w = lambert_wm1(x).unwrap();
        let conj = -w;
        assert!(conj > 1.0);
        assert!((conj * (-conj).exp() - v * (-v).exp()).abs() < 1e-15);
        assert!((w - oracle(x, -10.0, -1.0)).abs() < 1e-12);
        assert!((lambert_w0(x).unwrap() + v).abs() < 1e-12);
    }

    #[test]
    fn domain_errors() {
        assert!(lambert_w0(-0.5).is_err());
        assert!(lambert_w0(f64::NAN).is_err());
        assert!(lambert_wm1(0.0).is_err());
        assert!(lambert_wm1(0.1).is_err());
        assert!(lambert_wm1(-0.4).is_err());
    }

    #[test]
    fn near_branch_point() {
        for k in 0..200 {
            let x = BRANCH_POINT + 1e-6 * f64::from(k) / 200.0;
            let a = lambert_w0(x).unwrap();
            let b = lambert_wm1(x).unwrap();
            assert!(residual(a, x) <= 1e-12 && residual(b, x) <= 1e-12);
            assert!(b <= -1.0 && -1.0 <= a);
        }
    }

    #[test]
    fn extreme_arguments() {
        for &x in &[1e-300, 1e-12, 1e3, 1e100, 1e300, f64::MAX] {
            let w = lambert_w0(x).unwrap();
            assert!(residual_ok(w, x), "w0({x}) = {w}");
        }
        for &x in &[-1e-300, -1e-100, -1e-12, -1e-3] {
            let w = lambert_wm1(x).unwrap();
            assert!(residual_ok(w, x), "wm1({x}) = {w}");
        }
    }

    proptest! {
        #[test]
        fn branch_ordering(t in 0.0f64..1.0) {
            let x = BRANCH_POINT * (1.0 - t);
            prop_assume!(x < 0.0);
            let a = lambert_w0(x).unwrap();
            let b = lambert_wm1(x).unwrap();
            prop_assert!(b <= -1.0 && -1.0 <= a);
            prop_assert!(residual(a, x) <= 1e-12);
            prop_assert!(residual(b, x) <= 1e-12);
        }

        #[test]
        fn principal_recovers_trivial_root(v in 1e-6f64..0.9999) {
            let w = lambert_w0(-v * (-v).exp()).unwrap();
            prop_assert!((w + v).abs() <= 1e-10);
        }
    }
}
