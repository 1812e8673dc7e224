//! Derivative-free scalar search: golden-section minimization and bisection.

use crate::error::{Error, Result};

/// `(√5 − 1) / 2`, the golden-section contraction factor.
pub const GOLDEN_RATIO_CONJUGATE: f64 = 0.618_033_988_749_894_8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarMinimum {
    pub argmin: f64,
    pub value: f64,
    pub evaluations: usize,
}

/// Upper bound on the number of `f` evaluations made by [`golden_section_min`].
pub fn golden_section_eval_bound(lo: f64, hi: f64, tol: f64) -> usize {
    let k = ((hi - lo) / tol).ln() / (1.0 / GOLDEN_RATIO_CONJUGATE).ln();
    k.max(0.0).ceil() as usize + 2
}

/// Golden-section search for a minimizer of a unimodal `f` on `[lo, hi]`.
///
/// The bracket shrinks until its width is at most `tol`. Ties move the
/// bracket toward `lo`, so a flat objective converges to the lower end.
pub fn golden_section_min<F>(mut f: F, lo: f64, hi: f64, tol: f64) -> Result<ScalarMinimum>
where
    F: FnMut(f64) -> f64,
{
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    if !(lo < hi) {
        return Err(Error::InvalidArgument(format!("empty interval [{lo}, {hi}]")));
    }
    let rho = GOLDEN_RATIO_CONJUGATE;
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - rho * (b - a);
    let mut x2 = a + rho * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    let mut evaluations = 2;
    while b - a > tol {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - rho * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + rho * (b - a);
            f2 = f(x2);
        }
        evaluations += 1;
    }
    let (argmin, value) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    Ok(ScalarMinimum {
        argmin,
        value,
        evaluations,
    })
}

/// Bisection for a sign change of `f` on `[lo, hi]`; stops when the bracket
/// is no wider than `tol` and returns its midpoint.
pub fn bisection_root<F>(mut f: F, lo: f64, hi: f64, tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    if !(lo <= hi) {
        return Err(Error::InvalidArgument(format!("empty interval [{lo}, {hi}]")));
    }
    let (mut a, mut b) = (lo, hi);
    let mut fa = f(a);
    let fb = f(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() || fa.is_nan() || fb.is_nan() {
        return Err(Error::NoRoot { lo, hi });
    }
    // 200 halvings exhaust any f64 bracket
    for _ in 0..200 {
        if b - a <= tol {
            break;
        }
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == fa.signum() {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_quadratic_and_abs() {
        let r = golden_section_min(|x| (x - 2.0) * (x - 2.0), 0.0, 5.0, 1e-8).unwrap();
        assert!((r.argmin - 2.0).abs() < 1e-7);
        assert!(r.evaluations <= golden_section_eval_bound(0.0, 5.0, 1e-8));

        let r = golden_section_min(|x: f64| (x - 1.0).abs(), 0.0, 3.0, 1e-8).unwrap();
        assert!((r.argmin - 1.0).abs() < 1e-7);
    }

    #[test]
    fn golden_rejects_bad_arguments() {
        assert!(golden_section_min(|x| x, 0.0, 1.0, 0.0).is_err());
        assert!(golden_section_min(|x| x, 1.0, 1.0, 1e-3).is_err());
        assert!(golden_section_min(|x| x, 2.0, 1.0, 1e-3).is_err());
    }

    #[test]
    fn golden_flat_function_goes_low() {
        let r = golden_section_min(|_| 1.0, -6.0, 2.0, 1e-6).unwrap();
        assert!(r.argmin < -6.0 + 1e-5);
    }

    #[test]
    fn bisection_cases() {
        let r = bisection_root(|x| x - 1.0, 0.0, 2.0, 1e-12).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
        assert!(matches!(
            bisection_root(|x| x * x + 1.0, 0.0, 1.0, 1e-12),
            Err(Error::NoRoot { .. })
        ));
        assert!(bisection_root(|x| x, 0.0, 1.0, 0.0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn golden_finds_quadratic_vertex(vertex in -5.0f64..5.0, curvature in 0.01f64..100.0, tol in 1e-9f64..1e-3) {
            let r = golden_section_min(|x| curvature * (x - vertex).powi(2) + 3.0, -10.0, 10.0, tol).unwrap();
            proptest::prop_assert!((r.argmin - vertex).abs() <= tol);
            proptest::prop_assert!(r.evaluations <= golden_section_eval_bound(-10.0, 10.0, tol));
        }
    }
}
