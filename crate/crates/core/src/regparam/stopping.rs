use super::{Method, SelectionResult};
use crate::error::{Error, Result};
use crate::linalg::{norm2, relative_error};
use crate::solvers::IterateHistory;

/// Index (1-based) of the smallest error; ties go to the earlier iterate.
pub fn k_opt_from_errors(errors: &[f64]) -> Result<SelectionResult> {
    if errors.is_empty() {
        return Err(Error::InvalidArgument("no iterates to choose from".into()));
    }
    if errors.iter().any(|e| e.is_nan()) {
        return Err(Error::NonFinite("iterate error"));
    }
    let (idx, best) = errors
        .iter()
        .enumerate()
        .fold((0, errors[0]), |acc, (i, &e)| if e < acc.1 { (i, e) } else { acc });
    Ok(SelectionResult {
        value: (idx + 1) as f64,
        objective: best,
        evaluations: errors.len(),
        method: Method::Kopt,
        dp_failed: false,
    })
}

/// Oracle stopping index minimizing `‖xₖ − x_true‖/‖x_true‖`.
pub fn k_opt(history: &IterateHistory, x_true: &[f64]) -> Result<SelectionResult> {
    let computed;
    let errors = match &history.relative_errors {
        Some(e) => e.as_slice(),
        None => {
            if history.iterates.iter().any(|x| x.len() != x_true.len()) {
                return Err(Error::DimensionMismatch("iterate and reference lengths differ".into()));
            }
            computed = history.iterates.iter().map(|x| relative_error(x, x_true)).collect::<Vec<_>>();
            computed.as_slice()
        }
    };
    k_opt_from_errors(errors)
}

/// First index (1-based) with relative residual `≤ safety·level`. When none
/// qualifies the last index is returned with `dp_failed` set.
pub fn k_dp_from_residuals(relative_residuals: &[f64], level: f64, safety: f64) -> Result<SelectionResult> {
    if relative_residuals.is_empty() {
        return Err(Error::InvalidArgument("no iterates to choose from".into()));
    }
    if !(level >= 0.0) || !(safety >= 1.0) {
        return Err(Error::InvalidArgument(format!("invalid level {level} or safety factor {safety}")));
    }
    let threshold = safety * level;
    let hit = relative_residuals.iter().position(|&r| r <= threshold);
    let idx = hit.unwrap_or(relative_residuals.len() - 1);
    Ok(SelectionResult {
        value: (idx + 1) as f64,
        objective: relative_residuals[idx],
        evaluations: idx + 1,
        method: Method::Kdp,
        dp_failed: hit.is_none(),
    })
}

/// Discrepancy stopping rule on `‖Axₖ − b‖/‖b‖`.
pub fn k_dp(history: &IterateHistory, b: &[f64], level: f64, safety: f64) -> Result<SelectionResult> {
    let nb = norm2(b);
    if nb == 0.0 {
        return Err(Error::ZeroDenominator("relative residual"));
    }
    let rel: Vec<f64> = history.residual_norms.iter().map(|r| r / nb).collect();
    k_dp_from_residuals(&rel, level, safety)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn kopt_examples() {
        let r = k_opt_from_errors(&[0.5, 0.3, 0.2, 0.25, 0.4]).unwrap();
        assert_eq!(r.value, 3.0);
        assert_eq!(r.objective, 0.2);
        assert_eq!(k_opt_from_errors(&[0.3, 0.1, 0.1]).unwrap().value, 2.0);
        assert_eq!(k_opt_from_errors(&[0.5, 0.3, 0.4]).unwrap().value, 2.0);
        assert_eq!(k_opt_from_errors(&[0.3, 0.3]).unwrap().value, 1.0);
    }

    #[test]
    fn kdp_examples() {
        let rel = [0.5, 0.2, 0.1, 0.05, 0.04];
        assert_eq!(k_dp_from_residuals(&rel, 0.05, 1.0).unwrap().value, 4.0);
        assert_eq!(k_dp_from_residuals(&rel, 0.05, 2.0).unwrap().value, 3.0);
        assert_eq!(k_dp_from_residuals(&[0.5, 0.2, 0.05], 0.1, 1.01).unwrap().value, 3.0);
        assert_eq!(k_dp_from_residuals(&[0.5, 0.2, 0.05], 1.0, 1.01).unwrap().value, 1.0);
        assert!(k_dp_from_residuals(&rel, 0.1, 0.5).is_err());
        let fail = k_dp_from_residuals(&rel, 0.01, 1.0).unwrap();
        assert_eq!(fail.value, 5.0);
        assert!(fail.dp_failed);
    }

    #[test]
    fn uses_history() {
        let h = IterateHistory {
            iterates: vec![vec![1.0, 0.0], vec![0.9, 0.1], vec![2.0, 2.0]],
            residual_norms: vec![1.0, 0.5, 0.1],
            relative_errors: None,
            basis: vec![],
            breakdown: false,
        };
        assert_eq!(k_opt(&h, &[1.0, 0.0]).unwrap().value, 1.0);
        assert_eq!(k_dp(&h, &[2.0, 0.0], 0.25, 1.0).unwrap().value, 2.0);
    }

    proptest! {
        #[test]
        fn kdp_is_first_crossing(res in prop::collection::vec(0.0f64..1.0, 1..40), level in 0.0f64..1.0) {
            let r = k_dp_from_residuals(&res, level, 1.0).unwrap();
            let k = r.value as usize;
            if !r.dp_failed {
                prop_assert!(res[k - 1] <= level);
                prop_assert!(res[..k - 1].iter().all(|&v| v > level));
            } else {
                prop_assert!(res.iter().all(|&v| v > level));
                prop_assert_eq!(k, res.len());
            }
        }

        #[test]
        fn huge_safety_stops_at_first(res in prop::collection::vec(0.0f64..1.0, 1..40), level in 1e-3f64..1.0) {
            prop_assert_eq!(k_dp_from_residuals(&res, level, 1e6).unwrap().value, 1.0);
        }

        #[test]
        fn kopt_is_minimum(errs in prop::collection::vec(0.0f64..10.0, 1..40)) {
            let r = k_opt_from_errors(&errs).unwrap();
            prop_assert!(errs.iter().all(|&e| e >= r.objective));
        }
    }
}
