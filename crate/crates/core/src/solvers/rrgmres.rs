use crate::error::{Error, Result};
use crate::forward::LinearOperator;
use crate::linalg::{axpy, dot, norm2, relative_error};

/// Arnoldi stops when the new direction is this small relative to `‖Avₖ‖`.
pub const ARNOLDI_BREAKDOWN_TOL: f64 = 1e-14;

/// Iterates `x₁ … x_K` of an iterative method with their residual norms.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateHistory {
    pub iterates: Vec<Vec<f64>>,
    /// `‖Axₖ − b‖`, computed explicitly.
    pub residual_norms: Vec<f64>,
    /// `‖xₖ − x_true‖ / ‖x_true‖` when a reference was supplied.
    pub relative_errors: Option<Vec<f64>>,
    /// Orthonormal Krylov basis `v₁, v₂, …` with `v₁ = Ab/‖Ab‖`.
    pub basis: Vec<Vec<f64>>,
    pub breakdown: bool,
}

impl IterateHistory {
    pub fn len(&self) -> usize {
        self.iterates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterates.is_empty()
    }
}

/// Range-restricted GMRES: `xₖ` minimizes `‖Ax − b‖` over
/// `span{Ab, A²b, …, Aᵏb}`.
///
/// The projected problem `min ‖H̄ₖy − Vₖ₊₁ᵀb‖` is updated with one Givens
/// rotation per step; the component of `b` outside `Vₖ₊₁` is constant in `y`.
pub fn rrgmres(a: &dyn LinearOperator, b: &[f64], k_max: usize, x_true: Option<&[f64]>) -> Result<IterateHistory> {
    let n = a.cols();
    if a.rows() != n {
        return Err(Error::DimensionMismatch(format!(
            "RRGMRES needs a square operator, got {}x{}",
            a.rows(),
            n
        )));
    }
    if b.len() != n {
        return Err(Error::DimensionMismatch(format!("data of length {} for order {n}", b.len())));
    }
    if k_max == 0 {
        return Err(Error::InvalidArgument("k_max must be at least 1".into()));
    }
    if let Some(t) = x_true {
        if t.len() != n {
            return Err(Error::DimensionMismatch(format!("reference of length {} for order {n}", t.len())));
        }
    }
    let ab = a.apply(b);
    let beta = norm2(&ab);
    if beta == 0.0 || !beta.is_finite() {
        return Err(Error::InvalidArgument("Ab is zero; the Krylov space is empty".into()));
    }
    let mut basis: Vec<Vec<f64>> = vec![ab.iter().map(|v| v / beta).collect()];
    // rotated projection of b: g[i] = (Qᵀ Vᵀ b)[i]
    let mut g: Vec<f64> = vec![dot(&basis[0], b)];
    // R factor stored by columns; rotations as (c, s)
    let mut r_cols: Vec<Vec<f64>> = Vec::new();
    let mut rotations: Vec<(f64, f64)> = Vec::new();
    let mut history = IterateHistory {
        iterates: Vec::new(),
        residual_norms: Vec::new(),
        relative_errors: x_true.map(|_| Vec::new()),
        basis: Vec::new(),
        breakdown: false,
    };
    for k in 0..k_max {
        let mut w = a.apply(&basis[k]);
        let w_norm = norm2(&w);
        let mut h = vec![0.0; k + 2];
        // modified Gram–Schmidt, twice
        for _ in 0..2 {
            for (i, v) in basis.iter().enumerate() {
                let c = dot(v, &w);
                h[i] += c;
                axpy(-c, v, &mut w);
            }
        }
        let h_next = norm2(&w);
        let breakdown = !(h_next > ARNOLDI_BREAKDOWN_TOL * w_norm);
        h[k + 1] = if breakdown { 0.0 } else { h_next };
        if !breakdown {
            basis.push(w.iter().map(|v| v / h_next).collect());
            g.push(dot(&basis[k + 1], b));
        }
        for (i, &(c, s)) in rotations.iter().enumerate() {
            let (p, q) = (h[i], h[i + 1]);
            h[i] = c * p + s * q;
            h[i + 1] = -s * p + c * q;
        }
        let (p, q) = (h[k], h[k + 1]);
        let rho = p.hypot(q);
        if rho == 0.0 {
            history.breakdown = true;
            break;
        }
        let (c, s) = (p / rho, q / rho);
        h[k] = rho;
        h[k + 1] = 0.0;
        rotations.push((c, s));
        if !breakdown {
            let (gp, gq) = (g[k], g[k + 1]);
            g[k] = c * gp + s * gq;
            g[k + 1] = -s * gp + c * gq;
        }
        h.truncate(k + 1);
        r_cols.push(h);

        // back substitution R y = g[0..=k]
        let mut y = vec![0.0; k + 1];
        for i in (0..=k).rev() {
            let mut acc = g[i];
            for j in (i + 1)..=k {
                acc -= r_cols[j][i] * y[j];
            }
            y[i] = acc / r_cols[i][i];
        }
        let mut x = vec![0.0; n];
        for (j, yj) in y.iter().enumerate() {
            axpy(*yj, &basis[j], &mut x);
        }
        let residual: Vec<f64> = a.apply(&x).iter().zip(b).map(|(p, q)| p - q).collect();
        history.residual_norms.push(norm2(&residual));
        if let (Some(errs), Some(t)) = (history.relative_errors.as_mut(), x_true) {
            errs.push(relative_error(&x, t));
        }
        history.iterates.push(x);
        if breakdown {
            history.breakdown = true;
            break;
        }
    }
    history.basis = basis;
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::DenseOperator;
    use crate::linalg::DenseMatrix;
    use crate::rng::RngStream;

    #[test]
    fn converges_on_well_conditioned_system() {
        let mut s = RngStream::new(12);
        let a = DenseMatrix::from_fn(10, 10, |i, j| if i == j { 5.0 } else { s.normal(0.0, 0.5) });
        let x_true: Vec<f64> = (0..10).map(|_| s.normal(0.0, 1.0)).collect();
        let b = a.matvec(&x_true);
        let op = DenseOperator::new(a.clone());
        let hist = rrgmres(&op, &b, 10, Some(&x_true)).unwrap();
        assert!(*hist.residual_norms.last().unwrap() < 1e-8 * norm2(&b));
        let ab = a.matvec(&b);
        let nab = norm2(&ab);
        for (v, w) in hist.basis[0].iter().zip(&ab) {
            assert!((v - w / nab).abs() < 1e-14);
        }
        for pair in hist.residual_norms.windows(2) {
            assert!(pair[1] <= pair[0] * (1.0 + 1e-10));
        }
    }

    #[test]
    fn iterates_solve_projected_least_squares() {
        // oracle: least squares over the explicit Krylov matrix [Ab, A²b, A³b]
        let mut s = RngStream::new(13);
        let a = DenseMatrix::from_fn(8, 8, |i, j| if i == j { 2.0 } else { s.normal(0.0, 0.4) });
        let b: Vec<f64> = (0..8).map(|_| s.normal(0.0, 1.0)).collect();
        let op = DenseOperator::new(a.clone());
        let hist = rrgmres(&op, &b, 3, None).unwrap();
        let k1 = a.matvec(&b);
        let k2 = a.matvec(&k1);
        let k3 = a.matvec(&k2);
        let kry = DenseMatrix::from_fn(8, 3, |i, j| [k1[i], k2[i], k3[i]][j]);
        let coef = crate::linalg::lstsq(&a.matmul(&kry).unwrap(), &b).unwrap();
        let oracle = kry.matvec(&coef);
        assert!(relative_error(&hist.iterates[2], &oracle) < 1e-9);
    }

    #[test]
    fn stops_on_breakdown() {
        // b is an eigenvector: the Krylov space is one-dimensional
        let a = DenseMatrix::diag(&[2.0, 3.0, 4.0]);
        let op = DenseOperator::new(a);
        let hist = rrgmres(&op, &[0.0, 1.0, 0.0], 5, None).unwrap();
        assert!(hist.breakdown);
        assert_eq!(hist.len(), 1);
        assert!(hist.residual_norms[0] < 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        let rect = DenseOperator::new(DenseMatrix::zeros(3, 2));
        assert!(rrgmres(&rect, &[1.0; 3], 2, None).is_err());
        let zero = DenseOperator::new(DenseMatrix::zeros(3, 3));
        assert!(rrgmres(&zero, &[1.0; 3], 2, None).is_err());
        let id = DenseOperator::new(DenseMatrix::identity(3));
        assert!(rrgmres(&id, &[1.0; 3], 0, None).is_err());
    }
}
