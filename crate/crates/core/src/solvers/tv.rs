use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{LinearOperator, OperatorKind};
use crate::linalg::{dot, norm1, norm2};

/// Stacked forward differences of an `h×w` image: the first `hw` outputs are
/// horizontal differences `x[i][j+1] − x[i][j]`, the next `hw` vertical
/// differences `x[i+1][j] − x[i][j]`; differences leaving the image are zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DifferenceOperator {
    height: usize,
    width: usize,
}

pub fn difference_operator(height: usize, width: usize) -> Result<DifferenceOperator> {
    if height < 2 || width < 2 {
        return Err(Error::InvalidArgument(format!(
            "difference operator needs an image of at least 2x2, got {height}x{width}"
        )));
    }
    Ok(DifferenceOperator { height, width })
}

impl DifferenceOperator {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `DᵀDx` in one pass: `Σ (x_p − x_q)` over the 4-neighbours `q` of `p`
    /// inside the image.
    pub fn apply_gram(&self, x: &[f64]) -> Vec<f64> {
        let (h, w) = (self.height, self.width);
        assert_eq!(x.len(), h * w, "difference operator input length");
        let mut out = vec![0.0; h * w];
        for i in 0..h {
            for j in 0..w {
                let p = i * w + j;
                let v = x[p];
                let mut acc = 0.0;
                if j > 0 {
                    acc += v - x[p - 1];
                }
                if j + 1 < w {
                    acc += v - x[p + 1];
                }
                if i > 0 {
                    acc += v - x[p - w];
                }
                if i + 1 < h {
                    acc += v - x[p + w];
                }
                out[p] = acc;
            }
        }
        out
    }
}

impl LinearOperator for DifferenceOperator {
    fn rows(&self) -> usize {
        2 * self.height * self.width
    }

    fn cols(&self) -> usize {
        self.height * self.width
    }

    fn kind(&self) -> OperatorKind {
        OperatorKind::Difference
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let (h, w) = (self.height, self.width);
        assert_eq!(x.len(), h * w, "difference operator input length");
        let mut out = vec![0.0; 2 * h * w];
        let (dx, dy) = out.split_at_mut(h * w);
        for i in 0..h {
            for j in 0..w {
                let p = i * w + j;
                if j + 1 < w {
                    dx[p] = x[p + 1] - x[p];
                }
                if i + 1 < h {
                    dy[p] = x[p + w] - x[p];
                }
            }
        }
        out
    }

    fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        let (h, w) = (self.height, self.width);
        assert_eq!(y.len(), 2 * h * w, "difference operator transpose input length");
        let (dx, dy) = y.split_at(h * w);
        let mut out = vec![0.0; h * w];
        for i in 0..h {
            for j in 0..w {
                let p = i * w + j;
                if j + 1 < w {
                    out[p + 1] += dx[p];
                    out[p] -= dx[p];
                }
                if i + 1 < h {
                    out[p + w] += dy[p];
                    out[p] -= dy[p];
                }
            }
        }
        out
    }
}

/// Split-Bregman settings; `mu = None` means `μ = 2λ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitBregmanOptions {
    pub mu: Option<f64>,
    pub outer_iters: usize,
    pub inner_cg_iters: usize,
    pub inner_cg_tol: f64,
    pub convergence_tol: f64,
}

impl Default for SplitBregmanOptions {
    fn default() -> Self {
        Self {
            mu: None,
            outer_iters: 100,
            inner_cg_iters: 30,
            inner_cg_tol: 1e-6,
            convergence_tol: 1e-5,
        }
    }
}

impl SplitBregmanOptions {
    pub fn validate(&self) -> Result<()> {
        let mu_ok = self.mu.is_none_or(|m| m > 0.0);
        if !mu_ok
            || self.outer_iters == 0
            || self.inner_cg_iters == 0
            || !(self.inner_cg_tol > 0.0)
            || !(self.convergence_tol > 0.0)
        {
            return Err(Error::InvalidArgument(format!("invalid split-Bregman options {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOutcome {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Conjugate gradients for a symmetric positive (semi)definite `op`, starting
/// from the contents of `x`. Stops at `max_iter` or when
/// `‖rhs − op(x)‖ ≤ tol·‖rhs‖`.
pub fn conjugate_gradient<F>(op: F, rhs: &[f64], x: &mut [f64], max_iter: usize, tol: f64) -> Result<CgOutcome>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let rhs_norm = norm2(rhs);
    if rhs_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgOutcome {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let ax = op(x);
    let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut iterations = 0;
    while iterations < max_iter && rr.sqrt() > tol * rhs_norm {
        let ap = op(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) || !pap.is_finite() {
            return Err(Error::CgBreakdown {
                iteration: iterations,
            });
        }
        let alpha = rr / pap;
        for k in 0..x.len() {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for k in 0..p.len() {
            p[k] = r[k] + beta * p[k];
        }
        rr = rr_new;
        iterations += 1;
    }
    Ok(CgOutcome {
        iterations,
        relative_residual: rr.sqrt() / rhs_norm,
    })
}

/// `‖Ax − b‖² + λ‖Dx‖₁`
pub fn tv_objective(a: &dyn LinearOperator, d: &DifferenceOperator, b: &[f64], x: &[f64], lambda: f64) -> f64 {
    let r: Vec<f64> = a.apply(x).iter().zip(b).map(|(p, q)| p - q).collect();
    dot(&r, &r) + lambda * norm1(&d.apply(x))
}

fn shrink(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

/// Anisotropic TV reconstruction `min ‖Ax − b‖² + λ‖Dx‖₁` by split Bregman,
/// starting from `x = Aᵀb`, `d = Dx`, `w = 0`.
///
/// A failing inner solve reports the outer iteration in
/// [`Error::CgBreakdown`].
pub fn tv_solve_split_bregman(
    a: &dyn LinearOperator,
    d: &DifferenceOperator,
    b: &[f64],
    lambda: f64,
    opts: &SplitBregmanOptions,
) -> Result<Vec<f64>> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("TV weight must be positive, got {lambda}")));
    }
    opts.validate()?;
    if b.len() != a.rows() || a.cols() != d.cols() {
        return Err(Error::DimensionMismatch(format!(
            "operator {}x{}, data {}, image {}",
            a.rows(),
            a.cols(),
            b.len(),
            d.cols()
        )));
    }
    let mu = opts.mu.unwrap_or(2.0 * lambda);
    let threshold = lambda / (2.0 * mu);
    let atb = a.apply_transpose(b);
    let mut x = atb.clone();
    let mut dvar = d.apply(&x);
    let mut w = vec![0.0; dvar.len()];
    let normal = |v: &[f64]| -> Vec<f64> {
        let mut out = a.apply_transpose(&a.apply(v));
        let dtd = d.apply_gram(v);
        for (o, t) in out.iter_mut().zip(&dtd) {
            *o += mu * t;
        }
        out
    };
    for outer in 0..opts.outer_iters {
        let shifted: Vec<f64> = dvar.iter().zip(&w).map(|(p, q)| p - q).collect();
        let mut rhs = d.apply_transpose(&shifted);
        for (r, t) in rhs.iter_mut().zip(&atb) {
            *r = t + mu * *r;
        }
        let previous = x.clone();
        conjugate_gradient(normal, &rhs, &mut x, opts.inner_cg_iters, opts.inner_cg_tol)
            .map_err(|_| Error::CgBreakdown { iteration: outer })?;
        let dx = d.apply(&x);
        for k in 0..dvar.len() {
            dvar[k] = shrink(dx[k] + w[k], threshold);
            w[k] += dx[k] - dvar[k];
        }
        let change: f64 = x
            .iter()
            .zip(&previous)
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>()
            .sqrt();
        let scale = norm2(&x);
        if scale > 0.0 && change / scale < opts.convergence_tol {
            break;
        }
    }
    if !crate::linalg::all_finite(&x) {
        return Err(Error::NonFinite("split-Bregman iterate"));
    }
    Ok(x)
}
