use super::{dot, norm2, DenseMatrix};
use crate::error::{Error, Result};

/// Singular-value cutoff used by [`lstsq`], relative to the largest singular value.
pub const LSTSQ_RTOL: f64 = 1e-12;

const MAX_SWEEPS: usize = 80;
const JACOBI_TOL: f64 = 1e-15;

/// Thin SVD `A = U diag(σ) Vᵀ` with `r = min(m, n)` columns.
#[derive(Debug, Clone)]
pub struct SvdFactorization {
    /// `m×r`, orthonormal columns.
    pub u: DenseMatrix,
    /// Length `r`, nonincreasing, nonnegative.
    pub singular_values: Vec<f64>,
    /// `n×r`, orthonormal columns.
    pub v: DenseMatrix,
}

impl SvdFactorization {
    pub fn rank_bound(&self) -> usize {
        self.singular_values.len()
    }

    pub fn rows(&self) -> usize {
        self.u.rows()
    }

    pub fn cols(&self) -> usize {
        self.v.rows()
    }

    /// `Uᵀ b`
    pub fn project(&self, b: &[f64]) -> Vec<f64> {
        self.u.matvec_transpose(b)
    }

    /// `U diag(σ) Vᵀ`
    pub fn reconstruct(&self) -> DenseMatrix {
        let (m, n, r) = (self.rows(), self.cols(), self.rank_bound());
        DenseMatrix::from_fn(m, n, |i, j| {
            (0..r)
                .map(|k| self.u.get(i, k) * self.singular_values[k] * self.v.get(j, k))
                .sum()
        })
    }

    /// `Σ_k coeffs[k] · v_k`
    pub fn combine_right(&self, coeffs: &[f64]) -> Vec<f64> {
        debug_assert_eq!(coeffs.len(), self.rank_bound());
        let n = self.cols();
        let r = self.rank_bound();
        let v = self.v.data();
        (0..n)
            .map(|j| dot(&v[j * r..(j + 1) * r], coeffs))
            .collect()
    }
}

/// One-sided (Hestenes) Jacobi SVD.
///
/// Tall inputs are first reduced by a Householder QR so the Jacobi sweeps run
/// on a square triangular factor; wide inputs are handled through `Aᵀ`.
pub fn svd(a: &DenseMatrix) -> Result<SvdFactorization> {
    let (m, n) = (a.rows(), a.cols());
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument("svd of an empty matrix".into()));
    }
    if !super::all_finite(a.data()) {
        return Err(Error::NonFinite("svd input"));
    }
    if m < n {
        let t = svd(&a.transpose())?;
        return Ok(SvdFactorization {
            u: t.v,
            singular_values: t.singular_values,
            v: t.u,
        });
    }
    if m > n {
        let (q_cols, r) = householder_qr(a);
        let inner = jacobi_columns(r, n)?;
        // U = Q · U_r
        let mut u = DenseMatrix::zeros(m, n);
        for k in 0..n {
            let mut col = vec![0.0; m];
            for (j, qj) in q_cols.iter().enumerate() {
                let c = inner.u.get(j, k);
                if c != 0.0 {
                    super::axpy(c, qj, &mut col);
                }
            }
            for (i, v) in col.into_iter().enumerate() {
                u.set(i, k, v);
            }
        }
        return Ok(SvdFactorization {
            u,
            singular_values: inner.singular_values,
            v: inner.v,
        });
    }
    let cols: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    jacobi_columns(cols, m)
}

/// Runs Jacobi sweeps on a column-major working copy (one `Vec` per column).
fn jacobi_columns(mut g: Vec<Vec<f64>>, m: usize) -> Result<SvdFactorization> {
    let n = g.len();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    let mut norms: Vec<f64> = g.iter().map(|c| dot(c, c)).collect();

    let mut converged = false;
    for _sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = norms[p];
                let beta = norms[q];
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let gamma = dot(&g[p], &g[q]);
                if gamma == 0.0 || gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + 1.0f64.hypot(zeta));
                let c = 1.0 / 1.0f64.hypot(t);
                let s = c * t;
                let (gp, gq) = pair_mut(&mut g, p, q);
                rotate(gp, gq, c, s);
                let (vp, vq) = pair_mut(&mut v, p, q);
                rotate(vp, vq, c, s);
                norms[p] = dot(&g[p], &g[p]);
                norms[q] = dot(&g[q], &g[q]);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            what: "jacobi svd",
            iterations: MAX_SWEEPS,
        });
    }

    let mut sigma: Vec<f64> = g.iter().map(|c| norm2(c)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]).then(i.cmp(&j)));
    let sigma_max = sigma[order[0]];

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut v_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut sorted_sigma = Vec::with_capacity(n);
    let mut needs_completion = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        let s = sigma[j];
        if s > 0.0 && s > sigma_max * 1e-300 {
            u_cols.push(g[j].iter().map(|x| x / s).collect());
        } else {
            u_cols.push(vec![0.0; m]);
            needs_completion.push(k);
            sigma[j] = 0.0;
        }
        sorted_sigma.push(sigma[j]);
        v_cols.push(std::mem::take(&mut v[j]));
    }
    for k in needs_completion {
        u_cols[k] = orthonormal_complement(&u_cols, k, m);
    }

    let mut u = DenseMatrix::zeros(m, n);
    let mut vm = DenseMatrix::zeros(n, n);
    for k in 0..n {
        for i in 0..m {
            u.set(i, k, u_cols[k][i]);
        }
        for i in 0..n {
            vm.set(i, k, v_cols[k][i]);
        }
    }
    Ok(SvdFactorization {
        u,
        singular_values: sorted_sigma,
        v: vm,
    })
}

fn pair_mut(cols: &mut [Vec<f64>], p: usize, q: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(p < q);
    let (head, tail) = cols.split_at_mut(q);
    (&mut head[p], &mut tail[0])
}

#[inline]
fn rotate(a: &mut [f64], b: &mut [f64], c: f64, s: f64) {
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let xv = *x;
        let yv = *y;
        *x = c * xv - s * yv;
        *y = s * xv + c * yv;
    }
}

/// A unit vector orthogonal to every nonzero column in `cols` except `skip`.
fn orthonormal_complement(cols: &[Vec<f64>], skip: usize, m: usize) -> Vec<f64> {
    for e in 0..m {
        let mut cand = vec![0.0; m];
        cand[e] = 1.0;
        for _pass in 0..2 {
            for (k, c) in cols.iter().enumerate() {
                if k == skip {
                    continue;
                }
                let proj = dot(c, &cand);
                if proj != 0.0 {
                    super::axpy(-proj, c, &mut cand);
                }
            }
        }
        let nrm = norm2(&cand);
        if nrm > 1e-8 {
            return cand.into_iter().map(|x| x / nrm).collect();
        }
    }
    unreachable!("an m-dimensional space always has room for the completion")
}

/// Householder QR of a tall `m×n` matrix. Returns the thin `Q` as `n`
/// columns of length `m` and `R` as `n` columns of length `n`.
fn householder_qr(a: &DenseMatrix) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let (m, n) = (a.rows(), a.cols());
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(n);
    for k in 0..n {
        let x = &cols[k][k..];
        let alpha = norm2(x);
        let mut v = x.to_vec();
        if alpha == 0.0 {
            reflectors.push(vec![0.0; m - k]);
            continue;
        }
        let sign = if v[0] >= 0.0 { 1.0 } else { -1.0 };
        v[0] += sign * alpha;
        let vn = norm2(&v);
        for t in &mut v {
            *t /= vn;
        }
        for col in cols.iter_mut().skip(k) {
            let tail = &mut col[k..];
            let proj = 2.0 * dot(&v, tail);
            super::axpy(-proj, &v, tail);
        }
        reflectors.push(v);
    }
    let r: Vec<Vec<f64>> = cols
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let mut rc = vec![0.0; n];
            rc[..=j].copy_from_slice(&c[..=j]);
            rc
        })
        .collect();
    let q: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; m];
            e[j] = 1.0;
            for k in (0..n).rev() {
                let v = &reflectors[k];
                let tail = &mut e[k..];
                let proj = 2.0 * dot(v, tail);
                if proj != 0.0 {
                    super::axpy(-proj, v, tail);
                }
            }
            e
        })
        .collect();
    (q, r)
}

/// Minimum-norm least-squares solution via the SVD with cutoff
/// [`LSTSQ_RTOL`]`·σ_max`.
pub fn lstsq(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    lstsq_with_rtol(a, b, LSTSQ_RTOL)
}

pub fn lstsq_with_rtol(a: &DenseMatrix, b: &[f64], rtol: f64) -> Result<Vec<f64>> {
    if b.len() != a.rows() {
        return Err(Error::DimensionMismatch(format!(
            "rhs of length {} for a {}x{} system",
            b.len(),
            a.rows(),
            a.cols()
        )));
    }
    let f = svd(a)?;
    Ok(lstsq_from_svd(&f, b, rtol))
}

pub(crate) fn lstsq_from_svd(f: &SvdFactorization, b: &[f64], rtol: f64) -> Vec<f64> {
    let utb = f.project(b);
    let smax = f.singular_values.first().copied().unwrap_or(0.0);
    let coeffs: Vec<f64> = f
        .singular_values
        .iter()
        .zip(&utb)
        .map(|(&s, &c)| if s > rtol * smax && s > 0.0 { c / s } else { 0.0 })
        .collect();
    f.combine_right(&coeffs)
}
