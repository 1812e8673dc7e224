use super::{GridImage, LinearOperator, OperatorKind};
use crate::error::{Error, Result};
use crate::linalg::{Cholesky, DenseMatrix};
use crate::rng::RngStream;

/// 5-point Laplacian on a cell-centered `side×side` grid over `[0, 1]²` with
/// mirror (zero-flux) boundaries. Symmetric with zero row and column sums.
pub fn neumann_laplacian(side: usize) -> DenseMatrix {
    let n = side * side;
    let inv_h2 = (side * side) as f64;
    let mut l = DenseMatrix::zeros(n, n);
    for i in 0..side {
        for j in 0..side {
            let p = i * side + j;
            let mut neighbors = Vec::with_capacity(4);
            if i > 0 {
                neighbors.push(p - side);
            }
            if i + 1 < side {
                neighbors.push(p + side);
            }
            if j > 0 {
                neighbors.push(p - 1);
            }
            if j + 1 < side {
                neighbors.push(p + 1);
            }
            l.set(p, p, -(neighbors.len() as f64) * inv_h2);
            for q in neighbors {
                l.set(p, q, inv_h2);
            }
        }
    }
    l
}

fn laplacian_apply(side: usize, x: &[f64]) -> Vec<f64> {
    let inv_h2 = (side * side) as f64;
    let mut out = vec![0.0; x.len()];
    for i in 0..side {
        for j in 0..side {
            let p = i * side + j;
            let mut acc = 0.0;
            if i > 0 {
                acc += x[p - side] - x[p];
            }
            if i + 1 < side {
                acc += x[p + side] - x[p];
            }
            if j > 0 {
                acc += x[p - 1] - x[p];
            }
            if j + 1 < side {
                acc += x[p + 1] - x[p];
            }
            out[p] = acc * inv_h2;
        }
    }
    out
}

/// Crank–Nicolson solution map `x₀ ↦ x_T` of the heat equation with Neumann
/// boundaries, materialized as the dense matrix `(M⁻¹N)^steps`.
#[derive(Debug, Clone)]
pub struct DiffusionOperator {
    side: usize,
    t_final: f64,
    n_steps: usize,
    matrix: DenseMatrix,
    step_factor: Cholesky,
}

pub fn diffusion_operator(side: usize, t_final: f64, n_steps: usize) -> Result<DiffusionOperator> {
    if side < 3 {
        return Err(Error::InvalidArgument(format!("diffusion grid side must be >= 3, got {side}")));
    }
    if !(t_final > 0.0) || n_steps == 0 {
        return Err(Error::InvalidArgument(format!(
            "diffusion needs t_final > 0 and n_steps >= 1, got {t_final} and {n_steps}"
        )));
    }
    let n = side * side;
    let half_dt = 0.5 * t_final / n_steps as f64;
    let lap = neumann_laplacian(side);
    let mut m = DenseMatrix::identity(n);
    let mut nmat = DenseMatrix::identity(n);
    for (k, l) in lap.data().iter().enumerate() {
        m.data_mut()[k] -= half_dt * l;
        nmat.data_mut()[k] += half_dt * l;
    }
    let step_factor = Cholesky::factor(&m)
        .map_err(|_| Error::InvalidArgument("singular Crank-Nicolson step matrix".into()))?;
    let step = step_factor.solve_matrix(&nmat);
    let matrix = matrix_power(&step, n_steps)?;
    Ok(DiffusionOperator {
        side,
        t_final,
        n_steps,
        matrix,
        step_factor,
    })
}

fn matrix_power(base: &DenseMatrix, mut exp: usize) -> Result<DenseMatrix> {
    let mut result: Option<DenseMatrix> = None;
    let mut power = base.clone();
    loop {
        if exp & 1 == 1 {
            result = Some(match result {
                None => power.clone(),
                Some(r) => r.matmul(&power)?,
            });
        }
        exp >>= 1;
        if exp == 0 {
            break;
        }
        power = power.matmul(&power)?;
    }
    Ok(result.expect("exponent is at least one"))
}

impl DiffusionOperator {
    pub fn side(&self) -> usize {
        self.side
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }

    /// Applies the scheme step by step instead of through the dense power.
    pub fn time_step_apply(&self, x: &[f64]) -> Vec<f64> {
        let half_dt = 0.5 * self.t_final / self.n_steps as f64;
        let mut state = x.to_vec();
        for _ in 0..self.n_steps {
            let lx = laplacian_apply(self.side, &state);
            let rhs: Vec<f64> = state.iter().zip(&lx).map(|(a, b)| a + half_dt * b).collect();
            state = self.step_factor.solve(&rhs);
        }
        state
    }
}

impl LinearOperator for DiffusionOperator {
    fn rows(&self) -> usize {
        self.side * self.side
    }

    fn cols(&self) -> usize {
        self.side * self.side
    }

    fn kind(&self) -> OperatorKind {
        OperatorKind::Diffusion
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.matrix.matvec(x)
    }

    fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        self.matrix.matvec_transpose(y)
    }

    fn to_dense(&self) -> DenseMatrix {
        self.matrix.clone()
    }
}

/// Two anisotropic Gaussian bumps `a·ψ(ξ, c₁, ν₁) + ψ(ξ, c₂, ν₂)` with
/// `ψ(ξ, c, ν) = exp(−(ξ − c)ᵀ diag(ν) (ξ − c))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionInit {
    pub amplitude: f64,
    pub center1: [f64; 2],
    pub nu1: [f64; 2],
    pub center2: [f64; 2],
    pub nu2: [f64; 2],
}

impl DiffusionInit {
    pub fn sample(stream: &mut RngStream) -> Self {
        let amplitude = 0.7 * stream.normal(0.0, 1.0).abs();
        let mut pair = |lo: f64, hi: f64| [stream.uniform(lo, hi), stream.uniform(lo, hi)];
        let center1 = pair(0.1, 0.9);
        let nu1 = pair(0.05, 0.2);
        let center2 = pair(0.1, 0.9);
        let nu2 = pair(0.05, 0.2);
        Self {
            amplitude,
            center1,
            nu1,
            center2,
            nu2,
        }
    }

    /// Value at the point `ξ = (ξ₁, ξ₂)`.
    pub fn value(&self, xi: [f64; 2]) -> f64 {
        self.value_scaled(xi, 1.0)
    }

    /// Value with offsets `ξ − c` multiplied by `scale` before the quadratic
    /// form; `scale = side − 1` measures distances in pixel widths.
    pub fn value_scaled(&self, xi: [f64; 2], scale: f64) -> f64 {
        let psi = |c: [f64; 2], nu: [f64; 2]| {
            let d0 = scale * (xi[0] - c[0]);
            let d1 = scale * (xi[1] - c[1]);
            (-(nu[0] * d0 * d0 + nu[1] * d1 * d1)).exp()
        };
        self.amplitude * psi(self.center1, self.nu1) + psi(self.center2, self.nu2)
    }

    /// Cell-center coordinates of pixel `(i, j)`: `ξ = ((j + ½)/side, (i + ½)/side)`.
    pub fn grid_point(side: usize, i: usize, j: usize) -> [f64; 2] {
        let h = 1.0 / side as f64;
        [(j as f64 + 0.5) * h, (i as f64 + 0.5) * h]
    }

    pub fn render(&self, side: usize) -> GridImage {
        self.render_scaled(side, 1.0)
    }

    pub fn render_scaled(&self, side: usize, scale: f64) -> GridImage {
        let pixels = (0..side * side)
            .map(|k| self.value_scaled(Self::grid_point(side, k / side, k % side), scale))
            .collect();
        GridImage::new(side, side, pixels).expect("bump values are finite")
    }
}

pub fn sample_diffusion_init(stream: &mut RngStream, side: usize) -> GridImage {
    DiffusionInit::sample(stream).render(side)
}

/// [`sample_diffusion_init`] with bump offsets multiplied by `scale`.
pub fn sample_diffusion_init_scaled(stream: &mut RngStream, side: usize, scale: f64) -> GridImage {
    DiffusionInit::sample(stream).render_scaled(side, scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::testing::adjoint_mismatch;
    use crate::linalg::relative_error;

    #[test]
    fn constants_are_preserved() {
        let op = diffusion_operator(8, 0.01, 20).unwrap();
        let y = op.apply(&vec![2.5; 64]);
        for v in y {
            assert!((v - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn mass_linearity_and_adjoint() {
        let op = diffusion_operator(10, 0.01, 20).unwrap();
        let mut s = RngStream::new(11);
        let x: Vec<f64> = (0..100).map(|_| s.normal(0.0, 1.0)).collect();
        let z: Vec<f64> = (0..100).map(|_| s.normal(0.0, 1.0)).collect();
        let y = op.apply(&x);
        let before: f64 = x.iter().sum();
        let after: f64 = y.iter().sum();
        assert!((before - after).abs() <= 1e-10 * x.iter().map(|v| v.abs()).sum::<f64>());

        let combo: Vec<f64> = x.iter().zip(&z).map(|(a, b)| 0.3 * a - 1.7 * b).collect();
        let lhs = op.apply(&combo);
        let yz = op.apply(&z);
        for k in 0..100 {
            assert!((lhs[k] - (0.3 * y[k] - 1.7 * yz[k])).abs() < 1e-12);
        }
        assert!(adjoint_mismatch(&op, 20, 2) < 1e-10);
    }

    #[test]
    fn dense_power_matches_time_stepping() {
        let op = diffusion_operator(12, 0.01, 7).unwrap();
        let mut s = RngStream::new(12);
        let x: Vec<f64> = (0..144).map(|_| s.uniform(0.0, 1.0)).collect();
        assert!(relative_error(&op.apply(&x), &op.time_step_apply(&x)) < 1e-12);
    }

    #[test]
    fn bump_decays() {
        let side = 28;
        let op = diffusion_operator(side, 0.01, 20).unwrap();
        let bump: Vec<f64> = (0..side * side)
            .map(|k| {
                let p = DiffusionInit::grid_point(side, k / side, k % side);
                (-((p[0] - 0.5).powi(2) + (p[1] - 0.4).powi(2)) / 0.01).exp()
            })
            .collect();
        let y = op.apply(&bump);
        let max_in = bump.iter().copied().fold(f64::MIN, f64::max);
        let max_out = y.iter().copied().fold(f64::MIN, f64::max);
        assert!(max_out < max_in);
    }

    #[test]
    fn init_field_properties() {
        let mut s = RngStream::new(4);
        for _ in 0..20 {
            let p = DiffusionInit::sample(&mut s);
            let img = p.render(28);
            for v in img.pixels() {
                assert!(*v > 0.0 && *v <= 1.0 + p.amplitude);
            }
            for _ in 0..10 {
                let (i, j) = (s.below(28), s.below(28));
                let xi = DiffusionInit::grid_point(28, i, j);
                let d1 = [xi[0] - p.center1[0], xi[1] - p.center1[1]];
                let d2 = [xi[0] - p.center2[0], xi[1] - p.center2[1]];
                let expect = p.amplitude * (-(p.nu1[0] * d1[0] * d1[0] + p.nu1[1] * d1[1] * d1[1])).exp()
                    + (-(p.nu2[0] * d2[0] * d2[0] + p.nu2[1] * d2[1] * d2[1])).exp();
                assert!((img.get(i, j) - expect).abs() <= 1e-15);
            }
        }
        let mut p = DiffusionInit::sample(&mut s);
        p.amplitude = 0.0;
        let img = p.render(28);
        let arg = (0..784).max_by(|a, b| img.pixels()[*a].total_cmp(&img.pixels()[*b])).unwrap();
        let nearest_j = ((p.center2[0] * 28.0 - 0.5).round() as usize).min(27);
        let nearest_i = ((p.center2[1] * 28.0 - 0.5).round() as usize).min(27);
        assert_eq!(arg, nearest_i * 28 + nearest_j);
    }

    #[test]
    fn scaled_field_is_the_unit_field_with_stretched_offsets() {
        let p = DiffusionInit::sample(&mut RngStream::new(9));
        let scaled = p.render_scaled(28, 27.0);
        assert_eq!(p.render_scaled(28, 1.0), p.render(28));
        for (i, j) in [(0, 0), (5, 17), (27, 3)] {
            let xi = DiffusionInit::grid_point(28, i, j);
            let d1 = [27.0 * (xi[0] - p.center1[0]), 27.0 * (xi[1] - p.center1[1])];
            let d2 = [27.0 * (xi[0] - p.center2[0]), 27.0 * (xi[1] - p.center2[1])];
            let expect = p.amplitude * (-(p.nu1[0] * d1[0] * d1[0] + p.nu1[1] * d1[1] * d1[1])).exp()
                + (-(p.nu2[0] * d2[0] * d2[0] + p.nu2[1] * d2[1] * d2[1])).exp();
            assert!((scaled.get(i, j) - expect).abs() <= 1e-15);
        }
        // bumps are localized: some pixel is far below either peak
        assert!(scaled.pixels().iter().any(|&v| v < 0.05));
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(diffusion_operator(2, 0.01, 20).is_err());
        assert!(diffusion_operator(5, 0.0, 20).is_err());
        assert!(diffusion_operator(5, 0.01, 0).is_err());
    }
}
