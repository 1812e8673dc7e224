use super::{LinearOperator, OperatorKind};
use crate::error::{Error, Result};

/// Normalized 1D Gaussian factor; the 2D stencil is its outer product with
/// itself.
fn gaussian_factor(sigma: f64, stencil: usize) -> Vec<f64> {
    let r = (stencil / 2) as isize;
    let g: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// The `stencil×stencil` normalized Gaussian kernel, row-major.
pub fn gaussian_stencil(sigma: f64, stencil: usize) -> Vec<f64> {
    let g = gaussian_factor(sigma, stencil);
    g.iter().flat_map(|a| g.iter().map(move |b| a * b)).collect()
}

/// Zero-padded Gaussian blur of an `h×w` image.
#[derive(Debug, Clone)]
pub struct BlurOperator {
    height: usize,
    width: usize,
    factor: Vec<f64>,
}

pub fn gaussian_blur_operator(height: usize, width: usize, sigma: f64, stencil: usize) -> Result<BlurOperator> {
    if stencil.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("stencil size must be odd, got {stencil}")));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("blur sigma must be positive, got {sigma}")));
    }
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument("empty image".into()));
    }
    Ok(BlurOperator {
        height,
        width,
        factor: gaussian_factor(sigma, stencil),
    })
}

impl BlurOperator {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    fn convolve(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.height * self.width, "blur input length");
        let (h, w) = (self.height, self.width);
        let g = &self.factor;
        let r = g.len() / 2;
        // tap k of output index c reads input c + k − r when that is in range
        let taps = |c: usize, n: usize| (r.saturating_sub(c), (n + r - c).min(g.len()));
        let mut tmp = vec![0.0; x.len()];
        for i in 0..h {
            let row = &x[i * w..(i + 1) * w];
            for (j, t) in tmp[i * w..(i + 1) * w].iter_mut().enumerate() {
                let (k0, k1) = taps(j, w);
                let src = &row[j + k0 - r..j + k1 - r];
                *t = g[k0..k1].iter().zip(src).map(|(a, b)| a * b).sum();
            }
        }
        let mut out = vec![0.0; x.len()];
        for i in 0..h {
            let (k0, k1) = taps(i, h);
            let dst = &mut out[i * w..(i + 1) * w];
            for k in k0..k1 {
                let src = &tmp[(i + k - r) * w..(i + k - r + 1) * w];
                for (o, v) in dst.iter_mut().zip(src) {
                    *o += g[k] * v;
                }
            }
        }
        out
    }
}

impl LinearOperator for BlurOperator {
    fn rows(&self) -> usize {
        self.height * self.width
    }

    fn cols(&self) -> usize {
        self.height * self.width
    }

    fn kind(&self) -> OperatorKind {
        OperatorKind::Blur2d
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.convolve(x)
    }

    // symmetric stencil and zero padding make the operator self-adjoint
    fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        self.convolve(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::testing::adjoint_mismatch;
    use crate::rng::RngStream;

    #[test]
    fn delta_reproduces_stencil() {
        let op = gaussian_blur_operator(9, 9, 1.0, 5).unwrap();
        let mut x = vec![0.0; 81];
        x[4 * 9 + 4] = 1.0;
        let y = op.apply(&x);
        let st = gaussian_stencil(1.0, 5);
        for di in 0..5 {
            for dj in 0..5 {
                let got = y[(2 + di) * 9 + 2 + dj];
                assert!((got - st[di * 5 + dj]).abs() < 1e-15);
            }
        }
        assert!((st.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ones_stay_ones_in_interior() {
        let op = gaussian_blur_operator(10, 12, 1.0, 5).unwrap();
        let y = op.apply(&vec![1.0; 120]);
        for i in 2..8 {
            for j in 2..10 {
                assert!((y[i * 12 + j] - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matches_direct_stencil_matrix() {
        let (h, w) = (16, 16);
        let op = gaussian_blur_operator(h, w, 1.0, 5).unwrap();
        let st = gaussian_stencil(1.0, 5);
        // explicit dense matrix from the 2D stencil
        let mut dense = vec![0.0; h * w * h * w];
        for i in 0..h as isize {
            for j in 0..w as isize {
                for di in -2..=2isize {
                    for dj in -2..=2isize {
                        let (ii, jj) = (i + di, j + dj);
                        if ii >= 0 && jj >= 0 && ii < h as isize && jj < w as isize {
                            let row = (i * w as isize + j) as usize;
                            let col = (ii * w as isize + jj) as usize;
                            dense[row * h * w + col] = st[((di + 2) * 5 + dj + 2) as usize];
                        }
                    }
                }
            }
        }
        let mut s = RngStream::new(5);
        let x: Vec<f64> = (0..h * w).map(|_| s.uniform(0.0, 1.0)).collect();
        let y = op.apply(&x);
        for r in 0..h * w {
            let expect: f64 = (0..h * w).map(|c| dense[r * h * w + c] * x[c]).sum();
            assert!((y[r] - expect).abs() < 1e-12);
        }
        assert!(adjoint_mismatch(&op, 20, 1) < 1e-10);
    }

    #[test]
    fn rejects_even_stencil() {
        assert!(gaussian_blur_operator(8, 8, 1.0, 4).is_err());
    }
}
