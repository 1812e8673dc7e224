//! Forward operators and synthetic data generators.
//!
//! Images are vectorized row-major: pixel `(i, j)` of an `h×w` image sits at
//! index `i·w + j`, with `i` running top to bottom.

mod blur;
mod diffusion;
mod heat;
mod noise;
mod radon;
mod samplers;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

pub use blur::{gaussian_blur_operator, gaussian_stencil, BlurOperator};
pub use diffusion::{
    diffusion_operator, neumann_laplacian, sample_diffusion_init, sample_diffusion_init_scaled, DiffusionInit, DiffusionOperator,
};
pub use heat::{heat_kernel, heat_operator, heat_source_from_frequencies, sample_heat_source};
pub use noise::{add_noise, NoiseMode, NoiseSpec};
pub use radon::{radon_operator, RadonOperator};
pub use samplers::{
    phantom_from_ellipses, sample_phantom, sample_phantom_with_jitter, sample_star_inclusion, shepp_logan_ellipses, Ellipse,
    RadialField, StarShapeParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    Dense,
    Heat,
    Blur2d,
    Radon,
    Diffusion,
    Difference,
}

/// A linear map `A: Rⁿ → Rᵐ` with its transpose.
///
/// `apply` and `apply_transpose` panic on inputs of the wrong length.
pub trait LinearOperator: Send + Sync {
    /// Output dimension `m`.
    fn rows(&self) -> usize;
    /// Input dimension `n`.
    fn cols(&self) -> usize;
    fn kind(&self) -> OperatorKind;
    fn apply(&self, x: &[f64]) -> Vec<f64>;
    fn apply_transpose(&self, y: &[f64]) -> Vec<f64>;

    /// Column-by-column materialization.
    fn to_dense(&self) -> DenseMatrix {
        let (m, n) = (self.rows(), self.cols());
        let mut out = DenseMatrix::zeros(m, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.apply(&e);
            for (i, v) in col.iter().enumerate() {
                out.set(i, j, *v);
            }
            e[j] = 0.0;
        }
        out
    }
}

/// Explicit matrix operator.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    matrix: DenseMatrix,
    kind: OperatorKind,
}

impl DenseOperator {
    pub fn new(matrix: DenseMatrix) -> Self {
        Self::with_kind(matrix, OperatorKind::Dense)
    }

    pub fn with_kind(matrix: DenseMatrix, kind: OperatorKind) -> Self {
        Self { matrix, kind }
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }
}

impl LinearOperator for DenseOperator {
    fn rows(&self) -> usize {
        self.matrix.rows()
    }

    fn cols(&self) -> usize {
        self.matrix.cols()
    }

    fn kind(&self) -> OperatorKind {
        self.kind
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

/// A finite image stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GridImage {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl GridImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "{} pixels for a {height}x{width} image",
                pixels.len()
            )));
        }
        if !crate::linalg::all_finite(&pixels) {
            return Err(Error::NonFinite("image pixels"));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pixels[i * self.width + j]
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }
}
