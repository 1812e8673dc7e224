use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::GridImage;
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Parameters of a star-shaped inclusion centered at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StarShapeParams {
    pub gamma: f64,
    pub r0: f64,
    pub c: f64,
    pub n_terms: usize,
}

impl StarShapeParams {
    /// Default radius floor and amplification with the given regularity.
    pub fn with_gamma(gamma: f64) -> Self {
        Self {
            gamma,
            r0: 0.2 / (2.0 * PI).sqrt(),
            c: 0.25 * 0.2f64.exp(),
            n_terms: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 1.0) || !(self.r0 > 0.0) || !(self.c > 0.0) || self.n_terms == 0 {
            return Err(Error::InvalidArgument(format!("invalid star-shape parameters {self:?}")));
        }
        Ok(())
    }
}

/// Truncated periodic log-Gaussian radial function
/// `r(ξ) = r₀ + c·exp(π^{-1/2} Σᵢ i^{−γ} (X¹ᵢ cos iξ + X²ᵢ sin iξ))`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialField {
    pub params: StarShapeParams,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
}

impl RadialField {
    /// Draws `X¹ᵢ, X²ᵢ` in the order `X¹₁, X²₁, X¹₂, X²₂, …`.
    pub fn sample(stream: &mut RngStream, params: StarShapeParams) -> Self {
        let mut x1 = Vec::with_capacity(params.n_terms);
        let mut x2 = Vec::with_capacity(params.n_terms);
        for _ in 0..params.n_terms {
            x1.push(stream.normal(0.0, 1.0));
            x2.push(stream.normal(0.0, 1.0));
        }
        Self { params, x1, x2 }
    }

    pub fn radius(&self, xi: f64) -> f64 {
        let (s1, c1) = xi.sin_cos();
        let (mut s, mut c) = (s1, c1);
        let mut acc = 0.0;
        for k in 0..self.params.n_terms {
            let weight = ((k + 1) as f64).powf(-self.params.gamma);
            acc += weight * (self.x1[k] * c + self.x2[k] * s);
            // angle addition: (k+2)ξ from (k+1)ξ and ξ
            let next_c = c * c1 - s * s1;
            s = s * c1 + c * s1;
            c = next_c;
        }
        self.params.r0 + self.params.c * (acc / PI.sqrt()).exp()
    }

    /// Indicator image on `[−1, 1]²`, pixel centers `x = −1 + (j+½)·2/side`,
    /// `y = 1 − (i+½)·2/side`, restricted to the unit disk.
    pub fn render(&self, side: usize) -> GridImage {
        let h = 2.0 / side as f64;
        let mut pixels = vec![0.0; side * side];
        for i in 0..side {
            let y = 1.0 - (i as f64 + 0.5) * h;
            for j in 0..side {
                let x = -1.0 + (j as f64 + 0.5) * h;
                let rho = x.hypot(y);
                if rho <= 1.0 && rho <= self.radius(y.atan2(x)) {
                    pixels[i * side + j] = 1.0;
                }
            }
        }
        GridImage::new(side, side, pixels).expect("indicator image is finite")
    }
}

pub fn sample_star_inclusion(
    stream: &mut RngStream,
    params: StarShapeParams,
    side: usize,
) -> Result<(GridImage, RadialField)> {
    params.validate()?;
    if side < 8 {
        return Err(Error::InvalidArgument(format!("star image side must be >= 8, got {side}")));
    }
    let field = RadialField::sample(stream, params);
    Ok((field.render(side), field))
}

/// One ellipse of a phantom; `angle` is in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub intensity: f64,
    pub semi_x: f64,
    pub semi_y: f64,
    pub center_x: f64,
    pub center_y: f64,
    pub angle: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.to_radians().sin_cos();
        let dx = x - self.center_x;
        let dy = y - self.center_y;
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.semi_x).powi(2) + (v / self.semi_y).powi(2) <= 1.0
    }
}

/// The modified (high-contrast) Shepp–Logan head phantom.
pub fn shepp_logan_ellipses() -> Vec<Ellipse> {
    const TABLE: [[f64; 6]; 10] = [
        [1.0, 0.69, 0.92, 0.0, 0.0, 0.0],
        [-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0],
        [-0.2, 0.11, 0.31, 0.22, 0.0, -18.0],
        [-0.2, 0.16, 0.41, -0.22, 0.0, 18.0],
        [0.1, 0.21, 0.25, 0.0, 0.35, 0.0],
        [0.1, 0.046, 0.046, 0.0, 0.1, 0.0],
        [0.1, 0.046, 0.046, 0.0, -0.1, 0.0],
        [0.1, 0.046, 0.023, -0.08, -0.605, 0.0],
        [0.1, 0.023, 0.023, 0.0, -0.606, 0.0],
        [0.1, 0.023, 0.046, 0.06, -0.605, 0.0],
    ];
    TABLE
        .iter()
        .map(|r| Ellipse {
            intensity: r[0],
            semi_x: r[1],
            semi_y: r[2],
            center_x: r[3],
            center_y: r[4],
            angle: r[5],
        })
        .collect()
}

/// Rasterizes the ellipse sum at pixel centers and clips to `[0, 1]`.
pub fn phantom_from_ellipses(ellipses: &[Ellipse], side: usize) -> GridImage {
    let h = 2.0 / side as f64;
    let mut pixels = vec![0.0; side * side];
    for i in 0..side {
        let y = 1.0 - (i as f64 + 0.5) * h;
        for j in 0..side {
            let x = -1.0 + (j as f64 + 0.5) * h;
            let v: f64 = ellipses
                .iter()
                .filter(|e| e.contains(x, y))
                .map(|e| e.intensity)
                .sum();
            pixels[i * side + j] = v.clamp(0.0, 1.0);
        }
    }
    GridImage::new(side, side, pixels).expect("phantom values are finite")
}

/// Relative perturbation applied to every ellipse attribute.
pub const PHANTOM_JITTER: f64 = 0.1;

/// Shepp–Logan phantom with every ellipse attribute scaled by an independent
/// factor in `[1 − 0.1, 1 + 0.1)`.
pub fn sample_phantom(stream: &mut RngStream, side: usize) -> Result<GridImage> {
    sample_phantom_with_jitter(stream, side, PHANTOM_JITTER)
}

/// As [`sample_phantom`] with an explicit relative jitter.
pub fn sample_phantom_with_jitter(stream: &mut RngStream, side: usize, relative: f64) -> Result<GridImage> {
    if side < 16 {
        return Err(Error::InvalidArgument(format!("phantom side must be >= 16, got {side}")));
    }
    let mut jitter = || 1.0 + stream.uniform(-relative, relative);
    let ellipses: Vec<Ellipse> = shepp_logan_ellipses()
        .into_iter()
        .map(|e| Ellipse {
            center_x: e.center_x * jitter(),
            center_y: e.center_y * jitter(),
            semi_x: e.semi_x * jitter(),
            semi_y: e.semi_y * jitter(),
            angle: e.angle * jitter(),
            intensity: e.intensity * jitter(),
        })
        .collect();
    Ok(phantom_from_ellipses(&ellipses, side))
}
