use crate::error::{Error, Result};
use crate::forward::GridImage;
use crate::linalg::norm2;

/// Scale relating the median absolute deviation of Gaussian noise to `σ`.
const MAD_SCALE: f64 = 0.6745;

/// Median of a non-empty slice; the mean of the two middle values for even
/// lengths. NaNs are rejected.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("median of an empty slice".into()));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("median input"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Noise standard deviation from the finest Haar detail coefficients,
/// `median(|d|)/0.6745` with `dᵢ = (b₂ᵢ − b₂ᵢ₊₁)/√2`. A trailing odd sample is
/// ignored.
pub fn estimate_noise_level(b: &[f64]) -> Result<f64> {
    if b.len() < 2 {
        return Err(Error::InvalidArgument("noise estimate needs at least two samples".into()));
    }
    let details: Vec<f64> = b
        .chunks_exact(2)
        .map(|p| ((p[0] - p[1]) / std::f64::consts::SQRT_2).abs())
        .collect();
    Ok(median(&details)? / MAD_SCALE)
}

/// 2D variant using the diagonal details `(a − b − c + d)/2` of each 2×2
/// block; a trailing odd row or column is ignored.
pub fn estimate_noise_level_2d(image: &GridImage) -> Result<f64> {
    let (h, w) = (image.height(), image.width());
    if h < 2 || w < 2 {
        return Err(Error::InvalidArgument("noise estimate needs at least a 2x2 image".into()));
    }
    let mut details = Vec::with_capacity((h / 2) * (w / 2));
    for i in (0..h - 1).step_by(2) {
        for j in (0..w - 1).step_by(2) {
            let d = image.get(i, j) - image.get(i, j + 1) - image.get(i + 1, j) + image.get(i + 1, j + 1);
            details.push((0.5 * d).abs());
        }
    }
    Ok(median(&details)? / MAD_SCALE)
}

/// Relative noise level `σ̂√m / ‖b‖` matching `‖e‖/‖b‖` for white noise.
pub fn relative_noise_level(b: &[f64], sigma: f64) -> Result<f64> {
    let nb = norm2(b);
    if nb == 0.0 {
        return Err(Error::ZeroDenominator("relative noise level"));
    }
    Ok(sigma * (b.len() as f64).sqrt() / nb)
}
