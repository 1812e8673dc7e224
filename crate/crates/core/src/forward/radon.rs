use std::f64::consts::{PI, SQRT_2};

use super::{LinearOperator, OperatorKind};
use crate::error::{Error, Result};

/// Parallel-beam projector on an `n×n` pixel grid covering `[−1, 1]²`.
///
/// Row `a·n_rays + r` is the ray at angle `aπ/n_angles` whose signed offset is
/// the center of detector bin `r` on `[−√2, √2]`. Entries are exact
/// ray–pixel intersection lengths, stored in compressed sparse rows.
#[derive(Debug, Clone)]
pub struct RadonOperator {
    n: usize,
    n_angles: usize,
    n_rays: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

pub fn radon_operator(n: usize, n_angles: usize, n_rays: usize) -> Result<RadonOperator> {
    if n == 0 || n_angles == 0 || n_rays == 0 {
        return Err(Error::InvalidArgument(format!(
            "radon operator needs positive sizes, got n={n}, angles={n_angles}, rays={n_rays}"
        )));
    }
    let pixel = 2.0 / n as f64;
    let spacing = 2.0 * SQRT_2 / n_rays as f64;
    let mut row_ptr = Vec::with_capacity(n_angles * n_rays + 1);
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    row_ptr.push(0);
    let mut entries: Vec<(usize, f64)> = Vec::new();
    let mut crossings: Vec<f64> = Vec::new();
    for a in 0..n_angles {
        let theta = a as f64 * PI / n_angles as f64;
        let (sin, cos) = theta.sin_cos();
        let dir = [-sin, cos];
        for r in 0..n_rays {
            let s = -SQRT_2 + (r as f64 + 0.5) * spacing;
            let origin = [s * cos, s * sin];
            entries.clear();
            trace_ray(origin, dir, n, pixel, &mut crossings, &mut entries);
            entries.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for (c, v) in entries.iter().copied() {
                if last == Some(c) {
                    *values.last_mut().expect("entry pushed for repeated column") += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(col_idx.len());
        }
    }
    Ok(RadonOperator {
        n,
        n_angles,
        n_rays,
        row_ptr,
        col_idx,
        values,
    })
}

/// Pushes `(pixel, length)` pairs for the line `origin + t·dir`, `|dir| = 1`.
fn trace_ray(
    origin: [f64; 2],
    dir: [f64; 2],
    n: usize,
    pixel: f64,
    crossings: &mut Vec<f64>,
    entries: &mut Vec<(usize, f64)>,
) {
    const EPS: f64 = 1e-14;
    let mut t_lo = f64::NEG_INFINITY;
    let mut t_hi = f64::INFINITY;
    for k in 0..2 {
        if dir[k].abs() < EPS {
            if origin[k].abs() >= 1.0 {
                return;
            }
        } else {
            let t1 = (-1.0 - origin[k]) / dir[k];
            let t2 = (1.0 - origin[k]) / dir[k];
            t_lo = t_lo.max(t1.min(t2));
            t_hi = t_hi.min(t1.max(t2));
        }
    }
    if !(t_hi - t_lo > EPS) {
        return;
    }
    crossings.clear();
    crossings.push(t_lo);
    crossings.push(t_hi);
    for k in 0..2 {
        if dir[k].abs() < EPS {
            continue;
        }
        for line in 1..n {
            let t = (-1.0 + line as f64 * pixel - origin[k]) / dir[k];
            if t > t_lo && t < t_hi {
                crossings.push(t);
            }
        }
    }
    crossings.sort_by(|a, b| a.total_cmp(b));
    for pair in crossings.windows(2) {
        let len = pair[1] - pair[0];
        if len <= EPS {
            continue;
        }
        let mid = 0.5 * (pair[0] + pair[1]);
        let x = origin[0] + mid * dir[0];
        let y = origin[1] + mid * dir[1];
        let j = (((x + 1.0) / pixel).floor() as isize).clamp(0, n as isize - 1) as usize;
        let i = (((1.0 - y) / pixel).floor() as isize).clamp(0, n as isize - 1) as usize;
        entries.push((i * n + j, len));
    }
}

impl RadonOperator {
    pub fn side(&self) -> usize {
        self.n
    }

    pub fn n_angles(&self) -> usize {
        self.n_angles
    }

    pub fn n_rays(&self) -> usize {
        self.n_rays
    }

    /// Detector bin width `2√2 / n_rays`.
    pub fn ray_spacing(&self) -> f64 {
        2.0 * SQRT_2 / self.n_rays as f64
    }

    /// Nonzero `(column, value)` pairs of one row.
    pub fn row_entries(&self, row: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[row]..self.row_ptr[row + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }
}

impl LinearOperator for RadonOperator {
    fn rows(&self) -> usize {
        self.n_angles * self.n_rays
    }

    fn cols(&self) -> usize {
        self.n * self.n
    }

    fn kind(&self) -> OperatorKind {
        OperatorKind::Radon
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols(), "radon input length");
        (0..self.rows())
            .map(|r| self.row_entries(r).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.rows(), "radon transpose input length");
        let mut out = vec![0.0; self.cols()];
        for (r, yr) in y.iter().enumerate() {
            for (c, v) in self.row_entries(r) {
                out[c] += v * yr;
            }
        }
        out
    }
}
