//! Batched layer kernels on flat row-major buffers. Every backward routine
//! accumulates parameter gradients in a fixed sample order.

use crate::linalg::gemm;

pub(crate) const BATCHNORM_EPS: f64 = 1e-5;
pub(crate) const BATCHNORM_MOMENTUM: f64 = 0.1;

/// `y = x Wᵀ + b` for `x: batch × inputs`, `W: outputs × inputs`.
pub(crate) fn dense_forward(x: &[f64], batch: usize, inputs: usize, outputs: usize, w: &[f64], b: Option<&[f64]>) -> Vec<f64> {
    let mut y = vec![0.0; batch * outputs];
    if let Some(b) = b {
        for row in y.chunks_exact_mut(outputs) {
            row.copy_from_slice(b);
        }
    }
    gemm(batch, inputs, outputs, 1.0, x, false, w, true, if b.is_some() { 1.0 } else { 0.0 }, &mut y);
    y
}

/// Writes `dW` (and `db`) into `grad` and returns `dx`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn dense_backward(
    x: &[f64],
    dy: &[f64],
    batch: usize,
    inputs: usize,
    outputs: usize,
    w: &[f64],
    grad_w: &mut [f64],
    grad_b: Option<&mut [f64]>,
) -> Vec<f64> {
    gemm(outputs, batch, inputs, 1.0, dy, true, x, false, 0.0, grad_w);
    if let Some(gb) = grad_b {
        gb.iter_mut().for_each(|g| *g = 0.0);
        for row in dy.chunks_exact(outputs) {
            for (g, d) in gb.iter_mut().zip(row) {
                *g += d;
            }
        }
    }
    let mut dx = vec![0.0; batch * inputs];
    gemm(batch, outputs, inputs, 1.0, dy, false, w, false, 0.0, &mut dx);
    dx
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub pad: usize,
    pub out_channels: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        self.height + 2 * self.pad + 1 - self.kernel_h
    }

    pub fn out_w(&self) -> usize {
        self.width + 2 * self.pad + 1 - self.kernel_w
    }

    fn patch_len(&self) -> usize {
        self.channels * self.kernel_h * self.kernel_w
    }

    fn positions(&self) -> usize {
        self.out_h() * self.out_w()
    }

    fn in_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Calls `f(col_row, position, input_index)` for every in-bounds tap.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (oh, ow) = (self.out_h(), self.out_w());
        for c in 0..self.channels {
            for di in 0..self.kernel_h {
                for dj in 0..self.kernel_w {
                    let row = (c * self.kernel_h + di) * self.kernel_w + dj;
                    for oy in 0..oh {
                        let iy = (oy + di) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.height as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox + dj) as isize - self.pad as isize;
                            if ix < 0 || ix >= self.width as isize {
                                continue;
                            }
                            f(row, oy * ow + ox, (c * self.height + iy as usize) * self.width + ix as usize);
                        }
                    }
                }
            }
        }
    }

    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        cols.iter_mut().for_each(|v| *v = 0.0);
        let p = self.positions();
        self.for_each_tap(|row, pos, idx| cols[row * p + pos] = x[idx]);
    }

    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let p = self.positions();
        self.for_each_tap(|row, pos, idx| dx[idx] += cols[row * p + pos]);
    }
}

pub(crate) fn conv_forward(x: &[f64], batch: usize, g: &ConvGeometry, w: &[f64], b: &[f64]) -> Vec<f64> {
    let (k, p) = (g.patch_len(), g.positions());
    let out_len = g.out_channels * p;
    let mut y = vec![0.0; batch * out_len];
    let mut cols = vec![0.0; k * p];
    for s in 0..batch {
        g.im2col(&x[s * g.in_len()..(s + 1) * g.in_len()], &mut cols);
        let ys = &mut y[s * out_len..(s + 1) * out_len];
        for (row, bias) in ys.chunks_exact_mut(p).zip(b) {
            row.iter_mut().for_each(|v| *v = *bias);
        }
        gemm(g.out_channels, k, p, 1.0, w, false, &cols, false, 1.0, ys);
    }
    y
}

pub(crate) fn conv_backward(
    x: &[f64],
    dy: &[f64],
    batch: usize,
    g: &ConvGeometry,
    w: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
) -> Vec<f64> {
    let (k, p) = (g.patch_len(), g.positions());
    let out_len = g.out_channels * p;
    grad_w.iter_mut().for_each(|v| *v = 0.0);
    grad_b.iter_mut().for_each(|v| *v = 0.0);
    let mut dx = vec![0.0; batch * g.in_len()];
    let mut cols = vec![0.0; k * p];
    let mut dcols = vec![0.0; k * p];
    for s in 0..batch {
        let dys = &dy[s * out_len..(s + 1) * out_len];
        g.im2col(&x[s * g.in_len()..(s + 1) * g.in_len()], &mut cols);
        gemm(g.out_channels, p, k, 1.0, dys, false, &cols, true, 1.0, grad_w);
        for (gb, row) in grad_b.iter_mut().zip(dys.chunks_exact(p)) {
            *gb += row.iter().sum::<f64>();
        }
        gemm(k, g.out_channels, p, 1.0, w, true, dys, false, 0.0, &mut dcols);
        g.col2im(&dcols, &mut dx[s * g.in_len()..(s + 1) * g.in_len()]);
    }
    dx
}

/// Non-overlapping `k × k` pooling; trailing rows/columns are dropped.
/// Returns the output and, for max pooling, the winning input index.
pub(crate) fn pool_forward(x: &[f64], batch: usize, shape: &[usize], k: usize, max: bool) -> (Vec<f64>, Vec<usize>) {
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let (oh, ow) = (h / k, w / k);
    let mut y = Vec::with_capacity(batch * c * oh * ow);
    let mut arg = Vec::new();
    let inv = 1.0 / (k * k) as f64;
    for plane in 0..batch * c {
        let base = plane * h * w;
        for i in 0..oh {
            for j in 0..ow {
                if max {
                    let mut best = base + i * k * w + j * k;
                    for di in 0..k {
                        for dj in 0..k {
                            let idx = base + (i * k + di) * w + j * k + dj;
                            if x[idx] > x[best] {
                                best = idx;
                            }
                        }
                    }
                    y.push(x[best]);
                    arg.push(best);
                } else {
                    let mut acc = 0.0;
                    for di in 0..k {
                        for dj in 0..k {
                            acc += x[base + (i * k + di) * w + j * k + dj];
                        }
                    }
                    y.push(acc * inv);
                }
            }
        }
    }
    (y, arg)
}

pub(crate) fn pool_backward(dy: &[f64], batch: usize, shape: &[usize], k: usize, argmax: Option<&[usize]>) -> Vec<f64> {
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let mut dx = vec![0.0; batch * c * h * w];
    if let Some(arg) = argmax {
        for (d, &idx) in dy.iter().zip(arg) {
            dx[idx] += d;
        }
        return dx;
    }
    let (oh, ow) = (h / k, w / k);
    let inv = 1.0 / (k * k) as f64;
    for plane in 0..batch * c {
        let base = plane * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let d = dy[(plane * oh + i) * ow + j] * inv;
                for di in 0..k {
                    for dj in 0..k {
                        dx[base + (i * k + di) * w + j * k + dj] += d;
                    }
                }
            }
        }
    }
    dx
}

/// Batch statistics kept for the backward pass and running averages.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BatchNormCache {
    pub normalized: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    /// Biased batch variance.
    pub var: Vec<f64>,
    pub count: usize,
}

/// Train mode normalizes with batch statistics; eval mode with `running`
/// (`[mean; channels] ++ [var; channels]`).
pub(crate) fn batchnorm_forward(
    x: &[f64],
    batch: usize,
    shape: &[usize],
    params: &[f64],
    running: &[f64],
    train: bool,
) -> (Vec<f64>, BatchNormCache) {
    let c = shape[0];
    let plane = shape[1] * shape[2];
    let n = batch * plane;
    let (gamma, beta) = params.split_at(c);
    let (mut mean, mut var) = (vec![0.0; c], vec![0.0; c]);
    if train {
        for s in 0..batch {
            for ch in 0..c {
                let off = (s * c + ch) * plane;
                mean[ch] += x[off..off + plane].iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        for s in 0..batch {
            for ch in 0..c {
                let off = (s * c + ch) * plane;
                var[ch] += x[off..off + plane].iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= n as f64);
    } else {
        mean.copy_from_slice(&running[..c]);
        var.copy_from_slice(&running[c..2 * c]);
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BATCHNORM_EPS).sqrt()).collect();
    let mut normalized = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    for s in 0..batch {
        for ch in 0..c {
            let off = (s * c + ch) * plane;
            for i in off..off + plane {
                normalized[i] = (x[i] - mean[ch]) * inv_std[ch];
                y[i] = gamma[ch] * normalized[i] + beta[ch];
            }
        }
    }
    (
        y,
        BatchNormCache {
            normalized,
            inv_std,
            mean,
            var,
            count: n,
        },
    )
}

pub(crate) fn batchnorm_backward(
    dy: &[f64],
    batch: usize,
    shape: &[usize],
    params: &[f64],
    cache: &BatchNormCache,
    train: bool,
    grad: &mut [f64],
) -> Vec<f64> {
    let c = shape[0];
    let plane = shape[1] * shape[2];
    let gamma = &params[..c];
    let (sum_dy, sum_dy_xhat) = {
        let (mut a, mut b) = (vec![0.0; c], vec![0.0; c]);
        for s in 0..batch {
            for ch in 0..c {
                let off = (s * c + ch) * plane;
                for i in off..off + plane {
                    a[ch] += dy[i];
                    b[ch] += dy[i] * cache.normalized[i];
                }
            }
        }
        (a, b)
    };
    grad[..c].copy_from_slice(&sum_dy_xhat);
    grad[c..2 * c].copy_from_slice(&sum_dy);
    let n = cache.count as f64;
    let mut dx = vec![0.0; dy.len()];
    for s in 0..batch {
        for ch in 0..c {
            let off = (s * c + ch) * plane;
            let k = gamma[ch] * cache.inv_std[ch];
            for i in off..off + plane {
                dx[i] = if train {
                    k * (dy[i] - (sum_dy[ch] + cache.normalized[i] * sum_dy_xhat[ch]) / n)
                } else {
                    k * dy[i]
                };
            }
        }
    }
    dx
}

/// Exponential running averages; the variance uses the unbiased estimate.
pub(crate) fn batchnorm_update_running(running: &mut [f64], cache: &BatchNormCache) {
    let c = cache.mean.len();
    let n = cache.count as f64;
    let unbias = if cache.count > 1 { n / (n - 1.0) } else { 1.0 };
    for ch in 0..c {
        running[ch] = (1.0 - BATCHNORM_MOMENTUM) * running[ch] + BATCHNORM_MOMENTUM * cache.mean[ch];
        running[c + ch] = (1.0 - BATCHNORM_MOMENTUM) * running[c + ch] + BATCHNORM_MOMENTUM * cache.var[ch] * unbias;
    }
}
