//! Separable cubic resampling.
//!
//! Kernel: the Keys cubic with `a = -0.5`. Sample centres follow the
//! half-pixel convention `src = (dst + 0.5) / factor - 0.5`. When shrinking,
//! the kernel is stretched by `1 / factor` so every source pixel contributes
//! (the usual antialiased "imresize" behaviour). Out-of-range taps mirror
//! about the edge pixel without repeating it (`-1 -> 1`, `n -> n - 2`).

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

pub const CUBIC_A: f64 = -0.5;

/// Cubic convolution kernel.
pub fn cubic(x: f64) -> f64 {
    let a = CUBIC_A;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Mirror index into `[0, n)` without edge repetition.
pub fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

/// Per-output-index source taps and normalised weights along one axis.
pub(crate) fn axis_weights(in_len: usize, out_len: usize) -> Vec<Vec<(usize, f64)>> {
    let factor = out_len as f64 / in_len as f64;
    let stretch = if factor < 1.0 { factor } else { 1.0 };
    let support = 2.0 / stretch;
    (0..out_len)
        .map(|o| {
            let center = (o as f64 + 0.5) / factor - 0.5;
            let lo = (center - support).floor() as isize;
            let hi = (center + support).ceil() as isize;
            let mut taps: Vec<(usize, f64)> = Vec::new();
            let mut total = 0.0;
            for i in lo..=hi {
                let w = cubic((center - i as f64) * stretch);
                if w == 0.0 {
                    continue;
                }
                total += w;
                let src = reflect(i, in_len);
                match taps.iter_mut().find(|(s, _)| *s == src) {
                    Some(t) => t.1 += w,
                    None => taps.push((src, w)),
                }
            }
            for t in &mut taps {
                t.1 /= total;
            }
            taps
        })
        .collect()
}

/// Resamples every plane of `img` to `out_h x out_w`. No clamping.
pub fn resize<T: Scalar>(img: &Tensor4<T>, out_h: usize, out_w: usize) -> Tensor4<T> {
    let [n, c, h, w] = img.shape();
    let wx = axis_weights(w, out_w);
    let wy = axis_weights(h, out_h);
    let mut out = Tensor4::zeros([n, c, out_h, out_w]);
    let mut rows = vec![T::zero(); h * out_w];
    for b in 0..n {
        for ch in 0..c {
            let src = img.plane(b, ch);
            for y in 0..h {
                let line = &src[y * w..(y + 1) * w];
                for (x, taps) in wx.iter().enumerate() {
                    rows[y * out_w + x] = taps
                        .iter()
                        .fold(T::zero(), |acc, &(s, wt)| acc + line[s] * T::lit(wt));
                }
            }
            let dst = out.plane_mut(b, ch);
            for (y, taps) in wy.iter().enumerate() {
                for x in 0..out_w {
                    dst[y * out_w + x] = taps
                        .iter()
                        .fold(T::zero(), |acc, &(s, wt)| acc + rows[s * out_w + x] * T::lit(wt));
                }
            }
        }
    }
    out
}

fn clamp01<T: Scalar>(t: Tensor4<T>) -> Tensor4<T> {
    t.map(|v| v.max(T::zero()).min(T::one()))
}

/// Bicubic downscale by an integer factor, clamped to `[0, 1]`.
pub fn synth_lr<T: Scalar>(hr: &Tensor4<T>, scale: usize) -> Result<Tensor4<T>> {
    if !(2..=4).contains(&scale) {
        return shape_err(format!("scale must be 2, 3 or 4, got {scale}"));
    }
    let [_, _, h, w] = hr.shape();
    if h % scale != 0 || w % scale != 0 {
        return shape_err(format!("{h}x{w} image is not divisible by scale {scale}"));
    }
    Ok(clamp01(resize(hr, h / scale, w / scale)))
}

/// Bicubic upscale by an integer factor, clamped to `[0, 1]`.
pub fn bicubic_upscale<T: Scalar>(lr: &Tensor4<T>, scale: usize) -> Tensor4<T> {
    let [_, _, h, w] = lr.shape();
    clamp01(resize(lr, h * scale, w * scale))
}
