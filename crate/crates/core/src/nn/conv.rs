//! Stride-1 "same" convolution through an im2col buffer and a single GEMM per sample.

use super::param::{join, Param, Parameterized};
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;
use rand::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    /// `[cout, cin, kernel, kernel]`
    pub weight: Param<T>,
    /// `[cout]`
    pub bias: Param<T>,
}

impl<T: Scalar> Conv2d<T> {
    /// Fan-in scaled uniform initialisation for both weight and bias.
    pub fn new(cin: usize, cout: usize, kernel: usize, rng: &mut impl Rng) -> Self {
        assert!(kernel % 2 == 1, "only odd kernels keep spatial size");
        let bound = 1.0 / ((cin * kernel * kernel) as f64).sqrt();
        Self {
            cin,
            cout,
            kernel,
            weight: Param::uniform(&[cout, cin, kernel, kernel], bound, rng),
            bias: Param::uniform(&[cout], bound, rng),
        }
    }

    pub fn zeros(cin: usize, cout: usize, kernel: usize) -> Self {
        Self {
            cin,
            cout,
            kernel,
            weight: Param::zeros(&[cout, cin, kernel, kernel]),
            bias: Param::zeros(&[cout]),
        }
    }

    /// Pointwise identity map on `c` channels with zero bias.
    pub fn identity(c: usize) -> Self {
        let mut conv = Self::zeros(c, c, 1);
        for i in 0..c {
            conv.weight.value[i * c + i] = T::one();
        }
        conv
    }

    fn rows(&self) -> usize {
        self.cin * self.kernel * self.kernel
    }

    fn check_input(&self, x: &Tensor4<T>) -> Result<()> {
        if x.channels() != self.cin {
            return shape_err(format!(
                "conv expects {} input channels, got {:?}",
                self.cin,
                x.shape()
            ));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check_input(x)?;
        let [n, _, h, w] = x.shape();
        let hw = h * w;
        let k = self.rows();
        let mut out = Tensor4::zeros([n, self.cout, h, w]);
        let mut col = if self.kernel == 1 {
            Vec::new()
        } else {
            vec![T::zero(); k * hw]
        };
        for b in 0..n {
            let y = out.sample_mut(b);
            for (co, row) in y.chunks_exact_mut(hw).enumerate() {
                row.fill(self.bias.value[co]);
            }
            let src: &[T] = if self.kernel == 1 {
                x.sample(b)
            } else {
                im2col(x.sample(b), self.cin, h, w, self.kernel, &mut col);
                &col
            };
            T::gemm(
                self.cout,
                k,
                hw,
                T::one(),
                &self.weight.value,
                (k as isize, 1),
                src,
                (hw as isize, 1),
                T::one(),
                y,
                (hw as isize, 1),
            );
        }
        Ok(out)
    }

    /// Accumulates weight and bias gradients for input `x` and output gradient `dy`,
    /// and returns the input gradient when `need_dx` is set.
    pub fn backward(
        &mut self,
        x: &Tensor4<T>,
        dy: &Tensor4<T>,
        need_dx: bool,
    ) -> Result<Option<Tensor4<T>>> {
        self.check_input(x)?;
        let [n, _, h, w] = x.shape();
        dy.expect_shape([n, self.cout, h, w], "conv backward")?;
        let hw = h * w;
        let k = self.rows();
        let mut dx = need_dx.then(|| Tensor4::zeros(x.shape()));
        let pointwise = self.kernel == 1;
        let mut col = if pointwise { Vec::new() } else { vec![T::zero(); k * hw] };
        let mut dcol = if pointwise || !need_dx {
            Vec::new()
        } else {
            vec![T::zero(); k * hw]
        };
        for b in 0..n {
            let g = dy.sample(b);
            for (co, row) in g.chunks_exact(hw).enumerate() {
                self.bias.grad[co] += row.iter().fold(T::zero(), |a, &v| a + v);
            }
            let src: &[T] = if pointwise {
                x.sample(b)
            } else {
                im2col(x.sample(b), self.cin, h, w, self.kernel, &mut col);
                &col
            };
            // dW += dY * col^T
            T::gemm(
                self.cout,
                hw,
                k,
                T::one(),
                g,
                (hw as isize, 1),
                src,
                (1, hw as isize),
                T::one(),
                &mut self.weight.grad,
                (k as isize, 1),
            );
            if let Some(dx) = dx.as_mut() {
                // dcol = W^T * dY
                let target: &mut [T] = if pointwise { dx.sample_mut(b) } else { &mut dcol };
                T::gemm(
                    k,
                    self.cout,
                    hw,
                    T::one(),
                    &self.weight.value,
                    (1, k as isize),
                    g,
                    (hw as isize, 1),
                    T::zero(),
                    target,
                    (hw as isize, 1),
                );
                if !pointwise {
                    col2im(&dcol, self.cin, h, w, self.kernel, dx.sample_mut(b));
                }
            }
        }
        Ok(dx)
    }
}

impl<T: Scalar> Parameterized<T> for Conv2d<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Valid destination column range `[lo, hi)` for a horizontal shift of `d`.
#[inline]
fn valid_range(w: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (w as isize - d).clamp(0, w as isize) as usize;
    (lo.min(hi), hi)
}

/// Unfolds one sample `[c, h, w]` into `[c*k*k, h*w]` with zero padding `k/2`.
pub(crate) fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, k: usize, col: &mut [T]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            let dy = ky as isize - pad;
            for kx in 0..k {
                let dx = kx as isize - pad;
                let row = &mut col[((ci * k + ky) * k + kx) * hw..][..hw];
                let (lo, hi) = valid_range(w, dx);
                for y in 0..h {
                    let sy = y as isize + dy;
                    let dst = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let base = sy as usize * w;
                    dst[..lo].fill(T::zero());
                    dst[hi..].fill(T::zero());
                    let s0 = (lo as isize + dx) as usize;
                    dst[lo..hi].copy_from_slice(&plane[base + s0..base + s0 + (hi - lo)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `[c*k*k, h*w]` back, accumulating into `x`.
pub(crate) fn col2im<T: Scalar>(col: &[T], c: usize, h: usize, w: usize, k: usize, x: &mut [T]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            let dy = ky as isize - pad;
            for kx in 0..k {
                let dx = kx as isize - pad;
                let row = &col[((ci * k + ky) * k + kx) * hw..][..hw];
                let (lo, hi) = valid_range(w, dx);
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let base = sy as usize * w;
                    let s0 = (lo as isize + dx) as usize;
                    for (d, &s) in plane[base + s0..base + s0 + (hi - lo)]
                        .iter_mut()
                        .zip(&row[y * w + lo..y * w + hi])
                    {
                        *d += s;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct 7-loop convolution used as the reference.
    fn naive(conv: &Conv2d<f64>, x: &Tensor4<f64>) -> Tensor4<f64> {
        let [n, _, h, w] = x.shape();
        let k = conv.kernel;
        let p = (k / 2) as isize;
        Tensor4::from_fn([n, conv.cout, h, w], |[b, co, y, xx]| {
            let mut acc = conv.bias.value[co];
            for ci in 0..conv.cin {
                for ky in 0..k {
                    for kx in 0..k {
                        let sy = y as isize + ky as isize - p;
                        let sx = xx as isize + kx as isize - p;
                        if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                            acc += conv.weight.value[((co * conv.cin + ci) * k + ky) * k + kx]
                                * x.at([b, ci, sy as usize, sx as usize]);
                        }
                    }
                }
            }
            acc
        })
    }

    fn random(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor4<f64> {
        Tensor4::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn forward_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(cin, cout, k, h, w) in &[(2, 3, 3, 4, 5), (3, 2, 1, 3, 3), (1, 1, 3, 1, 2)] {
            let conv = Conv2d::<f64>::new(cin, cout, k, &mut rng);
            let x = random([2, cin, h, w], &mut rng);
            let got = conv.forward(&x).unwrap();
            let want = naive(&conv, &x);
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &k in &[1usize, 3] {
            let mut conv = Conv2d::<f64>::new(2, 3, k, &mut rng);
            let x = random([2, 2, 3, 4], &mut rng);
            let dy = random([2, 3, 3, 4], &mut rng);
            let objective = |c: &Conv2d<f64>, x: &Tensor4<f64>| -> f64 {
                let y = c.forward(x).unwrap();
                y.data().iter().zip(dy.data()).map(|(a, b)| a * b).sum()
            };
            let dx = conv.backward(&x, &dy, true).unwrap().unwrap();
            let h = 1e-6;
            for i in 0..x.len() {
                let mut xp = x.clone();
                xp.data_mut()[i] += h;
                let mut xm = x.clone();
                xm.data_mut()[i] -= h;
                let fd = (objective(&conv, &xp) - objective(&conv, &xm)) / (2.0 * h);
                assert!((fd - dx.data()[i]).abs() < 1e-7, "dx[{i}]");
            }
            for i in 0..conv.weight.len() {
                let mut cp = conv.clone();
                cp.weight.value[i] += h;
                let mut cm = conv.clone();
                cm.weight.value[i] -= h;
                let fd = (objective(&cp, &x) - objective(&cm, &x)) / (2.0 * h);
                assert!((fd - conv.weight.grad[i]).abs() < 1e-7, "dw[{i}]");
            }
            for i in 0..conv.bias.len() {
                let fd: f64 = dy.data().chunks(12).skip(i).step_by(3).flatten().sum();
                assert!((fd - conv.bias.grad[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn identity_conv_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random([2, 4, 3, 3], &mut rng);
        assert_eq!(Conv2d::identity(4).forward(&x).unwrap(), x);
    }

    #[test]
    fn rejects_channel_mismatch() {
        let conv = Conv2d::<f32>::zeros(3, 3, 3);
        assert!(conv.forward(&Tensor4::zeros([1, 2, 4, 4])).is_err());
    }
}
