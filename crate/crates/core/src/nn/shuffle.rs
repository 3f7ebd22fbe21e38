//! Sub-pixel rearrangement between channel depth and spatial resolution.
//!
//! Channel `c * r^2 + i * r + j` of the low-resolution input lands at
//! offset `(i, j)` inside each `r x r` output cell of channel `c`.

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

pub fn depth_to_space<T: Scalar>(x: &Tensor4<T>, r: usize) -> Result<Tensor4<T>> {
    let [n, c, h, w] = x.shape();
    if r == 0 || c % (r * r) != 0 {
        return shape_err(format!("depth_to_space({r}) on {:?}", x.shape()));
    }
    let co = c / (r * r);
    let mut out = Tensor4::zeros([n, co, h * r, w * r]);
    for b in 0..n {
        for oc in 0..co {
            for i in 0..r {
                for j in 0..r {
                    let src = x.plane(b, oc * r * r + i * r + j);
                    let dst = out.plane_mut(b, oc);
                    for y in 0..h {
                        let row = (y * r + i) * w * r;
                        for xx in 0..w {
                            dst[row + xx * r + j] = src[y * w + xx];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`depth_to_space`]; also its gradient.
pub fn space_to_depth<T: Scalar>(x: &Tensor4<T>, r: usize) -> Result<Tensor4<T>> {
    let [n, c, h, w] = x.shape();
    if r == 0 || h % r != 0 || w % r != 0 {
        return shape_err(format!("space_to_depth({r}) on {:?}", x.shape()));
    }
    let (oh, ow) = (h / r, w / r);
    let mut out = Tensor4::zeros([n, c * r * r, oh, ow]);
    for b in 0..n {
        for ic in 0..c {
            let src = x.plane(b, ic).to_vec();
            for i in 0..r {
                for j in 0..r {
                    let dst = out.plane_mut(b, ic * r * r + i * r + j);
                    for y in 0..oh {
                        let row = (y * r + i) * w;
                        for xx in 0..ow {
                            dst[y * ow + xx] = src[row + xx * r + j];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}
