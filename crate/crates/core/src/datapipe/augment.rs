use crate::scalar::Scalar;
use crate::tensor::Tensor4;
use serde::{Deserialize, Serialize};
use std::fmt;

/// One element of the dihedral group of the square, applied as
/// horizontal flip, then vertical flip, then a 90° counter-clockwise turn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Augment {
    pub hflip: bool,
    pub vflip: bool,
    pub rot90: bool,
}

impl Augment {
    pub const IDENTITY: Augment = Augment {
        hflip: false,
        vflip: false,
        rot90: false,
    };

    pub fn from_index(i: u8) -> Self {
        Self {
            hflip: i & 1 != 0,
            vflip: i & 2 != 0,
            rot90: i & 4 != 0,
        }
    }

    pub fn index(self) -> u8 {
        self.hflip as u8 | (self.vflip as u8) << 1 | (self.rot90 as u8) << 2
    }

    pub fn all() -> [Augment; 8] {
        std::array::from_fn(|i| Self::from_index(i as u8))
    }

    pub fn code(self) -> &'static str {
        [
            "identity",
            "hflip",
            "vflip",
            "hflip+vflip",
            "rot90",
            "hflip+rot90",
            "vflip+rot90",
            "hflip+vflip+rot90",
        ][self.index() as usize]
    }

    pub fn apply<T: Scalar>(self, x: &Tensor4<T>) -> Tensor4<T> {
        let mut out = x.clone();
        if self.hflip {
            out = hflip(&out);
        }
        if self.vflip {
            out = vflip(&out);
        }
        if self.rot90 {
            out = rot90(&out);
        }
        out
    }

    /// Undoes [`Augment::apply`].
    pub fn invert<T: Scalar>(self, x: &Tensor4<T>) -> Tensor4<T> {
        let mut out = x.clone();
        if self.rot90 {
            out = rot90(&rot90(&rot90(&out)));
        }
        if self.vflip {
            out = vflip(&out);
        }
        if self.hflip {
            out = hflip(&out);
        }
        out
    }
}

impl fmt::Display for Augment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

fn hflip<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    let w = x.width();
    Tensor4::from_fn(x.shape(), |[n, c, y, xx]| x.at([n, c, y, w - 1 - xx]))
}

fn vflip<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    let h = x.height();
    Tensor4::from_fn(x.shape(), |[n, c, y, xx]| x.at([n, c, h - 1 - y, xx]))
}

/// Counter-clockwise quarter turn; output is `[n, c, w, h]`.
fn rot90<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    let [n, c, h, w] = x.shape();
    Tensor4::from_fn([n, c, w, h], |[b, ch, y, xx]| x.at([b, ch, xx, w - 1 - y]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> Tensor4<f64> {
        Tensor4::from_fn([1, 2, 3, 4], |[_, c, y, x]| (c * 100 + y * 10 + x) as f64)
    }

    #[test]
    fn hflip_reverses_columns() {
        let x = ramp();
        let a = Augment::from_index(1);
        assert_eq!(a.code(), "hflip");
        let y = a.apply(&x);
        for yy in 0..3 {
            for xx in 0..4 {
                assert_eq!(y.at([0, 1, yy, xx]), x.at([0, 1, yy, 3 - xx]));
            }
        }
    }

    #[test]
    fn rot90_is_counter_clockwise() {
        let x = Tensor4::<f64>::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = Augment::from_index(4).apply(&x);
        assert_eq!(y.data(), &[2.0, 4.0, 1.0, 3.0]);
    }

    #[test]
    fn every_element_is_inverted_exactly() {
        let x = ramp();
        for a in Augment::all() {
            assert_eq!(a.invert(&a.apply(&x)), x, "{a}");
        }
    }

    #[test]
    fn the_eight_elements_are_distinct() {
        let x = Tensor4::<f64>::from_fn([1, 1, 3, 3], |[_, _, y, x]| (y * 3 + x) as f64);
        let outs: Vec<_> = Augment::all().iter().map(|a| a.apply(&x)).collect();
        for i in 0..8 {
            for j in i + 1..8 {
                assert_ne!(outs[i], outs[j]);
            }
        }
    }
}
