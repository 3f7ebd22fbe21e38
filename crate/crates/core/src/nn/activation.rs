use super::param::{join, Param, Parameterized};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

pub fn relu<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of [`relu`] given its output.
pub fn relu_backward<T: Scalar>(out: &Tensor4<T>, dy: &Tensor4<T>) -> Tensor4<T> {
    out.zip_map(dy, |o, g| if o > T::zero() { g } else { T::zero() })
        .expect("relu backward shape")
}

pub fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

/// Rectifier with a single learnable negative slope.
#[derive(Clone, Debug, PartialEq)]
pub struct PRelu<T> {
    pub slope: Param<T>,
}

impl<T: Scalar> PRelu<T> {
    pub fn new(init: f64) -> Self {
        Self {
            slope: Param::full(&[1], T::lit(init)),
        }
    }

    pub fn forward(&self, x: &Tensor4<T>) -> Tensor4<T> {
        let a = self.slope.value[0];
        x.map(|v| if v > T::zero() { v } else { a * v })
    }

    pub fn backward(&mut self, x: &Tensor4<T>, dy: &Tensor4<T>) -> Tensor4<T> {
        let a = self.slope.value[0];
        let mut da = T::zero();
        let dx = x
            .zip_map(dy, |v, g| {
                if v > T::zero() {
                    g
                } else {
                    a * g
                }
            })
            .expect("prelu backward shape");
        for (&v, &g) in x.data().iter().zip(dy.data()) {
            if v <= T::zero() {
                da += v * g;
            }
        }
        self.slope.grad[0] += da;
        dx
    }
}

impl<T: Scalar> Parameterized<T> for PRelu<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "slope"), &self.slope);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "slope"), &mut self.slope);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prelu_gradients_by_hand() {
        let mut p = PRelu::<f64>::new(0.25);
        let x = Tensor4::from_vec([1, 1, 1, 3], vec![-2.0, 0.5, -1.0]).unwrap();
        assert_eq!(p.forward(&x).data(), &[-0.5, 0.5, -0.25]);
        let dy = Tensor4::from_vec([1, 1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let dx = p.backward(&x, &dy);
        assert_eq!(dx.data(), &[0.25, 2.0, 0.75]);
        assert_eq!(p.slope.grad[0], -2.0 - 3.0);
    }

    #[test]
    fn sigmoid_is_in_open_unit_interval() {
        for v in [-30.0f64, -1.0, 0.0, 1.0, 30.0] {
            let s = sigmoid(v);
            assert!(s > 0.0 && s < 1.0);
        }
    }
}
