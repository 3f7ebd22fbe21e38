use crate::scalar::Scalar;
use rand::Rng;

/// A learnable array together with its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Scalar> Param<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            value: vec![v; n],
            grad: vec![T::zero(); n],
        }
    }

    /// Uniform on `[-bound, bound]`.
    pub fn uniform(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Self {
        let n: usize = shape.iter().product();
        let value = (0..n)
            .map(|_| T::lit(rng.gen_range(-bound..=bound)))
            .collect();
        Self {
            shape: shape.to_vec(),
            value,
            grad: vec![T::zero(); n],
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.value.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// Anything holding named learnable parameters.
///
/// Names are canonical dotted layer paths such as `body.block07.conv1.weight`;
/// checkpoints and optimizer state are keyed by them.
pub trait Parameterized<T: Scalar> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>));
    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>));

    fn zero_grad(&mut self) {
        self.visit_params_mut("", &mut |_, p| p.zero_grad());
    }
}

impl<T: Scalar, P: Parameterized<T>> Parameterized<T> for [P] {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        for (i, p) in self.iter().enumerate() {
            p.visit_params(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (i, p) in self.iter_mut().enumerate() {
            p.visit_params_mut(&join(prefix, &i.to_string()), f);
        }
    }
}

/// Exact number of learnable scalars.
pub fn param_count<T: Scalar, P: Parameterized<T> + ?Sized>(model: &P) -> usize {
    let mut total = 0;
    model.visit_params("", &mut |_, p| total += p.len());
    total
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
