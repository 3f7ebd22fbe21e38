use crate::error::{Error, Result};
use crate::nn::{join, Conv2d, PRelu, Param, Parameterized};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;
use rand::Rng;

pub const REGRESSOR_DEPTH: usize = 5;

/// Five pointwise convolutions with learnable-slope rectifiers between them,
/// mapping student feature channels into the teacher's channel space.
///
/// Every layer is `c_out` wide. Training-only: never counted as part of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct Regressor<T> {
    pub c_in: usize,
    pub c_out: usize,
    pub convs: Vec<Conv2d<T>>,
    pub acts: Vec<PRelu<T>>,
}

pub(crate) struct RegressorTrace<T> {
    /// Input of each convolution.
    conv_inputs: Vec<Tensor4<T>>,
    /// Input of each activation.
    act_inputs: Vec<Tensor4<T>>,
}

pub fn build_regressor<T: Scalar>(c_in: usize, c_out: usize, rng: &mut impl Rng) -> Result<Regressor<T>> {
    if c_in < 1 || c_out < 1 {
        return Err(Error::Config(format!(
            "regressor channels must be >= 1, got {c_in} -> {c_out}"
        )));
    }
    let convs = (0..REGRESSOR_DEPTH)
        .map(|i| Conv2d::new(if i == 0 { c_in } else { c_out }, c_out, 1, rng))
        .collect();
    let acts = (0..REGRESSOR_DEPTH - 1).map(|_| PRelu::new(0.25)).collect();
    Ok(Regressor {
        c_in,
        c_out,
        convs,
        acts,
    })
}

impl<T: Scalar> Regressor<T> {
    /// Exact identity map on `c` channels: identity kernels, zero biases, unit slopes.
    pub fn identity(c: usize) -> Self {
        Self {
            c_in: c,
            c_out: c,
            convs: (0..REGRESSOR_DEPTH).map(|_| Conv2d::identity(c)).collect(),
            acts: (0..REGRESSOR_DEPTH - 1).map(|_| PRelu::new(1.0)).collect(),
        }
    }

    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        Ok(self.forward_traced(x, false)?.0)
    }

    pub(crate) fn forward_traced(
        &self,
        x: &Tensor4<T>,
        keep: bool,
    ) -> Result<(Tensor4<T>, Option<RegressorTrace<T>>)> {
        let mut conv_inputs = Vec::new();
        let mut act_inputs = Vec::new();
        let mut h = x.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            let y = conv.forward(&h)?;
            if keep {
                conv_inputs.push(h);
            }
            h = match self.acts.get(i) {
                Some(act) => {
                    let a = act.forward(&y);
                    if keep {
                        act_inputs.push(y);
                    }
                    a
                }
                None => y,
            };
        }
        Ok((
            h,
            keep.then_some(RegressorTrace {
                conv_inputs,
                act_inputs,
            }),
        ))
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub(crate) fn backward(&mut self, trace: RegressorTrace<T>, dy: &Tensor4<T>) -> Result<Tensor4<T>> {
        let mut d = dy.clone();
        for i in (0..self.convs.len()).rev() {
            if let Some(act) = self.acts.get_mut(i) {
                d = act.backward(&trace.act_inputs[i], &d);
            }
            d = self.convs[i]
                .backward(&trace.conv_inputs[i], &d, true)?
                .expect("dx requested");
        }
        Ok(d)
    }
}

impl<T: Scalar> Parameterized<T> for Regressor<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        for (i, c) in self.convs.iter().enumerate() {
            c.visit_params(&join(prefix, &format!("conv{}", i + 1)), f);
            if let Some(a) = self.acts.get(i) {
                a.visit_params(&join(prefix, &format!("act{}", i + 1)), f);
            }
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (i, c) in self.convs.iter_mut().enumerate() {
            c.visit_params_mut(&join(prefix, &format!("conv{}", i + 1)), f);
            if let Some(a) = self.acts.get_mut(i) {
                a.visit_params_mut(&join(prefix, &format!("act{}", i + 1)), f);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn maps_student_width_to_teacher_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = build_regressor::<f32>(64, 256, &mut rng).unwrap();
        assert_eq!(r.convs.len(), 5);
        let y = r.forward(&Tensor4::full([2, 64, 3, 5], 0.1)).unwrap();
        assert_eq!(y.shape(), [2, 256, 3, 5]);
    }

    #[test]
    fn equal_widths_still_use_five_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = build_regressor::<f32>(64, 64, &mut rng).unwrap();
        assert_eq!(r.convs.len(), REGRESSOR_DEPTH);
        assert_eq!(r.acts.len(), REGRESSOR_DEPTH - 1);
    }

    #[test]
    fn zero_biases_map_zero_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut r = build_regressor::<f64>(4, 6, &mut rng).unwrap();
        for c in &mut r.convs {
            c.bias.value.fill(0.0);
        }
        let y = r.forward(&Tensor4::zeros([1, 4, 2, 2])).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_regressor_passes_negative_values_through() {
        let x = Tensor4::<f64>::from_vec([1, 2, 1, 2], vec![-1.0, 0.5, 2.0, -0.25]).unwrap();
        assert_eq!(Regressor::identity(2).forward(&x).unwrap(), x);
    }

    #[test]
    fn rejects_zero_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(build_regressor::<f32>(0, 4, &mut rng).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut reg = build_regressor::<f64>(3, 4, &mut rng).unwrap();
        let x = Tensor4::from_fn([2, 3, 2, 2], |_| rng.gen_range(-1.0..1.0));
        let dy = Tensor4::from_fn([2, 4, 2, 2], |_| rng.gen_range(-1.0..1.0));
        let f = |r: &Regressor<f64>, x: &Tensor4<f64>| -> f64 {
            let y = r.forward(x).unwrap();
            y.data().iter().zip(dy.data()).map(|(a, b)| a * b).sum()
        };
        let (_, trace) = reg.forward_traced(&x, true).unwrap();
        let dx = reg.backward(trace.unwrap(), &dy).unwrap();
        let h = 1e-6;
        for i in 0..x.len() {
            let mut p = x.clone();
            p.data_mut()[i] += h;
            let mut m = x.clone();
            m.data_mut()[i] -= h;
            let fd = (f(&reg, &p) - f(&reg, &m)) / (2.0 * h);
            assert!((fd - dx.data()[i]).abs() < 1e-6);
        }
        for k in 0..4 {
            let mut p = reg.clone();
            p.acts[k].slope.value[0] += h;
            let mut m = reg.clone();
            m.acts[k].slope.value[0] -= h;
            let fd = (f(&p, &x) - f(&m, &x)) / (2.0 * h);
            assert!((fd - reg.acts[k].slope.grad[0]).abs() < 1e-6);
        }
    }
}
