use crate::error::{Error, Result};
use crate::nn::{depth_to_space, join, space_to_depth, Conv2d, Param, Parameterized};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;
use rand::Rng;

/// Sub-pixel upsampler followed by the output convolution back to RGB.
///
/// Scale 2 and 3 use a single depth-to-space stage; scale 4 cascades two
/// factor-2 stages.
#[derive(Clone, Debug, PartialEq)]
pub struct Tail<T> {
    pub stages: Vec<(Conv2d<T>, usize)>,
    pub out: Conv2d<T>,
}

pub(crate) struct TailTrace<T> {
    stage_inputs: Vec<Tensor4<T>>,
    out_input: Tensor4<T>,
}

pub(crate) fn stage_factors(scale: usize) -> Result<Vec<usize>> {
    match scale {
        2 => Ok(vec![2]),
        3 => Ok(vec![3]),
        4 => Ok(vec![2, 2]),
        s => Err(Error::Config(format!("scale must be 2, 3 or 4, got {s}"))),
    }
}

impl<T: Scalar> Tail<T> {
    pub fn new(channels: usize, scale: usize, rng: &mut impl Rng) -> Result<Self> {
        let stages = stage_factors(scale)?
            .into_iter()
            .map(|r| (Conv2d::new(channels, channels * r * r, 3, rng), r))
            .collect();
        Ok(Self {
            stages,
            out: Conv2d::new(channels, 3, 3, rng),
        })
    }

    pub(crate) fn forward(
        &self,
        x: Tensor4<T>,
        keep: bool,
    ) -> Result<(Tensor4<T>, Option<TailTrace<T>>)> {
        let mut stage_inputs = Vec::new();
        let mut h = x;
        for (conv, r) in &self.stages {
            let y = depth_to_space(&conv.forward(&h)?, *r)?;
            if keep {
                stage_inputs.push(h);
            }
            h = y;
        }
        let sr = self.out.forward(&h)?;
        let trace = keep.then(|| TailTrace {
            stage_inputs,
            out_input: h,
        });
        Ok((sr, trace))
    }

    pub(crate) fn backward(&mut self, trace: TailTrace<T>, dsr: &Tensor4<T>) -> Result<Tensor4<T>> {
        let mut d = self
            .out
            .backward(&trace.out_input, dsr, true)?
            .expect("dx requested");
        for ((conv, r), input) in self.stages.iter_mut().zip(&trace.stage_inputs).rev() {
            let dy = space_to_depth(&d, *r)?;
            d = conv.backward(input, &dy, true)?.expect("dx requested");
        }
        Ok(d)
    }
}

impl<T: Scalar> Parameterized<T> for Tail<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        for (i, (conv, _)) in self.stages.iter().enumerate() {
            conv.visit_params(&join(prefix, &format!("up{i}")), f);
        }
        self.out.visit_params(&join(prefix, "out"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (i, (conv, _)) in self.stages.iter_mut().enumerate() {
            conv.visit_params_mut(&join(prefix, &format!("up{i}")), f);
        }
        self.out.visit_params_mut(&join(prefix, "out"), f);
    }
}
