//! Enhanced deep residual network without normalization layers.

use super::tail::{stage_factors, Tail, TailTrace};
use super::{tap_positions, TapSet};
use crate::error::{Error, Result};
use crate::nn::{join, relu, relu_backward, Conv2d, Param, Parameterized};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdsrConfig {
    pub channels: usize,
    pub res_blocks: usize,
    pub scale: usize,
    pub res_scaling: f64,
}

impl EdsrConfig {
    pub fn new(channels: usize, res_blocks: usize, scale: usize, res_scaling: f64) -> Self {
        Self {
            channels,
            res_blocks,
            scale,
            res_scaling,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels < 1 {
            return Err(Error::Config("edsr channels must be >= 1".into()));
        }
        if self.res_blocks < 3 {
            return Err(Error::Config(format!(
                "edsr needs >= 3 residual blocks for three taps, got {}",
                self.res_blocks
            )));
        }
        if !(self.res_scaling > 0.0 && self.res_scaling <= 1.0) {
            return Err(Error::Config(format!(
                "edsr res_scaling must lie in (0, 1], got {}",
                self.res_scaling
            )));
        }
        stage_factors(self.scale).map(|_| ())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResBlock<T> {
    pub conv1: Conv2d<T>,
    pub conv2: Conv2d<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Edsr<T> {
    pub config: EdsrConfig,
    pub head: Conv2d<T>,
    pub blocks: Vec<ResBlock<T>>,
    pub body_end: Conv2d<T>,
    pub tail: Tail<T>,
    taps_after: [usize; 3],
}

pub(crate) struct EdsrTrace<T> {
    lr: Tensor4<T>,
    /// (block input, relu output) per block
    blocks: Vec<(Tensor4<T>, Tensor4<T>)>,
    body_last: Tensor4<T>,
    tail: TailTrace<T>,
}

pub fn build_edsr<T: Scalar>(cfg: &EdsrConfig, rng: &mut impl Rng) -> Result<Edsr<T>> {
    cfg.validate()?;
    Edsr::with_layout(cfg.clone(), rng)
}

impl<T: Scalar> Edsr<T> {
    /// Builds without validating `res_blocks` and `res_scaling`.
    pub(crate) fn with_layout(config: EdsrConfig, rng: &mut impl Rng) -> Result<Self> {
        let c = config.channels;
        let head = Conv2d::new(3, c, 3, rng);
        let blocks = (0..config.res_blocks)
            .map(|_| ResBlock {
                conv1: Conv2d::new(c, c, 3, rng),
                conv2: Conv2d::new(c, c, 3, rng),
            })
            .collect();
        let body_end = Conv2d::new(c, c, 3, rng);
        let tail = Tail::new(c, config.scale, rng)?;
        let taps_after = tap_positions(config.res_blocks);
        Ok(Self {
            config,
            head,
            blocks,
            body_end,
            tail,
            taps_after,
        })
    }

    /// 1-based indices of the blocks whose outputs are tapped.
    pub fn taps_after(&self) -> [usize; 3] {
        self.taps_after
    }

    pub(crate) fn run(
        &self,
        lr: &Tensor4<T>,
        want_taps: bool,
        keep: bool,
    ) -> Result<(Tensor4<T>, Option<TapSet<T>>, Option<EdsrTrace<T>>)> {
        let x0 = self.head.forward(lr)?;
        let scaling = T::lit(self.config.res_scaling);
        let mut taps = Vec::with_capacity(3);
        let mut trace_blocks = Vec::new();
        let mut x = x0.clone();
        for (b, block) in self.blocks.iter().enumerate() {
            let r = relu(&block.conv1.forward(&x)?);
            let t2 = block.conv2.forward(&r)?;
            let mut next = x.clone();
            next.axpy(scaling, &t2)?;
            if keep {
                trace_blocks.push((std::mem::replace(&mut x, next), r));
            } else {
                x = next;
            }
            if want_taps {
                for &t in &self.taps_after {
                    if t == b + 1 {
                        taps.push(x.clone());
                    }
                }
            }
        }
        let mut body = self.body_end.forward(&x)?;
        body.add_assign(&x0)?;
        let (sr, tail) = self.tail.forward(body, keep)?;
        let taps = if want_taps {
            Some(TapSet::new(taps)?)
        } else {
            None
        };
        let trace = tail.map(|tail| EdsrTrace {
            lr: lr.clone(),
            blocks: trace_blocks,
            body_last: x,
            tail,
        });
        Ok((sr, taps, trace))
    }

    pub(crate) fn backward(
        &mut self,
        trace: EdsrTrace<T>,
        dsr: &Tensor4<T>,
        dtaps: Option<&[Tensor4<T>; 3]>,
    ) -> Result<()> {
        let d_body = self.tail.backward(trace.tail, dsr)?;
        let mut dx = self
            .body_end
            .backward(&trace.body_last, &d_body, true)?
            .expect("dx requested");
        let scaling = T::lit(self.config.res_scaling);
        for (b, (block, (h, r))) in self.blocks.iter_mut().zip(trace.blocks).enumerate().rev() {
            if let Some(dt) = dtaps {
                for (j, &t) in self.taps_after.iter().enumerate() {
                    if t == b + 1 {
                        dx.add_assign(&dt[j])?;
                    }
                }
            }
            let mut dt2 = dx.clone();
            dt2.scale_in_place(scaling);
            let dr = block.conv2.backward(&r, &dt2, true)?.expect("dx requested");
            let dc1 = relu_backward(&r, &dr);
            let dh = block.conv1.backward(&h, &dc1, true)?.expect("dx requested");
            dx.add_assign(&dh)?;
        }
        dx.add_assign(&d_body)?;
        self.head.backward(&trace.lr, &dx, false)?;
        Ok(())
    }
}

impl<T: Scalar> Parameterized<T> for Edsr<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.head.visit_params(&join(prefix, "head"), f);
        for (i, b) in self.blocks.iter().enumerate() {
            let p = join(prefix, &format!("body.block{i:02}"));
            b.conv1.visit_params(&join(&p, "conv1"), f);
            b.conv2.visit_params(&join(&p, "conv2"), f);
        }
        self.body_end.visit_params(&join(prefix, "body.end"), f);
        self.tail.visit_params(&join(prefix, "tail"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.head.visit_params_mut(&join(prefix, "head"), f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let p = join(prefix, &format!("body.block{i:02}"));
            b.conv1.visit_params_mut(&join(&p, "conv1"), f);
            b.conv2.visit_params_mut(&join(&p, "conv2"), f);
        }
        self.body_end.visit_params_mut(&join(prefix, "body.end"), f);
        self.tail.visit_params_mut(&join(prefix, "tail"), f);
    }
}
