//! Super-resolution networks with three feature taps, and the deep regressor.

mod checkpoint;
mod edsr;
mod rcan;
mod regressor;
mod tail;

pub use checkpoint::{Checkpoint, CheckpointMeta, CHECKPOINT_FORMAT};
pub use edsr::{build_edsr, Edsr, EdsrConfig, ResBlock};
pub use rcan::{build_rcan, global_avg_pool, ChannelAttention, Rcab, Rcan, RcanConfig, ResidualGroup};
pub use regressor::{build_regressor, Regressor, REGRESSOR_DEPTH};
pub use tail::Tail;


use crate::error::{shape_err, Result};
use crate::nn::{Param, Parameterized};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Intermediate body activations at three depths, shallowest first.
#[derive(Clone, Debug, PartialEq)]
pub struct TapSet<T> {
    taps: [Tensor4<T>; 3],
}

impl<T: Scalar> TapSet<T> {
    pub fn new(taps: Vec<Tensor4<T>>) -> Result<Self> {
        let taps: [Tensor4<T>; 3] = match taps.try_into() {
            Ok(t) => t,
            Err(v) => return shape_err(format!("a tap set needs exactly 3 maps, got {}", v.len())),
        };
        if taps[1].shape() != taps[0].shape() || taps[2].shape() != taps[0].shape() {
            return shape_err(format!(
                "tap shapes differ: {:?} {:?} {:?}",
                taps[0].shape(),
                taps[1].shape(),
                taps[2].shape()
            ));
        }
        Ok(Self { taps })
    }

    pub fn taps(&self) -> &[Tensor4<T>; 3] {
        &self.taps
    }

    pub fn get(&self, j: usize) -> &Tensor4<T> {
        &self.taps[j]
    }

    pub fn shape(&self) -> [usize; 4] {
        self.taps[0].shape()
    }

    pub fn map(&self, f: impl Fn(&Tensor4<T>) -> Tensor4<T>) -> Self {
        Self {
            taps: [f(&self.taps[0]), f(&self.taps[1]), f(&self.taps[2])],
        }
    }
}

/// 1-based body segment indices `ceil(j * segments / 3)` for `j = 1, 2, 3`.
pub fn tap_positions(segments: usize) -> [usize; 3] {
    [1, 2, 3].map(|j| (j * segments).div_ceil(3))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Edsr,
    Rcan,
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::Edsr => "edsr",
            Arch::Rcan => "rcan",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "lowercase")]
pub enum ModelConfig {
    Edsr(EdsrConfig),
    Rcan(RcanConfig),
}

impl ModelConfig {
    pub fn arch(&self) -> Arch {
        match self {
            ModelConfig::Edsr(_) => Arch::Edsr,
            ModelConfig::Rcan(_) => Arch::Rcan,
        }
    }

    pub fn scale(&self) -> usize {
        match self {
            ModelConfig::Edsr(c) => c.scale,
            ModelConfig::Rcan(c) => c.scale,
        }
    }

    pub fn channels(&self) -> usize {
        match self {
            ModelConfig::Edsr(c) => c.channels,
            ModelConfig::Rcan(c) => c.channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::Edsr(c) => c.validate(),
            ModelConfig::Rcan(c) => c.validate(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Model<T> {
    Edsr(Edsr<T>),
    Rcan(Rcan<T>),
}

/// Activations retained by a training forward pass.
pub struct Trace<T>(TraceInner<T>);

enum TraceInner<T> {
    Edsr(edsr::EdsrTrace<T>),
    Rcan(rcan::RcanTrace<T>),
}

impl<T: Scalar> Model<T> {
    pub fn build(cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        Ok(match cfg {
            ModelConfig::Edsr(c) => Model::Edsr(build_edsr(c, rng)?),
            ModelConfig::Rcan(c) => Model::Rcan(build_rcan(c, rng)?),
        })
    }

    pub fn config(&self) -> ModelConfig {
        match self {
            Model::Edsr(m) => ModelConfig::Edsr(m.config.clone()),
            Model::Rcan(m) => ModelConfig::Rcan(m.config.clone()),
        }
    }

    pub fn scale(&self) -> usize {
        self.config().scale()
    }

    pub fn channels(&self) -> usize {
        self.config().channels()
    }

    pub fn taps_after(&self) -> [usize; 3] {
        match self {
            Model::Edsr(m) => m.taps_after(),
            Model::Rcan(m) => m.taps_after(),
        }
    }

    fn check_input(lr: &Tensor4<T>) -> Result<()> {
        if lr.channels() != 3 {
            return shape_err(format!("models take 3-channel input, got {:?}", lr.shape()));
        }
        Ok(())
    }

    fn run(
        &self,
        lr: &Tensor4<T>,
        want_taps: bool,
        keep: bool,
    ) -> Result<(Tensor4<T>, Option<TapSet<T>>, Option<Trace<T>>)> {
        Self::check_input(lr)?;
        Ok(match self {
            Model::Edsr(m) => {
                let (sr, taps, t) = m.run(lr, want_taps, keep)?;
                (sr, taps, t.map(|t| Trace(TraceInner::Edsr(t))))
            }
            Model::Rcan(m) => {
                let (sr, taps, t) = m.run(lr, want_taps, keep)?;
                (sr, taps, t.map(|t| Trace(TraceInner::Rcan(t))))
            }
        })
    }

    /// Plain super-resolution forward pass.
    pub fn forward(&self, lr: &Tensor4<T>) -> Result<Tensor4<T>> {
        Ok(self.run(lr, false, false)?.0)
    }

    pub fn forward_with_taps(&self, lr: &Tensor4<T>) -> Result<(Tensor4<T>, TapSet<T>)> {
        let (sr, taps, _) = self.run(lr, true, false)?;
        Ok((sr, taps.expect("taps requested")))
    }

    /// Forward pass that keeps the activations needed by [`Model::backward`].
    pub fn forward_train(&self, lr: &Tensor4<T>) -> Result<(Tensor4<T>, TapSet<T>, Trace<T>)> {
        let (sr, taps, trace) = self.run(lr, true, true)?;
        Ok((sr, taps.expect("taps requested"), trace.expect("trace kept")))
    }

    /// Back-propagates output and (optionally) tap gradients, accumulating
    /// into every parameter's `grad`.
    pub fn backward(
        &mut self,
        trace: Trace<T>,
        dsr: &Tensor4<T>,
        dtaps: Option<&[Tensor4<T>; 3]>,
    ) -> Result<()> {
        match (self, trace.0) {
            (Model::Edsr(m), TraceInner::Edsr(t)) => m.backward(t, dsr, dtaps),
            (Model::Rcan(m), TraceInner::Rcan(t)) => m.backward(t, dsr, dtaps),
            _ => shape_err("trace does not belong to this architecture"),
        }
    }
}

impl<T: Scalar> Parameterized<T> for Model<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        match self {
            Model::Edsr(m) => m.visit_params(prefix, f),
            Model::Rcan(m) => m.visit_params(prefix, f),
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        match self {
            Model::Edsr(m) => m.visit_params_mut(prefix, f),
            Model::Rcan(m) => m.visit_params_mut(prefix, f),
        }
    }
}
