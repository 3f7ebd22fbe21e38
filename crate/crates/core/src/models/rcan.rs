//! Residual channel attention network: residual groups of squeeze-and-excite blocks.

use super::tail::{stage_factors, Tail, TailTrace};
use super::{tap_positions, TapSet};
use crate::error::{Error, Result};
use crate::nn::{join, relu, relu_backward, sigmoid, Conv2d, Param, Parameterized};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RcanConfig {
    pub channels: usize,
    pub res_groups: usize,
    pub blocks_per_group: usize,
    pub reduction: usize,
    pub scale: usize,
}

impl RcanConfig {
    pub fn new(
        channels: usize,
        res_groups: usize,
        blocks_per_group: usize,
        reduction: usize,
        scale: usize,
    ) -> Self {
        Self {
            channels,
            res_groups,
            blocks_per_group,
            reduction,
            scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels < 1 || self.blocks_per_group < 1 {
            return Err(Error::Config(
                "rcan channels and blocks_per_group must be >= 1".into(),
            ));
        }
        if self.res_groups < 3 {
            return Err(Error::Config(format!(
                "rcan needs >= 3 residual groups for three taps, got {}",
                self.res_groups
            )));
        }
        if self.reduction < 1 || self.channels % self.reduction != 0 {
            return Err(Error::Config(format!(
                "rcan reduction {} must divide channels {}",
                self.reduction, self.channels
            )));
        }
        stage_factors(self.scale).map(|_| ())
    }
}

/// Squeeze-and-excite gate: pool, bottleneck, rectify, expand, sigmoid.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelAttention<T> {
    pub down: Conv2d<T>,
    pub up: Conv2d<T>,
}

/// Spatial mean per `(sample, channel)`, shaped `[N, C, 1, 1]`.
pub fn global_avg_pool<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    let [n, c, h, w] = x.shape();
    let inv = T::one() / T::from_usize_lossy(h * w);
    Tensor4::from_fn([n, c, 1, 1], |[b, ch, _, _]| {
        x.plane(b, ch).iter().fold(T::zero(), |a, &v| a + v) * inv
    })
}

impl<T: Scalar> ChannelAttention<T> {
    /// Channel weights in `(0, 1)`, shaped `[N, C, 1, 1]`.
    pub fn gate(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let pooled = global_avg_pool(x);
        let z = relu(&self.down.forward(&pooled)?);
        Ok(self.up.forward(&z)?.map(sigmoid))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rcab<T> {
    pub conv1: Conv2d<T>,
    pub conv2: Conv2d<T>,
    pub attention: ChannelAttention<T>,
}

struct RcabTrace<T> {
    input: Tensor4<T>,
    relu_out: Tensor4<T>,
    features: Tensor4<T>,
    pooled: Tensor4<T>,
    squeezed: Tensor4<T>,
    gate: Tensor4<T>,
}

fn channel_scale<T: Scalar>(x: &Tensor4<T>, gate: &Tensor4<T>) -> Tensor4<T> {
    let mut out = x.clone();
    let [n, c, _, _] = x.shape();
    for b in 0..n {
        for ch in 0..c {
            let g = gate.at([b, ch, 0, 0]);
            for v in out.plane_mut(b, ch) {
                *v *= g;
            }
        }
    }
    out
}

impl<T: Scalar> Rcab<T> {
    fn new(c: usize, reduction: usize, rng: &mut impl Rng) -> Self {
        Self {
            conv1: Conv2d::new(c, c, 3, rng),
            conv2: Conv2d::new(c, c, 3, rng),
            attention: ChannelAttention {
                down: Conv2d::new(c, c / reduction, 1, rng),
                up: Conv2d::new(c / reduction, c, 1, rng),
            },
        }
    }

    fn forward(&self, x: Tensor4<T>, keep: bool) -> Result<(Tensor4<T>, Option<RcabTrace<T>>)> {
        let relu_out = relu(&self.conv1.forward(&x)?);
        let features = self.conv2.forward(&relu_out)?;
        let pooled = global_avg_pool(&features);
        let squeezed = relu(&self.attention.down.forward(&pooled)?);
        let gate = self.attention.up.forward(&squeezed)?.map(sigmoid);
        let mut out = channel_scale(&features, &gate);
        out.add_assign(&x)?;
        let trace = keep.then(|| RcabTrace {
            input: x,
            relu_out,
            features,
            pooled,
            squeezed,
            gate,
        });
        Ok((out, trace))
    }

    fn backward(&mut self, t: RcabTrace<T>, dout: &Tensor4<T>) -> Result<Tensor4<T>> {
        let [n, c, h, w] = t.features.shape();
        let mut dfeat = channel_scale(dout, &t.gate);
        let dgate_pre = Tensor4::from_fn([n, c, 1, 1], |[b, ch, _, _]| {
            let ds = dout
                .plane(b, ch)
                .iter()
                .zip(t.features.plane(b, ch))
                .fold(T::zero(), |a, (&g, &f)| a + g * f);
            let s = t.gate.at([b, ch, 0, 0]);
            ds * s * (T::one() - s)
        });
        let dsq = self
            .attention
            .up
            .backward(&t.squeezed, &dgate_pre, true)?
            .expect("dx requested");
        let dz = relu_backward(&t.squeezed, &dsq);
        let dpool = self
            .attention
            .down
            .backward(&t.pooled, &dz, true)?
            .expect("dx requested");
        let inv = T::one() / T::from_usize_lossy(h * w);
        for b in 0..n {
            for ch in 0..c {
                let g = dpool.at([b, ch, 0, 0]) * inv;
                for v in dfeat.plane_mut(b, ch) {
                    *v += g;
                }
            }
        }
        let dr = self
            .conv2
            .backward(&t.relu_out, &dfeat, true)?
            .expect("dx requested");
        let dc1 = relu_backward(&t.relu_out, &dr);
        let mut dx = self
            .conv1
            .backward(&t.input, &dc1, true)?
            .expect("dx requested");
        dx.add_assign(dout)?;
        Ok(dx)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualGroup<T> {
    pub blocks: Vec<Rcab<T>>,
    pub conv: Conv2d<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rcan<T> {
    pub config: RcanConfig,
    pub head: Conv2d<T>,
    pub groups: Vec<ResidualGroup<T>>,
    pub body_end: Conv2d<T>,
    pub tail: Tail<T>,
    taps_after: [usize; 3],
}

struct GroupTrace<T> {
    blocks: Vec<RcabTrace<T>>,
    conv_input: Tensor4<T>,
}

pub(crate) struct RcanTrace<T> {
    lr: Tensor4<T>,
    groups: Vec<GroupTrace<T>>,
    body_last: Tensor4<T>,
    tail: TailTrace<T>,
}

pub fn build_rcan<T: Scalar>(cfg: &RcanConfig, rng: &mut impl Rng) -> Result<Rcan<T>> {
    cfg.validate()?;
    let c = cfg.channels;
    let head = Conv2d::new(3, c, 3, rng);
    let groups = (0..cfg.res_groups)
        .map(|_| ResidualGroup {
            blocks: (0..cfg.blocks_per_group)
                .map(|_| Rcab::new(c, cfg.reduction, rng))
                .collect(),
            conv: Conv2d::new(c, c, 3, rng),
        })
        .collect();
    let body_end = Conv2d::new(c, c, 3, rng);
    let tail = Tail::new(c, cfg.scale, rng)?;
    Ok(Rcan {
        config: cfg.clone(),
        head,
        groups,
        body_end,
        tail,
        taps_after: tap_positions(cfg.res_groups),
    })
}

impl<T: Scalar> Rcan<T> {
    /// 1-based indices of the residual groups whose outputs are tapped.
    pub fn taps_after(&self) -> [usize; 3] {
        self.taps_after
    }

    pub(crate) fn run(
        &self,
        lr: &Tensor4<T>,
        want_taps: bool,
        keep: bool,
    ) -> Result<(Tensor4<T>, Option<TapSet<T>>, Option<RcanTrace<T>>)> {
        let x0 = self.head.forward(lr)?;
        let mut taps = Vec::with_capacity(3);
        let mut group_traces = Vec::new();
        let mut g = x0.clone();
        for (gi, group) in self.groups.iter().enumerate() {
            let mut y = g.clone();
            let mut block_traces = Vec::new();
            for block in &group.blocks {
                let (next, t) = block.forward(y, keep)?;
                block_traces.extend(t);
                y = next;
            }
            let mut out = group.conv.forward(&y)?;
            out.add_assign(&g)?;
            if keep {
                group_traces.push(GroupTrace {
                    blocks: block_traces,
                    conv_input: y,
                });
            }
            g = out;
            if want_taps {
                for &t in &self.taps_after {
                    if t == gi + 1 {
                        taps.push(g.clone());
                    }
                }
            }
        }
        let mut body = self.body_end.forward(&g)?;
        body.add_assign(&x0)?;
        let (sr, tail) = self.tail.forward(body, keep)?;
        let taps = if want_taps {
            Some(TapSet::new(taps)?)
        } else {
            None
        };
        let trace = tail.map(|tail| RcanTrace {
            lr: lr.clone(),
            groups: group_traces,
            body_last: g,
            tail,
        });
        Ok((sr, taps, trace))
    }

    pub(crate) fn backward(
        &mut self,
        trace: RcanTrace<T>,
        dsr: &Tensor4<T>,
        dtaps: Option<&[Tensor4<T>; 3]>,
    ) -> Result<()> {
        let d_body = self.tail.backward(trace.tail, dsr)?;
        let mut dg = self
            .body_end
            .backward(&trace.body_last, &d_body, true)?
            .expect("dx requested");
        for (gi, (group, gt)) in self.groups.iter_mut().zip(trace.groups).enumerate().rev() {
            if let Some(dt) = dtaps {
                for (j, &t) in self.taps_after.iter().enumerate() {
                    if t == gi + 1 {
                        dg.add_assign(&dt[j])?;
                    }
                }
            }
            let mut dy = group
                .conv
                .backward(&gt.conv_input, &dg, true)?
                .expect("dx requested");
            for (block, bt) in group.blocks.iter_mut().zip(gt.blocks).rev() {
                dy = block.backward(bt, &dy)?;
            }
            dg.add_assign(&dy)?;
        }
        dg.add_assign(&d_body)?;
        self.head.backward(&trace.lr, &dg, false)?;
        Ok(())
    }
}

impl<T: Scalar> Parameterized<T> for Rcan<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.head.visit_params(&join(prefix, "head"), f);
        for (gi, g) in self.groups.iter().enumerate() {
            let gp = join(prefix, &format!("body.group{gi:02}"));
            for (bi, b) in g.blocks.iter().enumerate() {
                let bp = join(&gp, &format!("block{bi:02}"));
                b.conv1.visit_params(&join(&bp, "conv1"), f);
                b.conv2.visit_params(&join(&bp, "conv2"), f);
                b.attention.down.visit_params(&join(&bp, "ca.down"), f);
                b.attention.up.visit_params(&join(&bp, "ca.up"), f);
            }
            g.conv.visit_params(&join(&gp, "conv"), f);
        }
        self.body_end.visit_params(&join(prefix, "body.end"), f);
        self.tail.visit_params(&join(prefix, "tail"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.head.visit_params_mut(&join(prefix, "head"), f);
        for (gi, g) in self.groups.iter_mut().enumerate() {
            let gp = join(prefix, &format!("body.group{gi:02}"));
            for (bi, b) in g.blocks.iter_mut().enumerate() {
                let bp = join(&gp, &format!("block{bi:02}"));
                b.conv1.visit_params_mut(&join(&bp, "conv1"), f);
                b.conv2.visit_params_mut(&join(&bp, "conv2"), f);
                b.attention.down.visit_params_mut(&join(&bp, "ca.down"), f);
                b.attention.up.visit_params_mut(&join(&bp, "ca.up"), f);
            }
            g.conv.visit_params_mut(&join(&gp, "conv"), f);
        }
        self.body_end.visit_params_mut(&join(prefix, "body.end"), f);
        self.tail.visit_params_mut(&join(prefix, "tail"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::param_count;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn invalid_configs_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for cfg in [
            RcanConfig::new(64, 2, 6, 16, 2),
            RcanConfig::new(64, 10, 6, 12, 2),
            RcanConfig::new(0, 10, 6, 16, 2),
            RcanConfig::new(64, 10, 0, 16, 2),
            RcanConfig::new(64, 10, 6, 16, 8),
        ] {
            assert!(matches!(build_rcan::<f32>(&cfg, &mut rng), Err(Error::Config(_))));
        }
    }

    #[test]
    fn exact_parameter_count_by_layer_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let conv = 64 * 64 * 9 + 64;
        let ca = (64 * 4 + 4) + (4 * 64 + 64);
        let group = 6 * (2 * conv + ca) + conv;
        let expected = (3 * 64 * 9 + 64) + 10 * group + conv + (64 * 256 * 9 + 256) + (64 * 3 * 9 + 3);
        let m = build_rcan::<f32>(&RcanConfig::new(64, 10, 6, 16, 2), &mut rng).unwrap();
        assert_eq!(param_count(&m), expected);
        assert_eq!(expected, 5_023_603);
    }

    #[test]
    fn pooling_a_constant_returns_the_constant() {
        let x = Tensor4::<f64>::from_fn([2, 3, 4, 5], |[b, c, _, _]| (b * 3 + c) as f64 * 0.25);
        let p = global_avg_pool(&x);
        for b in 0..2 {
            for c in 0..3 {
                assert!((p.at([b, c, 0, 0]) - (b * 3 + c) as f64 * 0.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn attention_gate_lies_in_open_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let block = Rcab::<f64>::new(8, 2, &mut rng);
        let x = Tensor4::from_fn([3, 8, 4, 4], |_| rng.gen_range(-5.0..5.0));
        let g = block.attention.gate(&x).unwrap();
        assert!(g.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}
