use super::config::{FeatureTerm, RegressorInit, TrainConfig};
use crate::datapipe::PatchBatch;
use crate::error::{Error, Result};
use crate::losses::{
    adaptive_indicator, facd_loss, icd_loss, plain_fd_loss, total_loss, weighted_l1, IndicatorVec, LossBreakdown,
};
use crate::models::{build_regressor, Checkpoint, CheckpointMeta, Model, Regressor};
use crate::nn::Parameterized;
use crate::optim::{Adam, Moments};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::path::Path;

const STUDENT: &str = "student";
const REGRESSOR: &str = "regressor";
const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";

/// Weight-initialization stream; batch sampling uses streams `0..` keyed by step.
fn init_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    rng
}

/// Everything that changes during optimization.
///
/// Batches are a pure function of `(seed, step)`, so those two numbers are
/// the whole sampling state.
#[derive(Clone, Debug)]
pub struct TrainState<T: Scalar> {
    pub step: u64,
    pub seed: u64,
    pub student: Model<T>,
    pub regressors: Vec<Regressor<T>>,
    pub adam: Adam<T>,
}

fn build_regressors<T: Scalar>(cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Regressor<T>>> {
    if !cfg.components().needs_regressors() {
        return Ok(Vec::new());
    }
    let (cs, ct) = (cfg.student.channels(), cfg.teacher.channels());
    (0..3)
        .map(|_| match cfg.regressor_init {
            RegressorInit::Random => build_regressor(cs, ct, rng),
            RegressorInit::Identity => Ok(Regressor::identity(cs)),
        })
        .collect()
}

impl<T: Scalar> TrainState<T> {
    /// Fresh student and regressors drawn from the config seed.
    pub fn init(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = init_rng(cfg.seed);
        let student = Model::build(&cfg.student, &mut rng)?;
        let regressors = build_regressors(cfg, &mut rng)?;
        Ok(Self {
            step: 0,
            seed: cfg.seed,
            student,
            regressors,
            adam: Adam::new(cfg.adam),
        })
    }

    pub fn epoch(&self, cfg: &TrainConfig) -> u64 {
        cfg.epoch_of(self.step)
    }

    pub fn to_checkpoint(&self, cfg: &TrainConfig) -> Checkpoint<T> {
        let mut meta = CheckpointMeta::new::<T>(cfg.student.clone(), STUDENT);
        meta.step = self.step;
        meta.epoch = self.epoch(cfg);
        meta.seed = self.seed;
        meta.extra.insert("mode".into(), cfg.mode.to_string());
        meta.extra.insert("adam_t".into(), self.adam.t().to_string());
        meta.extra.insert("regressors".into(), self.regressors.len().to_string());
        let mut ck = Checkpoint::new(meta);
        ck.insert_params(STUDENT, &self.student);
        ck.insert_params(REGRESSOR, self.regressors.as_slice());
        for (name, mo) in self.adam.moments() {
            let n = mo.m.len();
            ck.insert(format!("{ADAM_M}{name}"), vec![n], mo.m.clone());
            ck.insert(format!("{ADAM_V}{name}"), vec![n], mo.v.clone());
        }
        ck
    }

    /// Restores a state saved by [`TrainState::to_checkpoint`] under `cfg`.
    pub fn from_checkpoint(ck: &Checkpoint<T>, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let meta = &ck.meta;
        if meta.model != cfg.student {
            return Err(Error::Mismatch(format!(
                "checkpoint holds {:?}, config asks for {:?}",
                meta.model, cfg.student
            )));
        }
        if meta.role != STUDENT {
            return Err(Error::Mismatch(format!("checkpoint role is {:?}, not a training state", meta.role)));
        }
        let mode = meta.extra.get("mode").map(String::as_str).unwrap_or("");
        if mode != cfg.mode.name() {
            return Err(Error::Mismatch(format!("checkpoint mode {mode:?}, config mode {}", cfg.mode)));
        }
        if meta.seed != cfg.seed {
            return Err(Error::Mismatch(format!("checkpoint seed {}, config seed {}", meta.seed, cfg.seed)));
        }
        let adam_t: u64 = meta
            .extra
            .get("adam_t")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Checkpoint("missing optimizer step count".into()))?;

        let mut state = Self::init(cfg)?;
        ck.restore_params(STUDENT, &mut state.student)?;
        ck.restore_params(REGRESSOR, state.regressors.as_mut_slice())?;
        let mut moments = BTreeMap::new();
        for (name, (_, m)) in ck.tensors.range(ADAM_M.to_string()..) {
            let Some(param) = name.strip_prefix(ADAM_M) else { break };
            let (_, v) = ck
                .get(&format!("{ADAM_V}{param}"))
                .ok_or_else(|| Error::Checkpoint(format!("missing second moment for {param}")))?;
            moments.insert(param.to_string(), Moments { m: m.clone(), v: v.clone() });
        }
        state.adam = Adam::restore(cfg.adam, adam_t, moments)?;
        state.step = meta.step;
        Ok(state)
    }

    pub fn save(&self, path: &Path, cfg: &TrainConfig) -> Result<()> {
        self.to_checkpoint(cfg).save(path)
    }

    pub fn load(path: &Path, cfg: &TrainConfig) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, cfg)
    }
}

/// One optimization step on `batch`: forward passes, the losses selected by
/// the mode, back-propagation and one Adam update of student and regressors.
///
/// The teacher is only read. On a non-finite loss no weights are changed.
pub fn train_step<T: Scalar>(
    state: &mut TrainState<T>,
    batch: &PatchBatch<T>,
    teacher: Option<&Model<T>>,
    cfg: &TrainConfig,
) -> Result<LossBreakdown> {
    let comp = cfg.components();
    let loss_cfg = cfg.effective_loss();
    let lr = cfg.learning_rate(state.epoch(cfg));
    let n = batch.len();

    let (sr_s, taps_s, trace) = state.student.forward_train(&batch.lr)?;
    let teacher_out = if comp.needs_teacher() {
        let t = teacher.ok_or_else(|| Error::Config(format!("mode {} needs a teacher", cfg.mode)))?;
        Some(t.forward_with_taps(&batch.lr)?)
    } else {
        None
    };
    let alpha = match &teacher_out {
        Some((sr_t, _)) if comp.adaptive => adaptive_indicator(&sr_s, sr_t, &batch.hr)?,
        Some(_) => IndicatorVec::ones(n),
        None => IndicatorVec::zeros(n),
    };

    let (c_gt, c_t) = comp.image_coefficients::<T>(&alpha);
    let gt = weighted_l1(&sr_s, &batch.hr, &c_gt)?;
    let mut dsr = gt.grad_a;
    let mut l_teacher = T::zero();
    if let Some((sr_t, _)) = &teacher_out {
        let t = weighted_l1(&sr_s, sr_t, &c_t)?;
        dsr.add_assign(&t.grad_a)?;
        l_teacher = t.value;
    }

    state.student.zero_grad();
    state.regressors.zero_grad();
    let lambda = T::lit(loss_cfg.lambda_facd);
    let mut l_feat = T::zero();
    let mut dtaps: Option<[Tensor4<T>; 3]> = None;
    if let Some((sr_t, taps_t)) = &teacher_out {
        match comp.feature {
            FeatureTerm::None => {}
            FeatureTerm::Contrastive(_) | FeatureTerm::Plain => {
                let f = if comp.feature == FeatureTerm::Plain {
                    plain_fd_loss(&taps_s, taps_t, &mut state.regressors, &loss_cfg)?
                } else {
                    facd_loss(&taps_s, taps_t, &mut state.regressors, &alpha, &loss_cfg)?
                };
                l_feat = f.value;
                dtaps = Some(f.grad_student.map(|mut g| {
                    g.scale_in_place(lambda);
                    g
                }));
                state.regressors.visit_params_mut("", &mut |_, p| {
                    for g in &mut p.grad {
                        *g *= lambda;
                    }
                });
            }
            FeatureTerm::ImageContrast => {
                let f = icd_loss(&sr_s, sr_t, &alpha, &loss_cfg)?;
                l_feat = f.value;
                dsr.axpy(lambda, &f.grad_student)?;
            }
        }
    }

    let as_f64 = |v: T| v.to_f64().unwrap_or(f64::NAN);
    let breakdown = total_loss(
        as_f64(gt.value),
        as_f64(l_teacher),
        as_f64(l_feat),
        loss_cfg.lambda_facd,
        &alpha,
    );
    if !breakdown.is_finite() {
        return Err(Error::NonFiniteLoss {
            step: state.step,
            breakdown: format!("{breakdown:?}"),
        });
    }

    state.student.backward(trace, &dsr, dtaps.as_ref())?;
    state.adam.begin_step();
    state.adam.update(STUDENT, &mut state.student, lr);
    state.adam.update(REGRESSOR, state.regressors.as_mut_slice(), lr);
    state.step += 1;
    Ok(breakdown)
}
