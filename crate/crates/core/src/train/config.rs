use crate::error::{Error, Result};
use crate::losses::{IndicatorVec, LossConfig, Similarity};
use crate::models::{Arch, EdsrConfig, ModelConfig};
use crate::optim::{learning_rate, AdamConfig};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

/// Which combination of loss terms a run optimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// L1 to ground truth only; no teacher.
    Baseline,
    /// Ground truth plus L1 to the teacher output.
    ImageKd,
    /// Image terms plus a direct L1 match of regressed features.
    PlainFd,
    /// Image terms plus contrastive distillation on output images.
    Icd,
    /// Image terms plus feature contrastive distillation, gate always open.
    Fcd,
    /// Image terms plus feature contrastive distillation with the adaptive gate.
    Facd,
    /// Like `Fcd` with dot-product similarity and a softmax cross-entropy.
    InfonceFcd,
}

impl Mode {
    pub const ALL: [Mode; 7] = [
        Mode::Baseline,
        Mode::ImageKd,
        Mode::PlainFd,
        Mode::Icd,
        Mode::Fcd,
        Mode::Facd,
        Mode::InfonceFcd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::ImageKd => "image_kd",
            Mode::PlainFd => "plain_fd",
            Mode::Icd => "icd",
            Mode::Fcd => "fcd",
            Mode::Facd => "facd",
            Mode::InfonceFcd => "infonce_fcd",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?}")))
    }
}

/// Override for one image-domain term; `Auto` defers to the mode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Toggle {
    #[default]
    Auto,
    On,
    Off,
}

impl Toggle {
    fn resolve(self, default: bool) -> bool {
        match self {
            Toggle::Auto => default,
            Toggle::On => true,
            Toggle::Off => false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureTerm {
    None,
    Contrastive(Similarity),
    Plain,
    ImageContrast,
}

/// The active loss terms of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Components {
    pub gt: bool,
    pub teacher: bool,
    pub feature: FeatureTerm,
    pub adaptive: bool,
}

impl Components {
    pub fn needs_teacher(&self) -> bool {
        self.teacher || self.adaptive || self.feature != FeatureTerm::None
    }

    pub fn needs_regressors(&self) -> bool {
        matches!(self.feature, FeatureTerm::Contrastive(_) | FeatureTerm::Plain)
    }

    pub fn is_contrastive(&self) -> bool {
        matches!(self.feature, FeatureTerm::Contrastive(_) | FeatureTerm::ImageContrast)
    }

    /// Per-sample weights of the ground-truth and teacher L1 terms, both
    /// scaled by `1/2N` downstream.
    ///
    /// With both terms on they are `2 - alpha` and `alpha`. A term that is
    /// on alone gets weight 2 (times `alpha` for the teacher term), so it
    /// reduces to a plain per-sample mean L1.
    pub fn image_coefficients<T: Scalar>(&self, alpha: &IndicatorVec) -> (Vec<T>, Vec<T>) {
        let two = T::lit(2.0);
        let a = alpha.values::<T>();
        match (self.gt, self.teacher) {
            (true, true) => (a.iter().map(|&v| two - v).collect(), a),
            (true, false) => (vec![two; a.len()], vec![T::zero(); a.len()]),
            (false, true) => (vec![T::zero(); a.len()], a.iter().map(|&v| two * v).collect()),
            (false, false) => (vec![T::zero(); a.len()], vec![T::zero(); a.len()]),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressorInit {
    #[default]
    Random,
    /// Identity kernels and unit PReLU slopes; needs equal tap widths.
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub teacher: ModelConfig,
    pub student: ModelConfig,
    pub loss: LossConfig,
    pub mode: Mode,
    pub gt_term: Toggle,
    pub teacher_term: Toggle,
    pub regressor_init: RegressorInit,
    pub batch: usize,
    /// LR patch side; HR patches are `patch * scale`.
    pub patch: usize,
    pub lr0: f64,
    pub lr_half_epoch: u64,
    pub epochs: u64,
    pub steps_per_epoch: u64,
    pub seed: u64,
    pub teacher_ckpt: Option<PathBuf>,
    /// Baseline-L1 steps used to train a teacher when no checkpoint is given.
    pub teacher_pretrain_steps: u64,
    /// Save a checkpoint every this many steps; 0 saves only at the end.
    pub checkpoint_every: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            teacher: ModelConfig::Edsr(EdsrConfig::new(32, 6, 2, 1.0)),
            student: ModelConfig::Edsr(EdsrConfig::new(16, 3, 2, 1.0)),
            loss: LossConfig::default(),
            mode: Mode::Facd,
            gt_term: Toggle::Auto,
            teacher_term: Toggle::Auto,
            regressor_init: RegressorInit::Random,
            batch: 16,
            patch: 48,
            lr0: 2e-4,
            lr_half_epoch: 150,
            epochs: 1,
            steps_per_epoch: 50,
            seed: 0,
            teacher_ckpt: None,
            teacher_pretrain_steps: 0,
            checkpoint_every: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn arch(&self) -> Arch {
        self.student.arch()
    }

    pub fn scale(&self) -> usize {
        self.student.scale()
    }

    pub fn total_steps(&self) -> u64 {
        self.epochs * self.steps_per_epoch
    }

    pub fn epoch_of(&self, step: u64) -> u64 {
        step / self.steps_per_epoch
    }

    pub fn learning_rate(&self, epoch: u64) -> f64 {
        learning_rate(self.lr0, self.lr_half_epoch, epoch)
    }

    pub fn components(&self) -> Components {
        let (feature, adaptive) = match self.mode {
            Mode::Baseline | Mode::ImageKd => (FeatureTerm::None, false),
            Mode::PlainFd => (FeatureTerm::Plain, false),
            Mode::Icd => (FeatureTerm::ImageContrast, false),
            Mode::Fcd => (FeatureTerm::Contrastive(Similarity::Euclidean), false),
            Mode::Facd => (FeatureTerm::Contrastive(Similarity::Euclidean), true),
            Mode::InfonceFcd => (FeatureTerm::Contrastive(Similarity::DotProduct), false),
        };
        Components {
            gt: self.gt_term.resolve(true),
            teacher: self.teacher_term.resolve(self.mode != Mode::Baseline),
            feature,
            adaptive,
        }
    }

    /// The loss configuration with similarity and gating fixed by the mode.
    pub fn effective_loss(&self) -> LossConfig {
        let c = self.components();
        let mut loss = self.loss.clone();
        loss.adaptive = c.adaptive;
        if let FeatureTerm::Contrastive(sim) = c.feature {
            loss.similarity = sim;
        }
        loss
    }

    pub fn validate(&self) -> Result<()> {
        self.teacher.validate()?;
        self.student.validate()?;
        self.loss.validate()?;
        if self.teacher.arch() != self.student.arch() {
            return Err(Error::Config(format!(
                "teacher is {} but student is {}",
                self.teacher.arch(),
                self.student.arch()
            )));
        }
        if self.teacher.scale() != self.student.scale() {
            return Err(Error::Config(format!(
                "teacher scale {} differs from student scale {}",
                self.teacher.scale(),
                self.student.scale()
            )));
        }
        let c = self.components();
        if !c.gt && !c.teacher && c.feature == FeatureTerm::None {
            return Err(Error::Config("no loss term is active".into()));
        }
        if self.batch < 1 || (c.is_contrastive() && self.batch < 2) {
            return Err(Error::Config(format!(
                "batch {} is too small for mode {}",
                self.batch, self.mode
            )));
        }
        if self.patch < 8 {
            return Err(Error::Config(format!("patch must be >= 8, got {}", self.patch)));
        }
        if self.steps_per_epoch < 1 {
            return Err(Error::Config("steps_per_epoch must be >= 1".into()));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if c.needs_regressors()
            && self.regressor_init == RegressorInit::Identity
            && self.student.channels() != self.teacher.channels()
        {
            return Err(Error::Config(format!(
                "identity regressors need equal widths, got {} -> {}",
                self.student.channels(),
                self.teacher.channels()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(mode: Mode) -> TrainConfig {
        TrainConfig {
            mode,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn component_matrix() {
        let c = cfg(Mode::Baseline).components();
        assert!(c.gt && !c.teacher && !c.needs_teacher());
        let c = cfg(Mode::ImageKd).components();
        assert!(c.gt && c.teacher && c.feature == FeatureTerm::None && !c.adaptive);
        let c = cfg(Mode::Fcd).components();
        assert_eq!(c.feature, FeatureTerm::Contrastive(Similarity::Euclidean));
        assert!(!c.adaptive);
        assert!(cfg(Mode::Facd).components().adaptive);
        let loss = cfg(Mode::InfonceFcd).effective_loss();
        assert_eq!(loss.similarity, Similarity::DotProduct);
        assert!(!loss.adaptive);

        let no_gt = TrainConfig {
            gt_term: Toggle::Off,
            ..cfg(Mode::Fcd)
        };
        let c = no_gt.components();
        assert!(!c.gt && c.teacher);
    }

    #[test]
    fn image_coefficients_follow_the_gate() {
        let alpha = IndicatorVec::from_bools(vec![true, false]);
        let (g, t) = cfg(Mode::Facd).components().image_coefficients::<f64>(&alpha);
        assert_eq!((g, t), (vec![1.0, 2.0], vec![1.0, 0.0]));
        let (g, t) = cfg(Mode::Baseline).components().image_coefficients::<f64>(&alpha);
        assert_eq!((g, t), (vec![2.0, 2.0], vec![0.0, 0.0]));
        let teacher_only = TrainConfig {
            gt_term: Toggle::Off,
            ..cfg(Mode::Fcd)
        };
        let (g, t) = teacher_only.components().image_coefficients::<f64>(&alpha);
        assert_eq!((g, t), (vec![0.0, 0.0], vec![2.0, 0.0]));
    }

    #[test]
    fn schedule_and_validation() {
        let c = TrainConfig::default();
        assert!(c.validate().is_ok());
        assert_eq!(c.learning_rate(149), 2e-4);
        assert_eq!(c.learning_rate(150), 1e-4);
        let bad = TrainConfig {
            batch: 1,
            ..cfg(Mode::Facd)
        };
        assert!(bad.validate().is_err());
        assert!(TrainConfig { batch: 1, ..cfg(Mode::Baseline) }.validate().is_ok());
        let nothing = TrainConfig {
            gt_term: Toggle::Off,
            ..cfg(Mode::Baseline)
        };
        assert!(nothing.validate().is_err());
        let ident = TrainConfig {
            regressor_init: RegressorInit::Identity,
            ..cfg(Mode::Facd)
        };
        assert!(ident.validate().is_err());
        assert_eq!("infonce_fcd".parse::<Mode>().unwrap(), Mode::InfonceFcd);
        assert!("nope".parse::<Mode>().is_err());
    }
}
