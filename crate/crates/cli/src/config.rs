//! The flat TOML run configuration shared by every command.

use facd_core::losses::{LossConfig, Similarity, DEFAULT_LAMBDA, DEFAULT_TAP_WEIGHTS, DEFAULT_TEMPERATURE};
use facd_core::models::{Arch, EdsrConfig, ModelConfig, RcanConfig};
use facd_core::optim::AdamConfig;
use facd_core::train::{Mode, RegressorInit, Toggle, TrainConfig};
use serde::Deserialize;
use std::path::{Path, PathBuf};

/// Every key except the data directories has a default.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub train_dir: Option<PathBuf>,
    pub eval_dir: Option<PathBuf>,
    pub out_dir: PathBuf,

    pub arch: Arch,
    pub scale: usize,
    pub teacher_channels: usize,
    pub teacher_blocks: usize,
    pub teacher_groups: usize,
    pub teacher_res_scaling: f64,
    pub student_channels: usize,
    pub student_blocks: usize,
    pub student_groups: usize,
    pub student_res_scaling: f64,
    pub reduction: usize,

    pub mode: Mode,
    pub gt_term: Toggle,
    pub teacher_term: Toggle,
    pub regressor_init: RegressorInit,
    pub lambda_facd: f64,
    pub tap_weights: [f64; 3],
    pub temperature: f64,
    pub eps_norm: f64,
    pub eps_denom: f64,

    pub batch: usize,
    pub patch: usize,
    pub lr0: f64,
    pub lr_half_epoch: u64,
    pub epochs: u64,
    pub steps_per_epoch: u64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub teacher_ckpt: Option<PathBuf>,
    pub teacher_pretrain_steps: u64,
    pub checkpoint_every: u64,
    pub resume: bool,

    pub shave: Option<usize>,
    pub dump_images: bool,
    pub n_samples: usize,
    pub seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train_dir: None,
            eval_dir: None,
            out_dir: PathBuf::from("out"),
            arch: Arch::Edsr,
            scale: 2,
            teacher_channels: 32,
            teacher_blocks: 6,
            teacher_groups: 3,
            teacher_res_scaling: 1.0,
            student_channels: 16,
            student_blocks: 3,
            student_groups: 3,
            student_res_scaling: 1.0,
            reduction: 16,
            mode: Mode::Facd,
            gt_term: Toggle::Auto,
            teacher_term: Toggle::Auto,
            regressor_init: RegressorInit::Random,
            lambda_facd: DEFAULT_LAMBDA,
            tap_weights: DEFAULT_TAP_WEIGHTS,
            temperature: DEFAULT_TEMPERATURE,
            eps_norm: 1e-8,
            eps_denom: 1e-8,
            batch: 16,
            patch: 48,
            lr0: 2e-4,
            lr_half_epoch: 150,
            epochs: 1,
            steps_per_epoch: 50,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            teacher_ckpt: None,
            teacher_pretrain_steps: 2000,
            checkpoint_every: 0,
            resume: false,
            shave: None,
            dump_images: false,
            n_samples: 1000,
            seeds: vec![0, 1, 2],
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// Reads `path`; relative data paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut cfg = Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.train_dir.as_mut().map(fix);
        cfg.eval_dir.as_mut().map(fix);
        cfg.teacher_ckpt.as_mut().map(fix);
        fix(&mut cfg.out_dir);
        Ok(cfg)
    }

    fn model(&self, channels: usize, blocks: usize, groups: usize, res_scaling: f64) -> ModelConfig {
        match self.arch {
            Arch::Edsr => ModelConfig::Edsr(EdsrConfig::new(channels, blocks, self.scale, res_scaling)),
            Arch::Rcan => ModelConfig::Rcan(RcanConfig::new(channels, groups, blocks, self.reduction, self.scale)),
        }
    }

    pub fn teacher_model(&self) -> ModelConfig {
        self.model(self.teacher_channels, self.teacher_blocks, self.teacher_groups, self.teacher_res_scaling)
    }

    pub fn student_model(&self) -> ModelConfig {
        self.model(self.student_channels, self.student_blocks, self.student_groups, self.student_res_scaling)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            teacher: self.teacher_model(),
            student: self.student_model(),
            loss: LossConfig {
                lambda_facd: self.lambda_facd,
                weights: self.tap_weights,
                eps_norm: self.eps_norm,
                eps_denom: self.eps_denom,
                similarity: Similarity::Euclidean,
                adaptive: self.mode == Mode::Facd,
                temperature: self.temperature,
            },
            mode: self.mode,
            gt_term: self.gt_term,
            teacher_term: self.teacher_term,
            regressor_init: self.regressor_init,
            batch: self.batch,
            patch: self.patch,
            lr0: self.lr0,
            lr_half_epoch: self.lr_half_epoch,
            epochs: self.epochs,
            steps_per_epoch: self.steps_per_epoch,
            seed: self.seed,
            teacher_ckpt: self.teacher_ckpt.clone(),
            teacher_pretrain_steps: self.teacher_pretrain_steps,
            checkpoint_every: self.checkpoint_every,
            adam: AdamConfig {
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.adam_eps,
            },
        }
    }
}
