//! Per-step training cost of the desk-scale models.
//!
//! `cargo run --release --example step_timing`

use facd_core::datapipe::{sample_batch_at, synthetic_image_set};
use facd_core::models::{EdsrConfig, ModelConfig};
use facd_core::train::{train_step, Mode, TrainConfig, TrainState};
use std::time::Instant;

const STEPS: u64 = 20;

fn ms_per_step(state: &mut TrainState<f32>, cfg: &TrainConfig, teacher: Option<&facd_core::ModelF>) -> f64 {
    let set = synthetic_image_set::<f32>(20, 64, 1);
    let start = Instant::now();
    for s in 0..STEPS {
        let b = sample_batch_at(&set, cfg.patch, cfg.scale(), cfg.batch, 0, s).unwrap();
        train_step(state, &b, teacher, cfg).unwrap();
    }
    start.elapsed().as_secs_f64() * 1000.0 / STEPS as f64
}

fn main() {
    for (batch, patch) in [(16, 16), (8, 16)] {
        let cfg = TrainConfig {
            teacher: ModelConfig::Edsr(EdsrConfig::new(32, 6, 2, 1.0)),
            student: ModelConfig::Edsr(EdsrConfig::new(16, 3, 2, 1.0)),
            batch,
            patch,
            ..TrainConfig::default()
        };
        let tcfg = TrainConfig {
            student: cfg.teacher.clone(),
            mode: Mode::Baseline,
            ..cfg.clone()
        };
        let mut ts = TrainState::<f32>::init(&tcfg).unwrap();
        let teacher_ms = ms_per_step(&mut ts, &tcfg, None);
        let mut times = vec![];
        for mode in [Mode::Baseline, Mode::Facd] {
            let c = TrainConfig { mode, ..cfg.clone() };
            let mut st = TrainState::<f32>::init(&c).unwrap();
            times.push(ms_per_step(&mut st, &c, Some(&ts.student)));
        }
        let total = (teacher_ms * 2000.0 + 3.0 * 1500.0 * (times[0] + times[1])) / 1000.0;
        println!(
            "batch {batch} patch {patch}: teacher {teacher_ms:.1} ms, baseline {:.1} ms, facd {:.1} ms, desk comparison ~{total:.0} s",
            times[0], times[1]
        );
    }
}
