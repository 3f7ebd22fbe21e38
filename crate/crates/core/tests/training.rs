mod common;

use facd_core::datapipe::{sample_batch_at, synthetic_image_set, ImageItem, ImageSet};
use facd_core::eval::{evaluate, EvalOptions};
use facd_core::models::{Checkpoint, EdsrConfig, ModelConfig};
use facd_core::nn::Parameterized;
use facd_core::train::*;
use facd_core::{Error, Tensor4};

fn tiny(mode: Mode) -> TrainConfig {
    TrainConfig {
        teacher: ModelConfig::Edsr(EdsrConfig::new(8, 3, 2, 1.0)),
        student: ModelConfig::Edsr(EdsrConfig::new(4, 3, 2, 1.0)),
        mode,
        batch: 4,
        patch: 8,
        lr0: 1e-3,
        epochs: 2,
        steps_per_epoch: 5,
        seed: 11,
        teacher_pretrain_steps: 10,
        ..TrainConfig::default()
    }
}

fn data() -> ImageSet<f32> {
    synthetic_image_set(6, 32, 3)
}

fn weights<P: Parameterized<f32> + ?Sized>(m: &P) -> Vec<f32> {
    let mut v = Vec::new();
    m.visit_params("", &mut |_, p| v.extend_from_slice(&p.value));
    v
}

#[test]
fn baseline_runs_without_a_teacher_and_others_refuse() {
    let set = data();
    let cfg = tiny(Mode::Baseline);
    let mut state = TrainState::<f32>::init(&cfg).unwrap();
    let batch = sample_batch_at(&set, cfg.patch, 2, cfg.batch, cfg.seed, 0).unwrap();
    let b = train_step(&mut state, &batch, None, &cfg).unwrap();
    assert_eq!((b.l_teacher, b.l_facd, b.alpha_mean), (0.0, 0.0, 0.0));
    assert!(b.l_gt > 0.0);
    assert_eq!(state.step, 1);

    let cfg = tiny(Mode::Facd);
    let mut state = TrainState::<f32>::init(&cfg).unwrap();
    assert!(matches!(train_step(&mut state, &batch, None, &cfg), Err(Error::Config(_))));
}

#[test]
fn identical_teacher_and_student_give_zero_feature_loss() {
    let set = data();
    let cfg = TrainConfig {
        teacher: ModelConfig::Edsr(EdsrConfig::new(4, 3, 2, 1.0)),
        regressor_init: RegressorInit::Identity,
        ..tiny(Mode::Facd)
    };
    let mut state = TrainState::<f32>::init(&cfg).unwrap();
    let teacher = state.student.clone();
    let batch = sample_batch_at(&set, cfg.patch, 2, cfg.batch, cfg.seed, 0).unwrap();
    let b = train_step(&mut state, &batch, Some(&teacher), &cfg).unwrap();
    assert_eq!(b.l_facd, 0.0);
    assert_eq!(b.alpha_mean, 1.0);
}

#[test]
fn teacher_weights_are_never_touched() {
    let set = data();
    let cfg = tiny(Mode::Facd);
    let teacher = pretrain_teacher::<f32>(&cfg, &set, 3).unwrap();
    let before = weights(&teacher);
    let mut state = TrainState::<f32>::init(&cfg).unwrap();
    for step in 0..4 {
        let batch = sample_batch_at(&set, cfg.patch, 2, cfg.batch, cfg.seed, step).unwrap();
        train_step(&mut state, &batch, Some(&teacher), &cfg).unwrap();
    }
    assert_eq!(before, weights(&teacher));
}

#[test]
fn every_mode_takes_finite_steps() {
    let set = data();
    let base = tiny(Mode::Facd);
    let teacher = pretrain_teacher::<f32>(&base, &set, 2).unwrap();
    for mode in Mode::ALL {
        let cfg = tiny(mode);
        let mut state = TrainState::<f32>::init(&cfg).unwrap();
        let before = weights(&state.student);
        let batch = sample_batch_at(&set, cfg.patch, 2, cfg.batch, cfg.seed, 0).unwrap();
        let b = train_step(&mut state, &batch, Some(&teacher), &cfg).unwrap();
        assert!(b.is_finite(), "{mode}");
        assert_ne!(before, weights(&state.student), "{mode}");
        let has_feature = !matches!(mode, Mode::Baseline | Mode::ImageKd);
        assert_eq!(b.l_facd > 0.0, has_feature, "{mode}: {b:?}");
    }
}

#[test]
fn non_finite_loss_aborts_without_updating() {
    let mut set = data();
    set.items[0].hr = set.items[0].hr.map(|_| f32::NAN);
    let set = ImageSet::from_items(vec![set.items[0].clone()]).unwrap();
    let cfg = tiny(Mode::Baseline);
    let mut state = TrainState::<f32>::init(&cfg).unwrap();
    let before = weights(&state.student);
    let batch = sample_batch_at(&set, cfg.patch, 2, cfg.batch, cfg.seed, 0).unwrap();
    match train_step(&mut state, &batch, None, &cfg) {
        Err(Error::NonFiniteLoss { step, breakdown }) => {
            assert_eq!(step, 0);
            assert!(breakdown.contains("l_gt"));
        }
        other => panic!("expected NonFiniteLoss, got {other:?}"),
    }
    assert_eq!(before, weights(&state.student));
    assert_eq!(state.step, 0);
}

#[test]
fn state_checkpoint_round_trips_bit_exactly() {
    let set = data();
    let cfg = tiny(Mode::Fcd);
    let teacher = pretrain_teacher::<f32>(&cfg, &set, 2).unwrap();
    let mut state = TrainState::<f32>::init(&cfg).unwrap();
    for step in 0..3 {
        let batch = sample_batch_at(&set, cfg.patch, 2, cfg.batch, cfg.seed, step).unwrap();
        train_step(&mut state, &batch, Some(&teacher), &cfg).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.safetensors");
    state.save(&p, &cfg).unwrap();
    let back = TrainState::<f32>::load(&p, &cfg).unwrap();
    assert_eq!(back.step, 3);
    assert_eq!(weights(&back.student), weights(&state.student));
    assert_eq!(weights(back.regressors.as_slice()), weights(state.regressors.as_slice()));
    assert_eq!(back.adam, state.adam);

    let other_mode = tiny(Mode::Facd);
    assert!(matches!(TrainState::<f32>::load(&p, &other_mode), Err(Error::Mismatch(_))));
    let other_seed = TrainConfig { seed: 12, ..cfg };
    assert!(matches!(TrainState::<f32>::load(&p, &other_seed), Err(Error::Mismatch(_))));
}

/// Bright ground truth with a student biased far below it: the teacher is
/// strictly closer on every patch, so the adaptive gate stays open.
#[test]
fn fcd_equals_facd_while_the_gate_stays_open() {
    let items = (0..4)
        .map(|i| ImageItem {
            id: format!("bright_{i}.png"),
            hr: Tensor4::from_fn([1, 3, 32, 32], |[_, c, y, x]| 0.8 + 0.004 * ((x + 2 * y + c + i) % 40) as f32),
        })
        .collect();
    let set = ImageSet::from_items(items).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let base = tiny(Mode::Facd);
    let teacher = pretrain_teacher::<f32>(&base, &set, 30).unwrap();
    let tpath = dir.path().join("teacher.safetensors");
    Checkpoint::from_model(&teacher, "teacher").save(&tpath).unwrap();

    let run = |mode: Mode| {
        let cfg = TrainConfig {
            teacher_ckpt: Some(tpath.clone()),
            ..tiny(mode)
        };
        let mut state = TrainState::<f32>::init(&cfg).unwrap();
        // push the student's output far below the data
        if let facd_core::models::Model::Edsr(m) = &mut state.student {
            m.tail.out.bias.value.iter_mut().for_each(|b| *b = -5.0);
        }
        let mut alphas = Vec::new();
        for step in 0..6 {
            let batch = sample_batch_at(&set, cfg.patch, 2, cfg.batch, cfg.seed, step).unwrap();
            alphas.push(train_step(&mut state, &batch, Some(&teacher), &cfg).unwrap().alpha_mean);
        }
        (weights(&state.student), weights(state.regressors.as_slice()), alphas)
    };
    let (ws_fcd, wr_fcd, _) = run(Mode::Fcd);
    let (ws_facd, wr_facd, alphas) = run(Mode::Facd);
    assert!(alphas.iter().all(|&a| a == 1.0), "gate closed somewhere: {alphas:?}");
    assert_eq!(ws_fcd, ws_facd);
    assert_eq!(wr_fcd, wr_facd);
}

#[test]
fn fit_is_deterministic_and_resumable() {
    let set = data();
    let cfg = TrainConfig {
        checkpoint_every: 3,
        ..tiny(Mode::Facd)
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = fit(&cfg, &set, a.path(), &FitOptions::default()).unwrap();
    let rb = fit(&cfg, &set, b.path(), &FitOptions::default()).unwrap();
    assert!(ra.finished);
    assert_eq!(std::fs::read(&ra.checkpoint).unwrap(), std::fs::read(&rb.checkpoint).unwrap());

    let metrics = std::fs::read_to_string(RunLayout::new(a.path()).train_metrics()).unwrap();
    let records: Vec<StepRecord> = metrics.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 10);
    assert_eq!(records[9].step, 9);
    assert_eq!(records[9].epoch, 1);

    // interrupted at step 4, resumed from the step-3 checkpoint
    let c = tempfile::tempdir().unwrap();
    let opts = FitOptions {
        stop_at: Some(4),
        ..FitOptions::default()
    };
    let part = fit(&cfg, &set, c.path(), &opts).unwrap();
    assert!(!part.finished);
    let layout = RunLayout::new(c.path());
    let resume = FitOptions {
        resume_from: Some(layout.step_checkpoint(3)),
        ..FitOptions::default()
    };
    let rc = fit(&cfg, &set, c.path(), &resume).unwrap();
    assert_eq!(std::fs::read(&ra.checkpoint).unwrap(), std::fs::read(&rc.checkpoint).unwrap());
    let resumed_metrics = std::fs::read_to_string(layout.train_metrics()).unwrap();
    assert_eq!(resumed_metrics, metrics);
}

#[test]
fn fit_evaluates_each_epoch() {
    let set = data();
    let heldout = synthetic_image_set::<f32>(2, 24, 99);
    let cfg = tiny(Mode::Baseline);
    let dir = tempfile::tempdir().unwrap();
    let opts = FitOptions {
        eval_set: Some(&heldout),
        ..FitOptions::default()
    };
    let out = fit(&cfg, &set, dir.path(), &opts).unwrap();
    assert_eq!(out.evals.len(), 2);
    let rep = out.final_report.unwrap();
    assert_eq!(rep.mean_psnr, out.evals[1].mean_psnr);
    assert!(dir.path().join("reports/final_eval.txt").exists());
}

#[test]
fn one_row_ablation_equals_plain_fit_and_evaluate() {
    let set = data();
    let heldout = synthetic_image_set::<f32>(2, 24, 99);
    let cfg = tiny(Mode::Baseline);
    let dir = tempfile::tempdir().unwrap();
    let rows = vec![AblationRow {
        label: "only".into(),
        config: cfg.clone(),
    }];
    let table = run_ablation("single", &rows, &[cfg.seed], &set, &heldout, dir.path()).unwrap();
    assert_eq!(table.rows.len(), 1);

    let plain = tempfile::tempdir().unwrap();
    let out = fit(&cfg, &set, plain.path(), &FitOptions::default()).unwrap();
    let rep = evaluate(&out.state.student, &heldout, 2, &EvalOptions::default()).unwrap();
    assert_eq!(table.rows[0].mean, rep.mean_psnr);
    assert_eq!(table.rows[0].sd, 0.0);

    // rerun reuses the persisted result
    let again = run_ablation("single", &rows, &[cfg.seed], &set, &heldout, dir.path()).unwrap();
    assert_eq!(again, table);
}

#[test]
fn ablation_rejects_rows_differing_off_axis() {
    let set = data();
    let mut rows = ablation_matrix(&tiny(Mode::Facd), Axis::Adaptive);
    rows[1].config.batch = 2;
    let dir = tempfile::tempdir().unwrap();
    let r = run_ablation("bad", &rows, &[0], &set, &set, dir.path());
    assert!(matches!(r, Err(Error::Config(_))));
}
