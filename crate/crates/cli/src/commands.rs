use crate::config::RunConfig;
use crate::Failure;
use facd_core::datapipe::{load_image_set, ImageSet};
use facd_core::eval::{evaluate, worse_counts, EvalOptions};
use facd_core::models::{Checkpoint, Model, ModelConfig};
use facd_core::nn::param_count;
use facd_core::train::{ablation_matrix, fit, run_ablation, Axis, FitOptions, RunLayout};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fs;
use std::path::{Path, PathBuf};

type Outcome = Result<(), Failure>;

fn load_config(path: &Path) -> Result<RunConfig, Failure> {
    RunConfig::load(path).map_err(Failure::config)
}

fn load_dir(dir: Option<&PathBuf>, key: &str) -> Result<ImageSet<f32>, Failure> {
    let dir = dir.ok_or_else(|| Failure::data(format!("{key} is not set")))?;
    if !dir.is_dir() {
        return Err(Failure::data(format!("{key} {} does not exist", dir.display())));
    }
    Ok(load_image_set(dir)?)
}

/// Loads a model checkpoint and checks it against the configured models.
fn load_model(path: &Path, cfg: &RunConfig) -> Result<Model<f32>, Failure> {
    let ck = Checkpoint::<f32>::load(path)?;
    if ck.meta.arch != cfg.arch {
        return Err(Failure::from(facd_core::Error::Mismatch(format!(
            "{} holds a {} model but the config says {}",
            path.display(),
            ck.meta.arch,
            cfg.arch
        ))));
    }
    if ck.meta.model != cfg.teacher_model() && ck.meta.model != cfg.student_model() {
        return Err(Failure::from(facd_core::Error::Mismatch(format!(
            "{} holds {:?}, matching neither configured model",
            path.display(),
            ck.meta.model
        ))));
    }
    Ok(ck.to_model()?)
}

pub fn train(config: &Path, checkpoint: Option<PathBuf>) -> Outcome {
    let cfg = load_config(config)?;
    let tc = cfg.train_config();
    tc.validate()?;
    let data = load_dir(cfg.train_dir.as_ref(), "train_dir")?;
    let eval_set = match &cfg.eval_dir {
        Some(_) => Some(load_dir(cfg.eval_dir.as_ref(), "eval_dir")?),
        None => None,
    };
    log::info!("{} training images, writing to {}", data.items.len(), cfg.out_dir.display());
    let layout = RunLayout::new(&cfg.out_dir);
    let resume_from = checkpoint.or_else(|| if cfg.resume { layout.latest_step_checkpoint() } else { None });
    let opts = FitOptions {
        eval_set: eval_set.as_ref(),
        resume_from,
        stop_at: None,
    };
    let out = fit(&tc, &data, &cfg.out_dir, &opts)?;
    println!("final checkpoint: {}", out.checkpoint.display());
    if let Some(b) = out.last {
        println!(
            "last step: total {:.6} (gt {:.6}, teacher {:.6}, feature {:.6}, alpha {:.3})",
            b.total, b.l_gt, b.l_teacher, b.l_facd, b.alpha_mean
        );
    }
    if let Some(rep) = out.final_report {
        print!("{}", rep.to_table());
    }
    Ok(())
}

pub fn eval(config: &Path, checkpoint: &Path) -> Outcome {
    let cfg = load_config(config)?;
    let set = load_dir(cfg.eval_dir.as_ref(), "eval_dir")?;
    let model = load_model(checkpoint, &cfg)?;
    let layout = RunLayout::new(&cfg.out_dir);
    layout.create()?;
    let dataset_id = cfg
        .eval_dir
        .as_ref()
        .and_then(|d| d.file_name())
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "eval".into());
    let opts = EvalOptions {
        dataset_id: dataset_id.clone(),
        shave: cfg.shave,
        dump_dir: cfg.dump_images.then(|| layout.images().join(&dataset_id)),
    };
    let rep = evaluate(&model, &set, cfg.scale, &opts)?;
    fs::write(layout.reports().join(format!("eval_{dataset_id}.jsonl")), rep.to_records())?;
    fs::write(layout.reports().join(format!("eval_{dataset_id}.txt")), rep.to_table())?;
    print!("{}", rep.to_table());
    Ok(())
}

pub fn ablate(config: &Path, axis: &str) -> Outcome {
    let axis: Axis = axis.parse()?;
    let cfg = load_config(config)?;
    let base = cfg.train_config();
    base.validate()?;
    let data = load_dir(cfg.train_dir.as_ref(), "train_dir")?;
    let eval_set = load_dir(cfg.eval_dir.as_ref(), "eval_dir")?;
    let rows = ablation_matrix(&base, axis);
    let out = cfg.out_dir.join("ablation").join(axis.name());
    let table = run_ablation(axis.name(), &rows, &cfg.seeds, &data, &eval_set, &out)?;
    print!("{}", table.to_table());
    Ok(())
}

pub fn stats(config: &Path, student: &Path, teacher: Option<PathBuf>) -> Outcome {
    let cfg = load_config(config)?;
    if cfg.n_samples == 0 {
        return Err(Failure::config("n_samples must be >= 1"));
    }
    let teacher = teacher
        .or_else(|| cfg.teacher_ckpt.clone())
        .ok_or_else(|| Failure::config("teacher_ckpt is not set and no --teacher given"))?;
    let t = load_model(&teacher, &cfg)?;
    let s = load_model(student, &cfg)?;
    // patches come from the training set, where the gate operates
    let set = match &cfg.train_dir {
        Some(d) => load_dir(Some(d), "train_dir")?,
        None => load_dir(cfg.eval_dir.as_ref(), "eval_dir")?,
    };
    let counts = worse_counts(&t, &s, &set, cfg.patch, cfg.scale, cfg.n_samples, cfg.seed)?;
    println!(
        "teacher_worse_rate {:.4} (n_samples {}, seed {}, student closer {}, teacher closer {}, ties {})",
        counts.rate(),
        counts.total(),
        cfg.seed,
        counts.student_closer,
        counts.teacher_closer,
        counts.ties
    );
    Ok(())
}

fn describe(m: &ModelConfig) -> String {
    match m {
        ModelConfig::Edsr(c) => format!("edsr {}ch {} blocks x{}", c.channels, c.res_blocks, c.scale),
        ModelConfig::Rcan(c) => format!(
            "rcan {}ch {} groups x {} blocks x{}",
            c.channels, c.res_groups, c.blocks_per_group, c.scale
        ),
    }
}

pub fn count_params(config: &Path) -> Outcome {
    let cfg = load_config(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (role, m) in [("teacher", cfg.teacher_model()), ("student", cfg.student_model())] {
        m.validate()?;
        let model = Model::<f32>::build(&m, &mut rng)?;
        let n = param_count(&model);
        println!("{role}: {} -> {n} params ({:.2}M)", describe(&m), n as f64 / 1e6);
    }
    Ok(())
}
