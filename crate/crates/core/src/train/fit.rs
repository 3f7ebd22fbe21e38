use super::config::{Mode, Toggle, TrainConfig};
use super::state::{train_step, TrainState};
use crate::datapipe::{check_min_size, sample_batch_at, ImageSet};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalOptions, EvalReport};
use crate::losses::LossBreakdown;
use crate::models::{Checkpoint, Model};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

/// Directory layout of one run.
#[derive(Clone, Debug)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn images(&self) -> PathBuf {
        self.root.join("images")
    }

    pub fn step_checkpoint(&self, step: u64) -> PathBuf {
        self.checkpoints().join(format!("step_{step:08}.safetensors"))
    }

    pub fn final_checkpoint(&self) -> PathBuf {
        self.checkpoints().join("final.safetensors")
    }

    pub fn teacher_checkpoint(&self) -> PathBuf {
        self.checkpoints().join("teacher.safetensors")
    }

    pub fn train_metrics(&self) -> PathBuf {
        self.metrics().join("train.jsonl")
    }

    pub fn eval_metrics(&self) -> PathBuf {
        self.metrics().join("eval.jsonl")
    }

    pub fn create(&self) -> Result<()> {
        for d in [self.checkpoints(), self.metrics(), self.reports(), self.images()] {
            fs::create_dir_all(d)?;
        }
        Ok(())
    }

    /// The most advanced intermediate checkpoint, if any.
    pub fn latest_step_checkpoint(&self) -> Option<PathBuf> {
        let entries = fs::read_dir(self.checkpoints()).ok()?;
        entries
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                let step: u64 = name.strip_prefix("step_")?.strip_suffix(".safetensors")?.parse().ok()?;
                Some((step, e.path()))
            })
            .max_by_key(|(s, _)| *s)
            .map(|(_, p)| p)
    }
}

/// One line of `metrics/train.jsonl`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Zero-based index of the step.
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    pub l_gt: f64,
    pub l_teacher: f64,
    pub l_facd: f64,
    pub total: f64,
    pub alpha_mean: f64,
}

impl StepRecord {
    fn new(step: u64, epoch: u64, lr: f64, b: &LossBreakdown) -> Self {
        Self {
            step,
            epoch,
            lr,
            l_gt: b.l_gt,
            l_teacher: b.l_teacher,
            l_facd: b.l_facd,
            total: b.total,
            alpha_mean: b.alpha_mean,
        }
    }
}

/// One line of `metrics/eval.jsonl`, written after each epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochEval {
    pub epoch: u64,
    /// Steps completed when the evaluation ran.
    pub step: u64,
    pub mean_psnr: f64,
}

#[derive(Clone, Debug, Default)]
pub struct FitOptions<'a, T> {
    /// Held-out images evaluated at every epoch end and after the last step.
    pub eval_set: Option<&'a ImageSet<T>>,
    /// Continue from this training-state checkpoint.
    pub resume_from: Option<PathBuf>,
    /// Stop (and checkpoint) once this many steps are done, before the end.
    pub stop_at: Option<u64>,
}

pub struct FitOutcome<T: Scalar> {
    pub state: TrainState<T>,
    /// `final.safetensors`, or the step checkpoint written at `stop_at`.
    pub checkpoint: PathBuf,
    pub finished: bool,
    pub last: Option<LossBreakdown>,
    pub evals: Vec<EpochEval>,
    pub final_report: Option<EvalReport>,
}

/// Teacher batches come from a different stream family than student ones.
fn teacher_seed(seed: u64) -> u64 {
    seed ^ 0x7EAC_4E12_0000_0000
}

/// Trains `cfg.teacher` from scratch with the ground-truth L1 loss alone.
pub fn pretrain_teacher<T: Scalar>(cfg: &TrainConfig, data: &ImageSet<T>, steps: u64) -> Result<Model<T>> {
    let tcfg = TrainConfig {
        student: cfg.teacher.clone(),
        mode: Mode::Baseline,
        gt_term: Toggle::Auto,
        teacher_term: Toggle::Auto,
        seed: teacher_seed(cfg.seed),
        ..cfg.clone()
    };
    tcfg.validate()?;
    check_min_size(data, tcfg.patch * tcfg.scale())?;
    let mut state = TrainState::init(&tcfg)?;
    while state.step < steps {
        let batch = sample_batch_at(data, tcfg.patch, tcfg.scale(), tcfg.batch, tcfg.seed, state.step)?;
        let b = train_step(&mut state, &batch, None, &tcfg)?;
        if state.step % 100 == 0 || state.step == steps {
            log::info!("teacher step {}/{steps}: l1 {:.5}", state.step, b.l_gt);
        }
    }
    Ok(state.student)
}

pub fn load_teacher<T: Scalar>(path: &Path, cfg: &TrainConfig) -> Result<Model<T>> {
    let ck = Checkpoint::load(path)?;
    if ck.meta.model != cfg.teacher {
        return Err(Error::Mismatch(format!(
            "{} holds {:?}, config teacher is {:?}",
            path.display(),
            ck.meta.model,
            cfg.teacher
        )));
    }
    ck.to_model()
}

/// The frozen teacher for a run: from `teacher_ckpt`, from an earlier
/// pretraining in this run directory, or pretrained now and saved there.
pub fn resolve_teacher<T: Scalar>(
    cfg: &TrainConfig,
    data: &ImageSet<T>,
    layout: &RunLayout,
) -> Result<Option<Model<T>>> {
    if !cfg.components().needs_teacher() {
        return Ok(None);
    }
    if let Some(p) = &cfg.teacher_ckpt {
        return load_teacher(p, cfg).map(Some);
    }
    let saved = layout.teacher_checkpoint();
    if saved.exists() {
        return load_teacher(&saved, cfg).map(Some);
    }
    if cfg.teacher_pretrain_steps == 0 {
        return Err(Error::Config(format!(
            "mode {} needs a teacher: set teacher_ckpt or teacher_pretrain_steps",
            cfg.mode
        )));
    }
    log::info!("pretraining teacher for {} steps", cfg.teacher_pretrain_steps);
    let teacher = pretrain_teacher(cfg, data, cfg.teacher_pretrain_steps)?;
    Checkpoint::from_model(&teacher, "teacher").save(&saved)?;
    Ok(Some(teacher))
}

/// Keeps the JSON lines of `path` accepted by `keep`, dropping the rest.
fn truncate_jsonl<R: for<'de> Deserialize<'de>>(path: &Path, keep: impl Fn(&R) -> bool) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let kept: Vec<String> = BufReader::new(File::open(path)?)
        .lines()
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|l| serde_json::from_str::<R>(l).map(|r| keep(&r)).unwrap_or(false))
        .collect();
    let mut f = BufWriter::new(File::create(path)?);
    for l in kept {
        writeln!(f, "{l}")?;
    }
    f.flush()?;
    Ok(())
}

fn append_writer(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(fs::OpenOptions::new().create(true).append(true).open(path)?))
}

fn write_json_line<W: Write>(w: &mut W, v: &impl Serialize) -> Result<()> {
    let line = serde_json::to_string(v).map_err(|e| Error::Checkpoint(e.to_string()))?;
    writeln!(w, "{line}")?;
    Ok(())
}

/// Runs `cfg.epochs * cfg.steps_per_epoch` steps, writing metrics and
/// checkpoints under `out_dir`.
pub fn fit<T: Scalar>(
    cfg: &TrainConfig,
    data: &ImageSet<T>,
    out_dir: &Path,
    opts: &FitOptions<'_, T>,
) -> Result<FitOutcome<T>> {
    cfg.validate()?;
    check_min_size(data, cfg.patch * cfg.scale())?;
    let layout = RunLayout::new(out_dir);
    layout.create()?;
    let teacher = resolve_teacher(cfg, data, &layout)?;

    let mut state = match &opts.resume_from {
        Some(p) => TrainState::load(p, cfg)?,
        None => TrainState::init(cfg)?,
    };
    let resumed_at = state.step;
    truncate_jsonl::<StepRecord>(&layout.train_metrics(), |r| r.step < resumed_at)?;
    truncate_jsonl::<EpochEval>(&layout.eval_metrics(), |r| r.step <= resumed_at)?;
    let mut train_log = append_writer(&layout.train_metrics())?;
    let mut eval_log = append_writer(&layout.eval_metrics())?;

    let total = cfg.total_steps();
    let stop = opts.stop_at.map_or(total, |s| s.min(total));
    let eval_opts = EvalOptions {
        dataset_id: "heldout".into(),
        ..EvalOptions::default()
    };
    let mut evals = Vec::new();
    let mut last = None;
    while state.step < stop {
        let step = state.step;
        let epoch = state.epoch(cfg);
        let batch = sample_batch_at(data, cfg.patch, cfg.scale(), cfg.batch, cfg.seed, step)?;
        let b = train_step(&mut state, &batch, teacher.as_ref(), cfg)?;
        write_json_line(&mut train_log, &StepRecord::new(step, epoch, cfg.learning_rate(epoch), &b))?;
        last = Some(b);

        if cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0 {
            state.save(&layout.step_checkpoint(state.step), cfg)?;
        }
        if state.step % cfg.steps_per_epoch == 0 {
            log::info!(
                "epoch {epoch} done at step {}: total {:.5} alpha {:.2}",
                state.step,
                b.total,
                b.alpha_mean
            );
            if let Some(set) = opts.eval_set {
                let rep = evaluate(&state.student, set, cfg.scale(), &eval_opts)?;
                let rec = EpochEval {
                    epoch,
                    step: state.step,
                    mean_psnr: rep.mean_psnr,
                };
                write_json_line(&mut eval_log, &rec)?;
                evals.push(rec);
            }
        }
    }
    train_log.flush()?;
    eval_log.flush()?;

    let finished = state.step >= total;
    let checkpoint = if finished {
        layout.final_checkpoint()
    } else {
        layout.step_checkpoint(state.step)
    };
    state.save(&checkpoint, cfg)?;

    let final_report = match (finished, opts.eval_set) {
        (true, Some(set)) => {
            let rep = evaluate(&state.student, set, cfg.scale(), &eval_opts)?;
            fs::write(layout.reports().join("final_eval.jsonl"), rep.to_records())?;
            fs::write(layout.reports().join("final_eval.txt"), rep.to_table())?;
            Some(rep)
        }
        _ => None,
    };
    Ok(FitOutcome {
        state,
        checkpoint,
        finished,
        last,
        evals,
        final_report,
    })
}
