use super::config::{Mode, Toggle, TrainConfig};
use super::fit::{fit, resolve_teacher, FitOptions, RunLayout};
use crate::datapipe::ImageSet;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalOptions};
use crate::losses::Similarity;
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

pub const FAA: [f64; 3] = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];
pub const FAB: [f64; 3] = [0.2, 0.3, 0.5];
pub const FAT: [f64; 3] = [0.5, 0.3, 0.2];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// The six on/off combinations of image and feature terms.
    Components,
    /// Tap weighting: averaged, bottom-heavy, top-heavy.
    Attention,
    /// Contrastive distillation on output images vs on features.
    Domain,
    /// Dot-product softmax vs L1 ratio similarity.
    Similarity,
    /// Feature contrastive distillation without vs with the adaptive gate.
    Adaptive,
}

impl Axis {
    pub const ALL: [Axis; 5] = [Axis::Components, Axis::Attention, Axis::Domain, Axis::Similarity, Axis::Adaptive];

    pub fn name(self) -> &'static str {
        match self {
            Axis::Components => "components",
            Axis::Attention => "attention",
            Axis::Domain => "domain",
            Axis::Similarity => "similarity",
            Axis::Adaptive => "adaptive",
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Axis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation axis {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub label: String,
    pub config: TrainConfig,
}

fn row(label: &str, base: &TrainConfig, f: impl FnOnce(&mut TrainConfig)) -> AblationRow {
    let mut config = base.clone();
    config.gt_term = Toggle::Auto;
    config.teacher_term = Toggle::Auto;
    f(&mut config);
    AblationRow {
        label: label.to_string(),
        config,
    }
}

/// The rows of one ablation axis, everything else taken from `base`.
pub fn ablation_matrix(base: &TrainConfig, axis: Axis) -> Vec<AblationRow> {
    match axis {
        Axis::Components => vec![
            row("L1_GT", base, |c| c.mode = Mode::Baseline),
            row("L1_GT+L1_T", base, |c| c.mode = Mode::ImageKd),
            row("L1_GT+FCD", base, |c| {
                c.mode = Mode::Fcd;
                c.teacher_term = Toggle::Off;
            }),
            row("L1_T+FCD", base, |c| {
                c.mode = Mode::Fcd;
                c.gt_term = Toggle::Off;
            }),
            row("L1_GT+L1_T+FCD", base, |c| c.mode = Mode::Fcd),
            row("L1_GT+L1_T+FACD", base, |c| c.mode = Mode::Facd),
        ],
        Axis::Attention => [("FAA", FAA), ("FAB", FAB), ("FAT", FAT)]
            .into_iter()
            .map(|(label, w)| {
                row(label, base, |c| {
                    c.mode = Mode::Facd;
                    c.loss.weights = w;
                })
            })
            .collect(),
        Axis::Domain => vec![
            row("ICD", base, |c| c.mode = Mode::Icd),
            row("FCD", base, |c| c.mode = Mode::Fcd),
        ],
        Axis::Similarity => vec![
            row("InfoNCE", base, |c| c.mode = Mode::InfonceFcd),
            row("Euclidean", base, |c| c.mode = Mode::Fcd),
        ],
        Axis::Adaptive => vec![
            row("FCD", base, |c| c.mode = Mode::Fcd),
            row("FACD", base, |c| c.mode = Mode::Facd),
        ],
    }
}

/// The config with every ablatable field reset, for comparing rows.
fn without_axes(c: &TrainConfig) -> TrainConfig {
    let mut c = c.clone();
    c.mode = Mode::Baseline;
    c.gt_term = Toggle::Auto;
    c.teacher_term = Toggle::Auto;
    c.loss.weights = FAT;
    c.loss.similarity = Similarity::Euclidean;
    c.loss.adaptive = false;
    c.teacher_ckpt = None;
    c.seed = 0;
    c
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub label: String,
    pub seed: u64,
    pub mean_psnr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowSummary {
    pub label: String,
    pub psnr: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub sd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub title: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<RowSummary>,
}

impl AblationTable {
    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(6).max(6);
        let mut out = String::new();
        let _ = writeln!(out, "{} (seeds {:?})", self.title, self.seeds);
        let _ = write!(out, "{:<width$}  {:>18}", "config", "Y-PSNR mean ± sd");
        for s in &self.seeds {
            let _ = write!(out, "  {:>9}", format!("seed {s}"));
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{:<width$}  {:>9.4} ± {:<6.4}", r.label, r.mean, r.sd);
            for p in &r.psnr {
                let _ = write!(out, "  {p:>9.4}");
            }
            out.push('\n');
        }
        out
    }
}

fn summarize(label: &str, psnr: Vec<f64>) -> RowSummary {
    let n = psnr.len() as f64;
    let mean = psnr.iter().sum::<f64>() / n;
    let sd = if psnr.len() > 1 {
        (psnr.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    RowSummary {
        label: label.to_string(),
        psnr,
        mean,
        sd,
    }
}

fn load_done(path: &Path) -> Result<BTreeMap<(String, u64), f64>> {
    let mut done = BTreeMap::new();
    if path.exists() {
        for line in BufReader::new(fs::File::open(path)?).lines() {
            if let Ok(r) = serde_json::from_str::<SeedResult>(&line?) {
                done.insert((r.label, r.seed), r.mean_psnr);
            }
        }
    }
    Ok(done)
}

fn run_dir_name(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

/// Trains every row under every seed and tabulates held-out Y-PSNR.
///
/// Finished `(row, seed)` results are appended to `results.jsonl` in
/// `out_dir` as they complete and are reused on a rerun.
pub fn run_ablation<T: Scalar>(
    title: &str,
    rows: &[AblationRow],
    seeds: &[u64],
    data: &ImageSet<T>,
    eval_set: &ImageSet<T>,
    out_dir: &Path,
) -> Result<AblationTable> {
    if rows.is_empty() || seeds.is_empty() {
        return Err(Error::Config("an ablation needs at least one row and one seed".into()));
    }
    if seeds.len() < 3 {
        log::warn!("ablation with {} seed(s); three or more are recommended", seeds.len());
    }
    let reference = without_axes(&rows[0].config);
    for r in rows {
        r.config.validate()?;
        if without_axes(&r.config) != reference {
            return Err(Error::Config(format!(
                "row {} differs from row {} outside the ablation axes",
                r.label, rows[0].label
            )));
        }
    }

    let layout = RunLayout::new(out_dir);
    layout.create()?;
    // one teacher shared by every row and seed
    let mut shared_teacher = rows[0].config.teacher_ckpt.clone();
    if shared_teacher.is_none() {
        if let Some(needs) = rows.iter().find(|r| r.config.components().needs_teacher()) {
            resolve_teacher(&needs.config, data, &layout)?;
            shared_teacher = Some(layout.teacher_checkpoint());
        }
    }

    let results_path = out_dir.join("results.jsonl");
    let done = load_done(&results_path)?;
    let mut summaries = Vec::new();
    for r in rows {
        let mut psnr = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            if let Some(&p) = done.get(&(r.label.clone(), seed)) {
                log::info!("{} seed {seed}: reusing {p:.4} dB", r.label);
                psnr.push(p);
                continue;
            }
            let mut cfg = r.config.clone();
            cfg.seed = seed;
            if cfg.teacher_ckpt.is_none() {
                cfg.teacher_ckpt = shared_teacher.clone();
            }
            let run_dir = out_dir.join("runs").join(run_dir_name(&r.label)).join(format!("seed_{seed}"));
            let outcome = fit(&cfg, data, &run_dir, &FitOptions::default())?;
            let rep = evaluate(&outcome.state.student, eval_set, cfg.scale(), &EvalOptions::default())?;
            log::info!("{} seed {seed}: {:.4} dB", r.label, rep.mean_psnr);
            let rec = SeedResult {
                label: r.label.clone(),
                seed,
                mean_psnr: rep.mean_psnr,
            };
            let mut f = fs::OpenOptions::new().create(true).append(true).open(&results_path)?;
            writeln!(f, "{}", serde_json::to_string(&rec).expect("plain record"))?;
            psnr.push(rep.mean_psnr);
        }
        summaries.push(summarize(&r.label, psnr));
    }
    let table = AblationTable {
        title: title.to_string(),
        seeds: seeds.to_vec(),
        rows: summaries,
    };
    let stem = run_dir_name(title);
    fs::write(layout.reports().join(format!("{stem}.txt")), table.to_table())?;
    fs::write(
        layout.reports().join(format!("{stem}.json")),
        serde_json::to_string_pretty(&table).expect("plain record"),
    )?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attention_rows_carry_the_listed_weights() {
        let rows = ablation_matrix(&TrainConfig::default(), Axis::Attention);
        let labels: Vec<_> = rows.iter().map(|r| r.label.as_str()).collect();
        assert_eq!(labels, ["FAA", "FAB", "FAT"]);
        assert_eq!(rows[1].config.loss.weights, [0.2, 0.3, 0.5]);
        assert_eq!(rows[2].config.loss.weights, [0.5, 0.3, 0.2]);
        assert!(rows.iter().all(|r| r.config.validate().is_ok()));
    }

    #[test]
    fn component_rows_match_the_checkmark_matrix() {
        let rows = ablation_matrix(&TrainConfig::default(), Axis::Components);
        let flags: Vec<(bool, bool, bool, bool)> = rows
            .iter()
            .map(|r| {
                let c = r.config.components();
                (c.gt, c.teacher, c.feature != super::super::FeatureTerm::None, c.adaptive)
            })
            .collect();
        assert_eq!(
            flags,
            [
                (true, false, false, false),
                (true, true, false, false),
                (true, false, true, false),
                (false, true, true, false),
                (true, true, true, false),
                (true, true, true, true),
            ]
        );
    }

    #[test]
    fn rows_must_differ_only_on_axes() {
        let base = TrainConfig::default();
        let rows = ablation_matrix(&base, Axis::Adaptive);
        assert_eq!(without_axes(&rows[0].config), without_axes(&rows[1].config));
        let mut other = rows[1].clone();
        other.config.batch = 4;
        assert_ne!(without_axes(&rows[0].config), without_axes(&other.config));
    }

    #[test]
    fn summary_statistics() {
        let s = summarize("x", vec![30.0, 31.0, 32.0]);
        assert_eq!(s.mean, 31.0);
        assert!((s.sd - 1.0).abs() < 1e-12);
        assert_eq!(summarize("y", vec![29.5]).sd, 0.0);
        assert_eq!(run_dir_name("L1_GT+FCD"), "l1_gt_fcd");
    }
}
