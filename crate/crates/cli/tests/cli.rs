use facd_core::datapipe::synthetic_image_set;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_facd");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        synthetic_image_set::<f32>(4, 32, 1).write_pngs(&root.join("train")).unwrap();
        synthetic_image_set::<f32>(2, 32, 2).write_pngs(&root.join("val")).unwrap();
        Self { _dir: dir, root }
    }

    /// Writes a tiny config with `extra` appended and returns its path.
    fn config(&self, name: &str, extra: &str) -> PathBuf {
        let text = format!(
            r#"
train_dir = "train"
eval_dir = "val"
out_dir = "out_{name}"
teacher_channels = 8
teacher_blocks = 3
student_channels = 4
student_blocks = 3
batch = 2
patch = 16
steps_per_epoch = 3
teacher_pretrain_steps = 4
{extra}
"#
        );
        let path = self.root.join(format!("{name}.toml"));
        fs::write(&path, text).unwrap();
        path
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn count_params_prints_exact_counts() {
    let ws = Workspace::new();
    let cfg = ws.root.join("count.toml");
    fs::write(&cfg, "scale = 4\nteacher_channels = 64\nteacher_blocks = 16\n").unwrap();
    let out = run(&["count-params", "--config", s(&cfg)]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("teacher: edsr 64ch 16 blocks x4 -> 1517571 params"), "{text}");
}

#[test]
fn misspelled_key_exits_with_config_code() {
    let ws = Workspace::new();
    let cfg = ws.config("typo", "lamda_facd = 2.0");
    let out = run(&["train", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lamda_facd"));
}

#[test]
fn unknown_axis_exits_with_config_code() {
    let ws = Workspace::new();
    let cfg = ws.config("axis", "");
    assert_eq!(run(&["ablate", "--config", s(&cfg), "--axis", "colour"]).status.code(), Some(2));
}

#[test]
fn missing_train_dir_exits_with_data_code() {
    let ws = Workspace::new();
    let cfg = ws.config("nodata", "");
    fs::remove_dir_all(ws.root.join("train")).unwrap();
    assert_eq!(run(&["train", "--config", s(&cfg)]).status.code(), Some(3));
}

#[test]
fn diverging_loss_exits_with_non_finite_code() {
    let ws = Workspace::new();
    let cfg = ws.config("diverge", "mode = \"baseline\"\nlr0 = 1e37");
    assert_eq!(run(&["train", "--config", s(&cfg)]).status.code(), Some(4));
}

#[test]
fn train_eval_stats_round_trip() {
    let ws = Workspace::new();
    let cfg = ws.config("full", "dump_images = true\nn_samples = 20");
    let out = run(&["train", "--config", s(&cfg)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let root = ws.root.join("out_full");
    let ckpt = root.join("checkpoints/final.safetensors");
    let teacher = root.join("checkpoints/teacher.safetensors");
    assert!(ckpt.is_file() && teacher.is_file());
    let metrics = fs::read_to_string(root.join("metrics/train.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 3);

    let out = run(&["eval", "--config", s(&cfg), "--checkpoint", s(&ckpt)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("toy_000.png"));
    let records = fs::read_to_string(root.join("reports/eval_val.jsonl")).unwrap();
    assert_eq!(records.lines().count(), 2);
    assert!(root.join("images/val/toy_001.png").is_file());

    let table = stdout(&out);
    let table_mean: f64 = table
        .lines()
        .find(|l| l.starts_with("mean"))
        .and_then(|l| l.split_whitespace().nth(1))
        .unwrap()
        .parse()
        .unwrap();
    let psnrs: Vec<f64> = records
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["psnr"].as_f64().unwrap())
        .collect();
    let record_mean = psnrs.iter().sum::<f64>() / psnrs.len() as f64;
    assert!((table_mean - record_mean).abs() < 1e-4, "{table_mean} vs {record_mean}");

    let out = run(&["stats", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--teacher", s(&ckpt)]);
    assert!(out.status.success());
    assert!(stdout(&out).starts_with("teacher_worse_rate 0.0000 "), "{}", stdout(&out));

    let out = run(&[
        "stats",
        "--config",
        s(&cfg),
        "--checkpoint",
        s(&ckpt),
        "--teacher",
        s(&teacher),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let rate: f64 = text.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&rate), "{text}");
    assert!(text.contains("n_samples 20"));

    // the same checkpoint under an RCAN config is a mismatch
    let rcan = ws.config("rcan", "arch = \"rcan\"");
    assert_eq!(run(&["eval", "--config", s(&rcan), "--checkpoint", s(&ckpt)]).status.code(), Some(5));
}

#[test]
fn stats_without_teacher_is_a_config_error() {
    let ws = Workspace::new();
    let cfg = ws.config("noteacher", "");
    let fake = ws.root.join("student.safetensors");
    assert_eq!(run(&["stats", "--config", s(&cfg), "--checkpoint", s(&fake)]).status.code(), Some(2));
}

#[test]
fn empty_eval_dir_exits_with_data_code() {
    let ws = Workspace::new();
    let cfg = ws.config("empty", "");
    fs::remove_dir_all(ws.root.join("val")).unwrap();
    fs::create_dir(ws.root.join("val")).unwrap();
    let ckpt = ws.root.join("none.safetensors");
    assert_eq!(run(&["eval", "--config", s(&cfg), "--checkpoint", s(&ckpt)]).status.code(), Some(3));
}

#[test]
fn zero_samples_is_a_config_error() {
    let ws = Workspace::new();
    let cfg = ws.config("zero", "n_samples = 0");
    let ckpt = ws.root.join("none.safetensors");
    assert_eq!(run(&["stats", "--config", s(&cfg), "--checkpoint", s(&ckpt)]).status.code(), Some(2));
}
