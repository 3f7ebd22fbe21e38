//! Luma PSNR, benchmark reports and the teacher-worse-patch statistic.

use crate::datapipe::{bicubic_upscale, sample_batch_at, synth_lr, write_png, ImageSet};
use crate::error::{shape_err, Error, Result};
use crate::losses::adaptive_indicator;
use crate::models::Model;
use crate::scalar::Scalar;
use crate::tensor::Tensor4;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::PathBuf;

/// Reported PSNR for exact matches.
pub const PSNR_CAP: f64 = 100.0;

/// BT.601 studio-swing luma of a `[1, 3, H, W]` image in `[0, 1]`.
pub fn luma<T: Scalar>(img: &Tensor4<T>) -> Result<Vec<f64>> {
    let [n, c, h, w] = img.shape();
    if n != 1 || c != 3 {
        return shape_err(format!("luma needs a [1, 3, H, W] image, got {:?}", img.shape()));
    }
    let plane = |ch: usize| img.plane(0, ch);
    let (r, g, b) = (plane(0), plane(1), plane(2));
    Ok((0..h * w)
        .map(|i| {
            let (r, g, b) = (r[i].to_f64().unwrap(), g[i].to_f64().unwrap(), b[i].to_f64().unwrap());
            (65.738 * r + 129.057 * g + 25.064 * b) / 256.0 + 16.0 / 256.0
        })
        .collect())
}

/// PSNR in dB between the lumas of `sr` and `gt` after removing `shave`
/// pixels from each border, capped at [`PSNR_CAP`].
pub fn y_psnr<T: Scalar>(sr: &Tensor4<T>, gt: &Tensor4<T>, shave: usize) -> Result<f64> {
    if sr.shape() != gt.shape() {
        return shape_err(format!("y_psnr: {:?} vs {:?}", sr.shape(), gt.shape()));
    }
    let [_, _, h, w] = sr.shape();
    if h <= 2 * shave || w <= 2 * shave {
        return shape_err(format!("{h}x{w} image leaves nothing after shaving {shave}"));
    }
    let (ys, yg) = (luma(sr)?, luma(gt)?);
    let mut se = 0.0;
    for y in shave..h - shave {
        for x in shave..w - shave {
            let d = ys[y * w + x] - yg[y * w + x];
            se += d * d;
        }
    }
    let mse = se / ((h - 2 * shave) * (w - 2 * shave)) as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Something that maps an LR input to an SR output.
///
/// The HR target is passed alongside so that oracle stubs can be expressed;
/// real models ignore it.
pub trait Restorer<T: Scalar> {
    fn restore(&self, lr: &Tensor4<T>, hr: &Tensor4<T>) -> Result<Tensor4<T>>;
}

impl<T: Scalar> Restorer<T> for Model<T> {
    fn restore(&self, lr: &Tensor4<T>, _hr: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.forward(lr)
    }
}

/// Returns the ground truth itself.
pub struct GroundTruthOracle;

impl<T: Scalar> Restorer<T> for GroundTruthOracle {
    fn restore(&self, _lr: &Tensor4<T>, hr: &Tensor4<T>) -> Result<Tensor4<T>> {
        Ok(hr.clone())
    }
}

/// Plain bicubic upsampling.
pub struct Bicubic {
    pub scale: usize,
}

impl<T: Scalar> Restorer<T> for Bicubic {
    fn restore(&self, lr: &Tensor4<T>, _hr: &Tensor4<T>) -> Result<Tensor4<T>> {
        Ok(bicubic_upscale(lr, self.scale))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub id: String,
    pub psnr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset_id: String,
    pub scale: usize,
    pub shave: usize,
    pub per_image: Vec<ImageScore>,
    pub mean_psnr: f64,
    pub n_images: usize,
}

impl EvalReport {
    /// One JSON object per image: `{"id": ..., "psnr": ...}`.
    pub fn to_records(&self) -> String {
        self.per_image
            .iter()
            .map(|s| serde_json::to_string(s).expect("plain record") + "\n")
            .collect()
    }

    pub fn to_table(&self) -> String {
        let width = self.per_image.iter().map(|s| s.id.len()).max().unwrap_or(5).max(5);
        let mut out = String::new();
        let _ = writeln!(out, "dataset {} (x{}, shave {})", self.dataset_id, self.scale, self.shave);
        let _ = writeln!(out, "{:<width$}  {:>9}", "image", "Y-PSNR");
        for s in &self.per_image {
            let _ = writeln!(out, "{:<width$}  {:>9.4}", s.id, s.psnr);
        }
        let _ = writeln!(out, "{:<width$}  {:>9.4}  ({} images)", "mean", self.mean_psnr, self.n_images);
        out
    }
}

#[derive(Clone, Debug, Default)]
pub struct EvalOptions {
    pub dataset_id: String,
    /// Border shave; defaults to the scale.
    pub shave: Option<usize>,
    /// Writes each SR output as `<dir>/<id>` when set.
    pub dump_dir: Option<PathBuf>,
}

/// Largest top-left crop whose sides are multiples of `scale`.
pub fn crop_to_multiple<T: Scalar>(img: &Tensor4<T>, scale: usize) -> Result<Tensor4<T>> {
    let [_, _, h, w] = img.shape();
    let (hc, wc) = (h - h % scale, w - w % scale);
    if hc == 0 || wc == 0 {
        return shape_err(format!("{h}x{w} image is smaller than scale {scale}"));
    }
    img.crop(0, 0, hc, wc)
}

/// Full-image evaluation of `model` on every image in `set`, in id order.
pub fn evaluate<T: Scalar, R: Restorer<T> + ?Sized>(
    model: &R,
    set: &ImageSet<T>,
    scale: usize,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if set.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty image set".into()));
    }
    let shave = opts.shave.unwrap_or(scale);
    let mut items: Vec<_> = set.items.iter().collect();
    items.sort_by(|a, b| a.id.cmp(&b.id));
    let mut per_image = Vec::with_capacity(items.len());
    for it in items {
        let hr = crop_to_multiple(&it.hr, scale)?;
        let lr = synth_lr(&hr, scale)?;
        let sr = model.restore(&lr, &hr)?;
        if sr.shape() != hr.shape() {
            return shape_err(format!(
                "{}: restored {:?} but the target is {:?}",
                it.id,
                sr.shape(),
                hr.shape()
            ));
        }
        let psnr = y_psnr(&sr, &hr, shave)?;
        if let Some(dir) = &opts.dump_dir {
            let clamped = sr.map(|v| v.max(T::zero()).min(T::one()));
            write_png(&clamped, &dir.join(&it.id))?;
        }
        per_image.push(ImageScore {
            id: it.id.clone(),
            psnr,
        });
    }
    let n = per_image.len();
    let mean_psnr = per_image.iter().map(|s| s.psnr).sum::<f64>() / n as f64;
    Ok(EvalReport {
        dataset_id: opts.dataset_id.clone(),
        scale,
        shave,
        per_image,
        mean_psnr,
        n_images: n,
    })
}

/// Per-patch comparison counts between two restorers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorseCounts {
    /// Student strictly closer to the ground truth than the teacher.
    pub student_closer: usize,
    /// Teacher strictly closer.
    pub teacher_closer: usize,
    pub ties: usize,
}

impl WorseCounts {
    pub fn total(&self) -> usize {
        self.student_closer + self.teacher_closer + self.ties
    }

    /// Fraction of patches on which the teacher is the worse of the two.
    pub fn rate(&self) -> f64 {
        self.student_closer as f64 / self.total() as f64
    }
}

const WORSE_RATE_CHUNK: usize = 16;

/// Samples `n_samples` training-style patches and counts the outcomes of
/// the per-patch L1 comparison used by the adaptive gate.
pub fn worse_counts<T: Scalar>(
    teacher: &dyn Restorer<T>,
    student: &dyn Restorer<T>,
    set: &ImageSet<T>,
    patch: usize,
    scale: usize,
    n_samples: usize,
    seed: u64,
) -> Result<WorseCounts> {
    if n_samples < 1 {
        return Err(Error::Config("n_samples must be >= 1".into()));
    }
    let mut counts = WorseCounts::default();
    let mut chunk = 0u64;
    while counts.total() < n_samples {
        let want = WORSE_RATE_CHUNK.min(n_samples - counts.total());
        let b = sample_batch_at(set, patch, scale, want, seed, chunk)?;
        chunk += 1;
        let st = student.restore(&b.lr, &b.hr)?;
        let te = teacher.restore(&b.lr, &b.hr)?;
        let fwd = adaptive_indicator(&st, &te, &b.hr)?;
        let rev = adaptive_indicator(&te, &st, &b.hr)?;
        for i in 0..want {
            match (fwd.get(i), rev.get(i)) {
                (false, _) => counts.student_closer += 1,
                (true, false) => counts.teacher_closer += 1,
                (true, true) => counts.ties += 1,
            }
        }
    }
    Ok(counts)
}

/// Fraction of sampled patches on which the student output is strictly
/// closer to the ground truth than the teacher output.
pub fn teacher_worse_rate<T: Scalar>(
    teacher: &dyn Restorer<T>,
    student: &dyn Restorer<T>,
    set: &ImageSet<T>,
    patch: usize,
    scale: usize,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    Ok(worse_counts(teacher, student, set, patch, scale, n_samples, seed)?.rate())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::synthetic_image_set;

    fn solid(rgb: [f64; 3], h: usize, w: usize) -> Tensor4<f64> {
        Tensor4::from_fn([1, 3, h, w], |[_, c, _, _]| rgb[c])
    }

    #[test]
    fn identical_images_hit_the_cap() {
        let a = solid([0.2, 0.4, 0.6], 8, 8);
        assert_eq!(y_psnr(&a, &a, 2).unwrap(), PSNR_CAP);
    }

    #[test]
    fn red_versus_green_by_hand() {
        let r = solid([1.0, 0.0, 0.0], 6, 6);
        let g = solid([0.0, 1.0, 0.0], 6, 6);
        let d: f64 = (65.738 - 129.057) / 256.0;
        let expected = 10.0 * (1.0 / (d * d)).log10();
        assert!((y_psnr(&r, &g, 1).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn psnr_is_symmetric_and_shape_checked() {
        let a = solid([0.1, 0.5, 0.9], 8, 8);
        let b = Tensor4::from_fn([1, 3, 8, 8], |[_, c, y, x]| 0.1 * c as f64 + 0.01 * (x * y) as f64);
        assert_eq!(y_psnr(&a, &b, 2).unwrap(), y_psnr(&b, &a, 2).unwrap());
        assert!(y_psnr(&a, &solid([0.0; 3], 8, 9), 2).is_err());
        assert!(y_psnr(&a, &a, 4).is_err());
    }

    #[test]
    fn oracle_evaluation_is_capped_and_tabulated() {
        let set = synthetic_image_set::<f32>(3, 33, 1);
        let rep = evaluate(&GroundTruthOracle, &set, 2, &EvalOptions::default()).unwrap();
        assert_eq!(rep.n_images, 3);
        assert!(rep.per_image.iter().all(|s| s.psnr == PSNR_CAP));
        assert_eq!(rep.to_records().lines().count(), 3);
        assert!(rep.to_table().contains("toy_002.png"));
    }

    #[test]
    fn tie_and_oracle_rates() {
        let set = synthetic_image_set::<f32>(4, 40, 2);
        let bic = Bicubic { scale: 2 };
        let tie = worse_counts(&bic, &bic, &set, 8, 2, 20, 0).unwrap();
        assert_eq!(tie.ties, 20);
        assert_eq!(tie.rate(), 0.0);
        assert_eq!(teacher_worse_rate(&bic, &GroundTruthOracle, &set, 8, 2, 20, 0).unwrap(), 1.0);
        assert_eq!(teacher_worse_rate(&GroundTruthOracle, &bic, &set, 8, 2, 20, 0).unwrap(), 0.0);
    }
}
