//! Image loading, LR synthesis and augmented patch sampling.

mod augment;
mod bicubic;
mod synthetic;

pub use augment::Augment;
pub use bicubic::{bicubic_upscale, cubic, reflect, resize, synth_lr, CUBIC_A};
pub use synthetic::{synthetic_image, synthetic_image_set};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, PartialEq)]
pub struct ImageItem<T> {
    pub id: String,
    /// `[1, 3, H, W]`, values in `[0, 1]`
    pub hr: Tensor4<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageSet<T> {
    pub items: Vec<ImageItem<T>>,
    pub source_dir: Option<PathBuf>,
}

impl<T: Scalar> ImageSet<T> {
    pub fn from_items(items: Vec<ImageItem<T>>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for it in &items {
            if !seen.insert(it.id.as_str()) {
                return Err(Error::Config(format!("duplicate image id {}", it.id)));
            }
            if it.hr.batch() != 1 || it.hr.channels() != 3 {
                return Err(Error::Shape(format!(
                    "image {} must be [1, 3, H, W], got {:?}",
                    it.id,
                    it.hr.shape()
                )));
            }
        }
        Ok(Self {
            items,
            source_dir: None,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Writes every image as an 8-bit PNG named by its id.
    pub fn write_pngs(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for it in &self.items {
            write_png(&it.hr, &dir.join(&it.id))?;
        }
        Ok(())
    }
}

/// Loads every decodable PNG in `dir`, sorted by file name.
///
/// Unreadable files are skipped with a warning; it is an error only when
/// nothing decodes.
pub fn load_image_set<T: Scalar>(dir: &Path) -> Result<ImageSet<T>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        })
        .collect();
    paths.sort();
    let mut items = Vec::with_capacity(paths.len());
    for path in paths {
        match read_png(&path) {
            Ok(hr) => items.push(ImageItem {
                id: path.file_name().unwrap().to_string_lossy().into_owned(),
                hr,
            }),
            Err(e) => log::warn!("skipping {}: {e}", path.display()),
        }
    }
    if items.is_empty() {
        return Err(Error::EmptyDirectory(dir.to_path_buf()));
    }
    Ok(ImageSet {
        items,
        source_dir: Some(dir.to_path_buf()),
    })
}

pub fn read_png<T: Scalar>(path: &Path) -> Result<Tensor4<T>> {
    let decode = |reason: String| Error::Decode {
        path: path.to_path_buf(),
        reason,
    };
    let img = image::ImageReader::open(path)
        .map_err(|e| decode(e.to_string()))?
        .with_guessed_format()
        .map_err(|e| decode(e.to_string()))?
        .decode()
        .map_err(|e| decode(e.to_string()))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.into_raw();
    let inv = T::one() / T::lit(255.0);
    Ok(Tensor4::from_fn([1, 3, h, w], |[_, c, y, x]| {
        T::from_u8(raw[(y * w + x) * 3 + c]).unwrap() * inv
    }))
}

/// Saves sample 0 of `img` as an 8-bit RGB PNG (values clamped and rounded).
pub fn write_png<T: Scalar>(img: &Tensor4<T>, path: &Path) -> Result<()> {
    let [_, c, h, w] = img.shape();
    if c != 3 {
        return Err(Error::Shape(format!("PNG export needs 3 channels, got {c}")));
    }
    let mut raw = vec![0u8; h * w * 3];
    for ch in 0..3 {
        for (i, &v) in img.plane(0, ch).iter().enumerate() {
            let v = v.to_f64().unwrap().clamp(0.0, 1.0);
            raw[i * 3 + ch] = (v * 255.0).round() as u8;
        }
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    image::RgbImage::from_raw(w as u32, h as u32, raw)
        .expect("buffer sized for image")
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
}

/// Paired training patches.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchBatch<T> {
    /// `[N, 3, p, p]`
    pub lr: Tensor4<T>,
    /// `[N, 3, p*s, p*s]`
    pub hr: Tensor4<T>,
    pub sample_ids: Vec<String>,
    pub aug_record: Vec<Augment>,
}

impl<T: Scalar> PatchBatch<T> {
    pub fn len(&self) -> usize {
        self.lr.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.lr.batch() == 0
    }
}

/// Per-step random stream: the seed selects the generator and the step
/// selects an independent stream, so batches do not depend on call order.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

pub fn check_min_size<T: Scalar>(set: &ImageSet<T>, required: usize) -> Result<()> {
    for it in &set.items {
        if it.hr.height() < required || it.hr.width() < required {
            return Err(Error::ImageTooSmall {
                id: it.id.clone(),
                height: it.hr.height(),
                width: it.hr.width(),
                required,
            });
        }
    }
    Ok(())
}

/// One HR crop, its synthesized LR and the augmentation, before stacking.
fn draw_pair<T: Scalar>(
    set: &ImageSet<T>,
    patch: usize,
    scale: usize,
    rng: &mut impl Rng,
) -> Result<(String, Tensor4<T>, Tensor4<T>, Augment)> {
    let item = &set.items[rng.gen_range(0..set.len())];
    let hp = patch * scale;
    let [_, _, h, w] = item.hr.shape();
    let y0 = scale * rng.gen_range(0..=(h - hp) / scale);
    let x0 = scale * rng.gen_range(0..=(w - hp) / scale);
    let aug = Augment::from_index(rng.gen_range(0..8u8));
    let hr = item.hr.crop(y0, x0, hp, hp)?;
    let lr = synth_lr(&hr, scale)?;
    Ok((item.id.clone(), lr, hr, aug))
}

/// Samples `batch` augmented LR/HR pairs; fully determined by `(seed, step)`.
pub fn sample_batch_at<T: Scalar>(
    set: &ImageSet<T>,
    patch: usize,
    scale: usize,
    batch: usize,
    seed: u64,
    step: u64,
) -> Result<PatchBatch<T>> {
    if patch < 8 {
        return Err(Error::Config(format!("patch must be >= 8, got {patch}")));
    }
    if batch < 1 {
        return Err(Error::Config("batch must be >= 1".into()));
    }
    if set.is_empty() {
        return Err(Error::Config("cannot sample from an empty image set".into()));
    }
    check_min_size(set, patch * scale)?;
    let mut rng = step_rng(seed, step);
    let mut lrs = Vec::with_capacity(batch);
    let mut hrs = Vec::with_capacity(batch);
    let mut ids = Vec::with_capacity(batch);
    let mut augs = Vec::with_capacity(batch);
    for _ in 0..batch {
        let (id, lr, hr, aug) = draw_pair(set, patch, scale, &mut rng)?;
        lrs.push(aug.apply(&lr));
        hrs.push(aug.apply(&hr));
        ids.push(id);
        augs.push(aug);
    }
    Ok(PatchBatch {
        lr: Tensor4::concat_batch(&lrs)?,
        hr: Tensor4::concat_batch(&hrs)?,
        sample_ids: ids,
        aug_record: augs,
    })
}

pub fn sample_batch<T: Scalar>(
    set: &ImageSet<T>,
    patch: usize,
    scale: usize,
    batch: usize,
    seed: u64,
) -> Result<PatchBatch<T>> {
    sample_batch_at(set, patch, scale, batch, seed, 0)
}
