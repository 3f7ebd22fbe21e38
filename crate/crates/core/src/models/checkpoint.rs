//! Single-file checkpoints: named arrays plus one JSON metadata record.
//!
//! The file is a standard safetensors container. Array names are canonical
//! dotted layer paths (`student.body.block07.conv1.weight`); the metadata
//! record lives under the header key `facd` so the header bytes stay stable.

use super::{Arch, Model, ModelConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use crate::error::{Error, Result};
use crate::nn::Parameterized;
use crate::scalar::Scalar;
use safetensors::tensor::{SafeTensors, TensorView};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::path::Path;

pub const CHECKPOINT_FORMAT: u32 = 1;
const META_KEY: &str = "facd";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: u32,
    pub arch: Arch,
    pub model: ModelConfig,
    /// `teacher` or `student`
    pub role: String,
    pub step: u64,
    pub epoch: u64,
    pub seed: u64,
    pub dtype: String,
    /// Free-form extras such as the training mode or optimizer step count.
    #[serde(default)]
    pub extra: BTreeMap<String, String>,
}

impl CheckpointMeta {
    pub fn new<T: Scalar>(model: ModelConfig, role: &str) -> Self {
        Self {
            format: CHECKPOINT_FORMAT,
            arch: model.arch(),
            model,
            role: role.to_string(),
            step: 0,
            epoch: 0,
            seed: 0,
            dtype: format!("{:?}", T::DTYPE),
            extra: BTreeMap::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub meta: CheckpointMeta,
    pub tensors: BTreeMap<String, (Vec<usize>, Vec<T>)>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(meta: CheckpointMeta) -> Self {
        Self {
            meta,
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: String, shape: Vec<usize>, values: Vec<T>) {
        self.tensors.insert(name, (shape, values));
    }

    /// Stores every parameter value of `module` under `prefix`.
    pub fn insert_params<P: Parameterized<T> + ?Sized>(&mut self, prefix: &str, module: &P) {
        module.visit_params(prefix, &mut |name, p| {
            self.tensors
                .insert(name.to_string(), (p.shape.clone(), p.value.clone()));
        });
    }

    /// Overwrites every parameter of `module` from the arrays under `prefix`.
    /// Missing arrays and shape mismatches are errors.
    pub fn restore_params<P: Parameterized<T> + ?Sized>(&self, prefix: &str, module: &mut P) -> Result<()> {
        let mut failure = None;
        module.visit_params_mut(prefix, &mut |name, p| {
            if failure.is_some() {
                return;
            }
            match self.tensors.get(name) {
                Some((shape, values)) if *shape == p.shape => p.value.clone_from(values),
                Some((shape, _)) => {
                    failure = Some(format!(
                        "{name}: checkpoint shape {shape:?} vs model {:?}",
                        p.shape
                    ))
                }
                None => failure = Some(format!("{name} missing from checkpoint")),
            }
        });
        match failure {
            Some(msg) => Err(Error::Mismatch(msg)),
            None => Ok(()),
        }
    }

    /// A checkpoint holding just `model`, with its arrays under `role`.
    pub fn from_model(model: &Model<T>, role: &str) -> Self {
        let mut ck = Self::new(CheckpointMeta::new::<T>(model.config(), role));
        ck.insert_params(role, model);
        ck
    }

    /// Rebuilds the model stored under the checkpoint's role prefix.
    pub fn to_model(&self) -> Result<Model<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = Model::build(&self.meta.model, &mut rng)?;
        self.restore_params(&self.meta.role, &mut model)?;
        Ok(model)
    }

    pub fn get(&self, name: &str) -> Option<&(Vec<usize>, Vec<T>)> {
        self.tensors.get(name)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes: Vec<(&String, Vec<usize>, Vec<u8>)> = self
            .tensors
            .iter()
            .map(|(k, (shape, v))| (k, shape.clone(), T::to_le_bytes_vec(v)))
            .collect();
        let views = bytes
            .iter()
            .map(|(k, shape, b)| {
                TensorView::new(T::DTYPE, shape.clone(), b)
                    .map(|v| (k.as_str(), v))
                    .map_err(|e| Error::Checkpoint(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let meta = serde_json::to_string(&self.meta)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let info = HashMap::from([(META_KEY.to_string(), meta)]);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("tmp");
        safetensors::serialize_to_file(views, Some(info), &tmp)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        let ck = |e: safetensors::SafeTensorError| Error::Checkpoint(format!("{}: {e}", path.display()));
        let (_, header) = SafeTensors::read_metadata(&buf).map_err(ck)?;
        let raw = header
            .metadata()
            .as_ref()
            .and_then(|m| m.get(META_KEY))
            .ok_or_else(|| Error::Checkpoint(format!("{}: no metadata record", path.display())))?;
        let meta: CheckpointMeta =
            serde_json::from_str(raw).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let st = SafeTensors::deserialize(&buf).map_err(ck)?;
        let mut tensors = BTreeMap::new();
        for (name, view) in st.iter() {
            if view.dtype() != T::DTYPE {
                return Err(Error::Checkpoint(format!(
                    "{name}: stored as {:?}, expected {:?}",
                    view.dtype(),
                    T::DTYPE
                )));
            }
            tensors.insert(
                name.to_string(),
                (view.shape().to_vec(), T::from_le_bytes_slice(view.data())),
            );
        }
        Ok(Self { meta, tensors })
    }
}
