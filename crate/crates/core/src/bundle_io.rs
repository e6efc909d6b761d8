//! Feature bundles: the on-disk hand-off between a feature exporter and the
//! adaptation core.
//!
//! A bundle is a directory holding
//!
//! * `features.npy`: N×D float array of backbone features,
//! * `logits.npy`: N×C float array of pre-softmax classifier outputs,
//! * `labels.npy`: optional length-N `<i8` ground-truth labels,
//! * `meta.json`: class count, feature width, domain and backbone names.
//!
//! Arrays may be stored as `<f4` or `<f8`. They are widened to f64 on load and
//! the storage type is remembered so that saving reproduces the original
//! bytes.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{PdaError, Result};
use crate::npy::{self, Dtype, NpyArray, NpyData};

pub const FEATURES_FILE: &str = "features.npy";
pub const LOGITS_FILE: &str = "logits.npy";
pub const LABELS_FILE: &str = "labels.npy";
pub const META_FILE: &str = "meta.json";

/// Element type used when a float array is written to disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FloatDtype {
    F32,
    #[default]
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub domain: String,
    pub backbone: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_names: Option<Vec<String>>,
    /// Unknown keys are carried through untouched.
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl BundleMeta {
    pub fn new(num_classes: usize, feature_dim: usize) -> Self {
        Self {
            num_classes,
            feature_dim,
            domain: "unknown".into(),
            backbone: "unknown".into(),
            class_names: None,
            extra: Default::default(),
        }
    }
}

/// The target dataset as extracted features and logits.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    features: Array2<f64>,
    logits: Array2<f64>,
    labels: Option<Vec<usize>>,
    meta: BundleMeta,
    features_dtype: FloatDtype,
    logits_dtype: FloatDtype,
}

impl FeatureBundle {
    /// Builds a bundle stored as f64, checking every invariant.
    pub fn new(
        features: Array2<f64>,
        logits: Array2<f64>,
        labels: Option<Vec<usize>>,
        meta: BundleMeta,
    ) -> Result<Self> {
        let bundle = Self {
            features,
            logits,
            labels,
            meta,
            features_dtype: FloatDtype::F64,
            logits_dtype: FloatDtype::F64,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    /// Chooses the on-disk element type. Values are rounded through that type
    /// right away, so the in-memory bundle always equals what a reload yields.
    pub fn with_storage(mut self, features: FloatDtype, logits: FloatDtype) -> Self {
        if features == FloatDtype::F32 {
            self.features.mapv_inplace(|x| f64::from(x as f32));
        }
        if logits == FloatDtype::F32 {
            self.logits.mapv_inplace(|x| f64::from(x as f32));
        }
        self.features_dtype = features;
        self.logits_dtype = logits;
        self
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn logits(&self) -> &Array2<f64> {
        &self.logits
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn meta(&self) -> &BundleMeta {
        &self.meta
    }

    pub fn storage(&self) -> (FloatDtype, FloatDtype) {
        (self.features_dtype, self.logits_dtype)
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_classes(&self) -> usize {
        self.meta.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.meta.feature_dim
    }

    /// Same bundle with the ground truth dropped.
    pub fn without_labels(mut self) -> Self {
        self.labels = None;
        self
    }

    fn validate(&self) -> Result<()> {
        let n = self.features.nrows();
        let c = self.meta.num_classes;
        if n == 0 {
            return Err(PdaError::Schema("bundle has no examples".into()));
        }
        if self.logits.nrows() != n {
            return Err(PdaError::Schema(format!(
                "features have {n} rows but logits have {}",
                self.logits.nrows()
            )));
        }
        if c < 2 {
            return Err(PdaError::Schema(format!("num_classes must be >= 2, got {c}")));
        }
        if self.logits.ncols() != c {
            return Err(PdaError::Schema(format!(
                "logits have {} columns but meta declares {c} classes",
                self.logits.ncols()
            )));
        }
        if self.meta.feature_dim == 0 || self.features.ncols() != self.meta.feature_dim {
            return Err(PdaError::Schema(format!(
                "features have {} columns but meta declares feature_dim {}",
                self.features.ncols(),
                self.meta.feature_dim
            )));
        }
        if let Some(names) = &self.meta.class_names {
            if names.len() != c {
                return Err(PdaError::Schema(format!(
                    "{} class names for {c} classes",
                    names.len()
                )));
            }
        }
        if let Some(labels) = &self.labels {
            if labels.len() != n {
                return Err(PdaError::Schema(format!(
                    "{} labels for {n} examples",
                    labels.len()
                )));
            }
            if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= c) {
                return Err(PdaError::Data(format!(
                    "label {l} at row {i} outside [0, {c})"
                )));
            }
        }
        check_finite("features", &self.features)?;
        check_finite("logits", &self.logits)?;
        Ok(())
    }
}

fn check_finite(name: &str, a: &Array2<f64>) -> Result<()> {
    match a.indexed_iter().find(|(_, v)| !v.is_finite()) {
        Some(((r, c), v)) => Err(PdaError::Data(format!(
            "{name}[{r}, {c}] is not finite ({v})"
        ))),
        None => Ok(()),
    }
}

fn read_matrix(dir: &Path, name: &str) -> Result<(Array2<f64>, FloatDtype)> {
    let array = npy::read_npy(&dir.join(name))?;
    let dtype = match array.data.dtype() {
        Dtype::F32 => FloatDtype::F32,
        Dtype::F64 => FloatDtype::F64,
        Dtype::I64 => {
            return Err(PdaError::Format(format!("{name} must hold <f4 or <f8 values")))
        }
    };
    let (rows, cols) = match array.shape[..] {
        [r, c] => (r, c),
        _ => {
            return Err(PdaError::Schema(format!(
                "{name} must be 2-D, found shape {:?}",
                array.shape
            )))
        }
    };
    let values = array.to_f64()?;
    let matrix = Array2::from_shape_vec((rows, cols), values)
        .map_err(|e| PdaError::Schema(format!("{name}: {e}")))?;
    Ok((matrix, dtype))
}

fn read_indices(path: &Path, what: &str) -> Result<Vec<usize>> {
    let array = npy::read_npy(path)?;
    if array.shape.len() != 1 {
        return Err(PdaError::Schema(format!(
            "{what} must be 1-D, found shape {:?}",
            array.shape
        )));
    }
    match array.data {
        NpyData::I64(values) => values
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                usize::try_from(v)
                    .map_err(|_| PdaError::Data(format!("negative {what} value {v} at row {i}")))
            })
            .collect(),
        _ => Err(PdaError::Format(format!("{what} must be stored as <i8"))),
    }
}

fn read_meta(path: &Path) -> Result<BundleMeta> {
    let text = fs::read_to_string(path).map_err(|e| PdaError::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| PdaError::Format(format!("{}: {e}", path.display())))?;
    serde_json::from_value(value).map_err(|e| PdaError::Schema(format!("{}: {e}", path.display())))
}

/// Reads and validates a bundle directory.
pub fn load_bundle(dir: impl AsRef<Path>) -> Result<FeatureBundle> {
    let dir = dir.as_ref();
    for required in [FEATURES_FILE, LOGITS_FILE, META_FILE] {
        let path = dir.join(required);
        if !path.is_file() {
            return Err(PdaError::NotFound(path));
        }
    }
    let meta = read_meta(&dir.join(META_FILE))?;
    let (features, features_dtype) = read_matrix(dir, FEATURES_FILE)?;
    let (logits, logits_dtype) = read_matrix(dir, LOGITS_FILE)?;
    let labels_path = dir.join(LABELS_FILE);
    let labels = if labels_path.is_file() {
        Some(read_indices(&labels_path, "labels")?)
    } else {
        None
    };

    let bundle = FeatureBundle {
        features,
        logits,
        labels,
        meta,
        features_dtype,
        logits_dtype,
    };
    bundle.validate()?;
    Ok(bundle)
}

pub(crate) fn matrix_to_npy(matrix: &Array2<f64>, dtype: FloatDtype) -> NpyArray {
    let shape = vec![matrix.nrows(), matrix.ncols()];
    let data = match dtype {
        FloatDtype::F64 => NpyData::F64(matrix.iter().copied().collect()),
        FloatDtype::F32 => NpyData::F32(matrix.iter().map(|&x| x as f32).collect()),
    };
    NpyArray { shape, data }
}

pub(crate) fn indices_to_npy(values: &[usize]) -> NpyArray {
    NpyArray {
        shape: vec![values.len()],
        data: NpyData::I64(values.iter().map(|&v| v as i64).collect()),
    }
}

/// Writes `bundle` into `dir`, creating the directory if needed. A stale
/// `labels.npy` is removed when the bundle carries no labels.
pub fn save_bundle(bundle: &FeatureBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| PdaError::io(dir, e))?;

    npy::write_npy(
        &dir.join(FEATURES_FILE),
        &matrix_to_npy(&bundle.features, bundle.features_dtype),
    )?;
    npy::write_npy(
        &dir.join(LOGITS_FILE),
        &matrix_to_npy(&bundle.logits, bundle.logits_dtype),
    )?;
    let labels_path = dir.join(LABELS_FILE);
    match &bundle.labels {
        Some(labels) => npy::write_npy(&labels_path, &indices_to_npy(labels))?,
        None if labels_path.exists() => {
            fs::remove_file(&labels_path).map_err(|e| PdaError::io(&labels_path, e))?
        }
        None => {}
    }

    let meta_path = dir.join(META_FILE);
    let text = serde_json::to_string_pretty(&bundle.meta)
        .map_err(|e| PdaError::Format(e.to_string()))?;
    fs::write(&meta_path, text + "\n").map_err(|e| PdaError::io(&meta_path, e))
}

/// Writes class predictions as a 1-D `<i8` array.
pub fn save_predictions(path: impl AsRef<Path>, predictions: &[usize]) -> Result<()> {
    npy::write_npy(path.as_ref(), &indices_to_npy(predictions))
}

/// Reads predictions written by [`save_predictions`].
pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    read_indices(path.as_ref(), "predictions")
}
