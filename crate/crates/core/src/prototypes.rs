//! Class prototypes built from target features.
//!
//! The prototype of class `l` is the weighted mean of the features whose
//! pseudo-label is `l`, each weighted by the model's probability for `l`:
//!
//! ```text
//! c_l = Σ_i w_i·f(x_i) / Σ_i w_i,   w_i = p_l(x_i)·[argmax p(x_i) == l]
//! ```
//!
//! Sums run over examples in ascending index order with f64 accumulators, so
//! results do not depend on how rows were shuffled or on the thread count.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use rayon::prelude::*;

use crate::bundle_io::{indices_to_npy, matrix_to_npy, FeatureBundle, FloatDtype};
use crate::error::{PdaError, Result};
use crate::npy::{self, NpyArray, NpyData};
use crate::pseudo_label::PseudoLabeling;

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    /// C×D; rows of absent classes are NaN.
    pub vectors: Array2<f64>,
    /// Total weight per class.
    pub mass: Vec<f64>,
    /// Number of examples assigned to each class.
    pub support: Vec<usize>,
    pub present: Vec<bool>,
}

impl PrototypeSet {
    pub fn num_classes(&self) -> usize {
        self.present.len()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn num_present(&self) -> usize {
        self.present.iter().filter(|&&p| p).count()
    }

    pub fn absent_classes(&self) -> Vec<usize> {
        (0..self.num_classes()).filter(|&l| !self.present[l]).collect()
    }

    /// Writes `prototypes.npy`, `mass.npy` and `support.npy` into `dir`.
    pub fn dump(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| PdaError::io(dir, e))?;
        npy::write_npy(
            &dir.join("prototypes.npy"),
            &matrix_to_npy(&self.vectors, FloatDtype::F64),
        )?;
        npy::write_npy(
            &dir.join("mass.npy"),
            &NpyArray {
                shape: vec![self.mass.len()],
                data: NpyData::F64(self.mass.clone()),
            },
        )?;
        npy::write_npy(&dir.join("support.npy"), &indices_to_npy(&self.support))
    }
}

/// Weighted per-class means of `features`. `labels[i]` picks the class of row
/// `i` and `weights[i]` its contribution.
pub fn weighted_class_means(
    features: ArrayView2<f64>,
    labels: &[usize],
    weights: &[f64],
    num_classes: usize,
) -> Result<PrototypeSet> {
    let n = features.nrows();
    if n == 0 {
        return Err(PdaError::Data("cannot build prototypes from zero examples".into()));
    }
    if labels.len() != n || weights.len() != n {
        return Err(PdaError::Schema(format!(
            "{n} feature rows but {} labels and {} weights",
            labels.len(),
            weights.len()
        )));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= num_classes {
            return Err(PdaError::Data(format!("label {l} at row {i} outside [0, {num_classes})")));
        }
        if !(weights[i] > 0.0 && weights[i].is_finite()) {
            return Err(PdaError::Data(format!("weight {} at row {i} is not positive", weights[i])));
        }
        members[l].push(i);
    }

    let d = features.ncols();
    let per_class: Vec<(Array1<f64>, f64)> = members
        .par_iter()
        .map(|rows| {
            let mut acc = Array1::<f64>::zeros(d);
            let mut mass = 0.0;
            for &i in rows {
                acc.scaled_add(weights[i], &features.row(i));
                mass += weights[i];
            }
            if rows.is_empty() {
                acc.fill(f64::NAN);
            } else {
                acc /= mass;
            }
            (acc, mass)
        })
        .collect();

    let mut vectors = Array2::<f64>::zeros((num_classes, d));
    let mut mass = Vec::with_capacity(num_classes);
    for (l, (v, m)) in per_class.into_iter().enumerate() {
        vectors.row_mut(l).assign(&v);
        mass.push(m);
    }
    let support: Vec<usize> = members.iter().map(Vec::len).collect();
    let present: Vec<bool> = support.iter().map(|&s| s > 0).collect();
    let absent = present.iter().filter(|&&p| !p).count();
    if absent > 0 {
        log::warn!("{absent} of {num_classes} classes received no examples and are excluded");
    }
    Ok(PrototypeSet {
        vectors,
        mass,
        support,
        present,
    })
}

fn check_pairing(bundle: &FeatureBundle, labeling: &PseudoLabeling) -> Result<()> {
    if labeling.len() != bundle.len() || labeling.num_classes() != bundle.num_classes() {
        return Err(PdaError::Schema(format!(
            "labeling is {}x{} but bundle is {}x{}",
            labeling.len(),
            labeling.num_classes(),
            bundle.len(),
            bundle.num_classes()
        )));
    }
    Ok(())
}

fn true_labels(bundle: &FeatureBundle) -> Result<&[usize]> {
    bundle.labels().ok_or_else(|| {
        PdaError::Precondition("true-label prototypes need a bundle with labels".into())
    })
}

/// Confidence-weighted prototypes from pseudo-labels.
pub fn build_prototypes(bundle: &FeatureBundle, labeling: &PseudoLabeling) -> Result<PrototypeSet> {
    check_pairing(bundle, labeling)?;
    weighted_class_means(
        bundle.features().view(),
        &labeling.pseudo,
        &labeling.weights,
        bundle.num_classes(),
    )
}

/// Plain per-pseudo-class means (every weight is 1).
pub fn build_prototypes_onehot(
    bundle: &FeatureBundle,
    labeling: &PseudoLabeling,
) -> Result<PrototypeSet> {
    check_pairing(bundle, labeling)?;
    let ones = vec![1.0; bundle.len()];
    weighted_class_means(
        bundle.features().view(),
        &labeling.pseudo,
        &ones,
        bundle.num_classes(),
    )
}

/// Per-true-class means; the oracle ceiling for prototype classification.
pub fn build_prototypes_true(bundle: &FeatureBundle) -> Result<PrototypeSet> {
    let labels = true_labels(bundle)?;
    let ones = vec![1.0; bundle.len()];
    weighted_class_means(bundle.features().view(), labels, &ones, bundle.num_classes())
}

/// True-label prototypes that keep model-confidence weighting: each example
/// is weighted by the model's probability for its true class.
pub fn build_prototypes_true_weighted(
    bundle: &FeatureBundle,
    labeling: &PseudoLabeling,
) -> Result<PrototypeSet> {
    check_pairing(bundle, labeling)?;
    let labels = true_labels(bundle)?;
    // floor keeps the weight strictly positive when a probability underflows
    let weights: Vec<f64> = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| labeling.probs[[i, l]].max(f64::MIN_POSITIVE))
        .collect();
    weighted_class_means(bundle.features().view(), labels, &weights, bundle.num_classes())
}
