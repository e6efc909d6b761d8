//! Robust generative classifier: a Gaussian discriminant with per-class MCD
//! means and one shared (tied) scatter matrix.
//!
//! Classes with too few members for MCD (fewer than `D+2`, which is the norm
//! for wide backbone features) fall back to their plain sample mean and add
//! nothing to the shared scatter. If no class is large enough, every class
//! with at least two members contributes its sample covariance instead.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle_io::FeatureBundle;
use crate::error::{PdaError, Result};
use crate::linalg::{add_ridge, ridge, subset_mean_cov, Cholesky};
use crate::mcd::{fast_mcd, McdConfig};
use crate::pseudo_label::PseudoLabeling;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RogConfig {
    pub mcd: McdConfig,
    /// Equal priors over present classes instead of pseudo-label proportions.
    pub uniform_priors: bool,
    /// Members needed before a class gets an MCD fit; `None` means `D+2`.
    /// Values below `D+2` are raised to it.
    pub min_mcd_support: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassFit {
    Absent,
    /// Sample mean only; no scatter contribution.
    Small,
    Robust,
}

#[derive(Debug, Clone)]
pub struct RogModel {
    /// C×D; NaN rows for absent classes.
    pub means: Array2<f64>,
    /// Shared scatter before the ridge is added.
    pub tied_cov: Array2<f64>,
    pub ridge: f64,
    /// Factor of `tied_cov + ridge·I`.
    pub precision_factor: Cholesky,
    /// `-inf` for absent classes.
    pub log_priors: Array1<f64>,
    pub support: Vec<usize>,
    pub fits: Vec<ClassFit>,
}

impl RogModel {
    pub fn num_classes(&self) -> usize {
        self.fits.len()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    pub fn present(&self) -> Vec<bool> {
        self.fits.iter().map(|f| *f != ClassFit::Absent).collect()
    }

    /// Builds a model from explicit parameters; `priors` need not be
    /// normalized and zero entries mark absent classes.
    pub fn from_parts(means: Array2<f64>, tied_cov: Array2<f64>, priors: &[f64]) -> Result<Self> {
        let c = means.nrows();
        if priors.len() != c || tied_cov.nrows() != means.ncols() {
            return Err(PdaError::Schema("inconsistent RoG parameter shapes".into()));
        }
        let total: f64 = priors.iter().sum();
        if total.is_nan() || total <= 0.0 || priors.iter().any(|&p| p < 0.0) {
            return Err(PdaError::Data("priors must be non-negative with positive sum".into()));
        }
        let lambda = ridge(tied_cov.view());
        let precision_factor = Cholesky::factor(add_ridge(&tied_cov, lambda).view())?;
        let fits = priors
            .iter()
            .map(|&p| if p > 0.0 { ClassFit::Robust } else { ClassFit::Absent })
            .collect();
        Ok(Self {
            means,
            tied_cov,
            ridge: lambda,
            precision_factor,
            log_priors: priors.iter().map(|&p| (p / total).ln()).collect(),
            support: vec![0; c],
            fits,
        })
    }
}

struct ClassEstimate {
    fit: ClassFit,
    mean: Array1<f64>,
    cov: Option<Array2<f64>>,
}

fn estimate_class(
    features: ArrayView2<f64>,
    rows: &[usize],
    class: usize,
    min_support: usize,
    mcd: &McdConfig,
) -> Result<ClassEstimate> {
    let d = features.ncols();
    if rows.is_empty() {
        return Ok(ClassEstimate {
            fit: ClassFit::Absent,
            mean: Array1::from_elem(d, f64::NAN),
            cov: None,
        });
    }
    if rows.len() >= min_support {
        let points = features.select(Axis(0), rows);
        let cfg = McdConfig {
            seed: mcd.seed ^ class as u64,
            ..mcd.clone()
        };
        let est = fast_mcd(points.view(), &cfg)?;
        return Ok(ClassEstimate {
            fit: ClassFit::Robust,
            mean: est.mean,
            cov: Some(est.cov),
        });
    }
    let (mean, cov) = subset_mean_cov(features, rows);
    Ok(ClassEstimate {
        fit: ClassFit::Small,
        mean,
        cov: (rows.len() >= 2).then_some(cov),
    })
}

/// Fits the classifier on target features grouped by pseudo-label.
pub fn fit_rog(
    bundle: &FeatureBundle,
    labeling: &PseudoLabeling,
    cfg: &RogConfig,
) -> Result<RogModel> {
    if labeling.len() != bundle.len() || labeling.num_classes() != bundle.num_classes() {
        return Err(PdaError::Schema("labeling does not match bundle".into()));
    }
    fit_rog_labels(
        bundle.features().view(),
        &labeling.pseudo,
        bundle.num_classes(),
        cfg,
    )
}

pub fn fit_rog_labels(
    features: ArrayView2<f64>,
    labels: &[usize],
    num_classes: usize,
    cfg: &RogConfig,
) -> Result<RogModel> {
    let (n, d) = features.dim();
    if n == 0 || labels.len() != n {
        return Err(PdaError::Schema(format!(
            "{n} feature rows but {} labels",
            labels.len()
        )));
    }
    cfg.mcd.validate()?;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= num_classes {
            return Err(PdaError::Data(format!("label {l} outside [0, {num_classes})")));
        }
        members[l].push(i);
    }
    let min_support = cfg.min_mcd_support.unwrap_or(0).max(d + 2);

    let estimates: Vec<ClassEstimate> = members
        .par_iter()
        .enumerate()
        .map(|(l, rows)| estimate_class(features, rows, l, min_support, &cfg.mcd))
        .collect::<Result<_>>()?;

    let any_robust = estimates.iter().any(|e| e.fit == ClassFit::Robust);
    if !any_robust {
        log::info!("no class has {min_support} members; pooling sample covariances");
    }
    let mut tied = Array2::<f64>::zeros((d, d));
    let mut weight = 0usize;
    for (l, e) in estimates.iter().enumerate() {
        let contributes = if any_robust {
            e.fit == ClassFit::Robust
        } else {
            e.cov.is_some()
        };
        if contributes {
            let cov = e.cov.as_ref().expect("contributing class has a covariance");
            tied.scaled_add(members[l].len() as f64, cov);
            weight += members[l].len();
        }
    }
    if weight == 0 {
        return Err(PdaError::State(
            "no class has enough members to estimate a covariance".into(),
        ));
    }
    tied /= weight as f64;

    let lambda = ridge(tied.view());
    let precision_factor = Cholesky::factor(add_ridge(&tied, lambda).view())?;

    let support: Vec<usize> = members.iter().map(Vec::len).collect();
    let present = support.iter().filter(|&&s| s > 0).count();
    let log_priors = support
        .iter()
        .map(|&s| match (s, cfg.uniform_priors) {
            (0, _) => f64::NEG_INFINITY,
            (_, true) => -(present as f64).ln(),
            (s, false) => (s as f64 / n as f64).ln(),
        })
        .collect();

    let mut means = Array2::<f64>::zeros((num_classes, d));
    let mut fits = Vec::with_capacity(num_classes);
    for (l, e) in estimates.into_iter().enumerate() {
        means.row_mut(l).assign(&e.mean);
        fits.push(e.fit);
    }
    Ok(RogModel {
        means,
        tied_cov: tied,
        ridge: lambda,
        precision_factor,
        log_priors,
        support,
        fits,
    })
}

/// Class posteriors `softmax_l(log π_l − ½·(x−μ_l)ᵀ Σ⁻¹ (x−μ_l))`; absent
/// classes get probability 0.
pub fn rog_posterior(model: &RogModel, features: ArrayView2<f64>) -> Result<Array2<f64>> {
    if features.ncols() != model.dim() {
        return Err(PdaError::Schema(format!(
            "features have {} columns, model expects {}",
            features.ncols(),
            model.dim()
        )));
    }
    let present = model.present();
    let c = model.num_classes();
    let whitened_means: Vec<Option<Array1<f64>>> = (0..c)
        .map(|l| present[l].then(|| model.precision_factor.solve_lower(model.means.row(l))))
        .collect();

    let rows: Vec<Array1<f64>> = features
        .axis_iter(Axis(0))
        .into_par_iter()
        .map(|x| {
            let y = model.precision_factor.solve_lower(x);
            let mut logits = Array1::from_elem(c, f64::NEG_INFINITY);
            for (l, m) in whitened_means.iter().enumerate() {
                if let Some(m) = m {
                    let q: f64 = y.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
                    logits[l] = model.log_priors[l] - 0.5 * q;
                }
            }
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut p = logits.mapv(|z| if z == f64::NEG_INFINITY { 0.0 } else { (z - max).exp() });
            let total = p.sum();
            p /= total;
            p
        })
        .collect();

    let mut out = Array2::<f64>::zeros((features.nrows(), c));
    for (mut dst, src) in out.axis_iter_mut(Axis(0)).zip(rows) {
        dst.assign(&src);
    }
    Ok(out)
}
