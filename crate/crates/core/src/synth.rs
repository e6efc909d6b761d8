//! Synthetic domain-shift benchmark.
//!
//! Source classes are isotropic Gaussians centred on the vertices of a scaled
//! simplex, `μ_l = (class_sep/√2)·e_l`, so every pair of means is `class_sep`
//! apart. The frozen "source classifier" is the Bayes-optimal LDA rule for
//! that source distribution. Target class means are moved by `mean_shift`
//! along `unit(u + v_l)`, with `u` a direction shared by all classes and
//! `v_l` class-specific, and target covariance is `cov_scale·I`. The logits
//! in the generated bundle come from the source classifier applied to target
//! features, so they degrade with the shift the same way a real pre-trained
//! model does.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bundle_io::{BundleMeta, FeatureBundle};
use crate::error::{PdaError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShiftSpec {
    pub num_classes: usize,
    pub dim: usize,
    /// Examples of class 0; later classes shrink with `label_skew`.
    pub n_per_class: usize,
    /// Distance between any two source class means.
    pub class_sep: f64,
    pub mean_shift: f64,
    /// Variance of every target feature.
    pub cov_scale: f64,
    /// Class `l` gets `n_per_class·(1 − label_skew·l/(C−1))` examples.
    pub label_skew: f64,
    pub seed: u64,
}

impl Default for ShiftSpec {
    fn default() -> Self {
        Self {
            num_classes: 6,
            dim: 16,
            n_per_class: 100,
            class_sep: 3.0 * std::f64::consts::SQRT_2,
            mean_shift: 4.0,
            cov_scale: 1.0,
            label_skew: 0.0,
            seed: 0,
        }
    }
}

impl ShiftSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(PdaError::Precondition(msg));
        if self.num_classes < 2 {
            return fail(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if self.dim < self.num_classes {
            return fail(format!(
                "dim ({}) must be at least num_classes ({}) to place the simplex",
                self.dim, self.num_classes
            ));
        }
        if self.n_per_class == 0 {
            return fail("n_per_class must be positive".into());
        }
        if !(self.class_sep > 0.0 && self.class_sep.is_finite()) {
            return fail(format!("class_sep must be positive, got {}", self.class_sep));
        }
        if !(self.mean_shift >= 0.0 && self.mean_shift.is_finite()) {
            return fail(format!("mean_shift must be >= 0, got {}", self.mean_shift));
        }
        if !(self.cov_scale > 0.0 && self.cov_scale.is_finite()) {
            return fail(format!("cov_scale must be positive, got {}", self.cov_scale));
        }
        if !(0.0..1.0).contains(&self.label_skew) {
            return fail(format!("label_skew must lie in [0, 1), got {}", self.label_skew));
        }
        Ok(())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let c = self.num_classes;
        (0..c)
            .map(|l| {
                let frac = 1.0 - self.label_skew * l as f64 / (c - 1) as f64;
                ((self.n_per_class as f64 * frac).round() as usize).max(1)
            })
            .collect()
    }

    /// C×D source class means.
    pub fn source_means(&self) -> Array2<f64> {
        Array2::eye(self.dim)
            .slice(ndarray::s![..self.num_classes, ..])
            .mapv(|v: f64| v * self.class_sep / std::f64::consts::SQRT_2)
    }
}

fn unit_gaussian(rng: &mut ChaCha8Rng, d: usize) -> Array1<f64> {
    let v: Array1<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let norm = v.dot(&v).sqrt();
    v / norm
}

/// Logits of the source LDA rule: `μ_l·x − ½‖μ_l‖²`.
pub fn source_logits(means: &Array2<f64>, features: &Array2<f64>) -> Array2<f64> {
    let half_sq: Array1<f64> = means.rows().into_iter().map(|m| 0.5 * m.dot(&m)).collect();
    features.dot(&means.t()) - &half_sq
}

/// Draws a labeled target bundle for `spec`.
pub fn generate(spec: &ShiftSpec) -> Result<FeatureBundle> {
    spec.validate()?;
    let (c, d) = (spec.num_classes, spec.dim);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let source = spec.source_means();

    let shared = unit_gaussian(&mut rng, d);
    let target: Vec<Array1<f64>> = (0..c)
        .map(|l| {
            let own = unit_gaussian(&mut rng, d);
            let dir = &shared + &own;
            let norm = dir.dot(&dir).sqrt();
            &source.row(l) + &(dir * (spec.mean_shift / norm))
        })
        .collect();

    let counts = spec.class_counts();
    let n: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    let sd = spec.cov_scale.sqrt();
    let mut features = Array2::<f64>::zeros((n, d));
    let mut labels = vec![0usize; n];
    let mut k = 0;
    for (l, &count) in counts.iter().enumerate() {
        for _ in 0..count {
            let row = order[k];
            labels[row] = l;
            for j in 0..d {
                let z: f64 = StandardNormal.sample(&mut rng);
                features[[row, j]] = target[l][j] + sd * z;
            }
            k += 1;
        }
    }

    let logits = source_logits(&source, &features);
    let mut meta = BundleMeta::new(c, d);
    meta.domain = format!("synthetic-shift-{}", spec.mean_shift);
    meta.backbone = "analytic-lda".into();
    meta.extra.insert(
        "shift_spec".into(),
        serde_json::to_value(spec).expect("spec serializes"),
    );
    FeatureBundle::new(features, logits, Some(labels), meta)
}
