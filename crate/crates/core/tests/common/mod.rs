//! Test fixtures and brute-force oracles. Nothing here calls into the code
//! paths it is used to check.
#![allow(dead_code)]

use ndarray::Array2;
use pda_core::{BundleMeta, FeatureBundle};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| {
        let z: f64 = StandardNormal.sample(rng);
        scale * z
    })
}

/// Random bundle with labels; logits are wide enough to give varied
/// confidences.
pub fn random_bundle(rng: &mut ChaCha8Rng, n: usize, d: usize, c: usize) -> FeatureBundle {
    let features = gaussian_matrix(rng, n, d, 2.0);
    let logits = gaussian_matrix(rng, n, c, 3.0);
    let labels = (0..n).map(|_| rng.random_range(0..c)).collect();
    FeatureBundle::new(features, logits, Some(labels), BundleMeta::new(c, d)).unwrap()
}

/// Softmax written as a plain loop.
pub fn softmax_oracle(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let mut max = f64::NEG_INFINITY;
        for &v in row.iter() {
            if v > max {
                max = v;
            }
        }
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

/// Weighted class means as a literal double loop over classes and examples
/// with the indicator `[label_i == l]`. `None` for classes without members.
pub fn class_mean_oracle(
    features: &Array2<f64>,
    labels: &[usize],
    weights: &[f64],
    c: usize,
) -> Vec<Option<Vec<f64>>> {
    let (n, d) = features.dim();
    let mut out = Vec::new();
    for l in 0..c {
        let mut num = vec![0.0; d];
        let mut den = 0.0;
        for i in 0..n {
            let indicator = if labels[i] == l { 1.0 } else { 0.0 };
            let w = weights[i] * indicator;
            for j in 0..d {
                num[j] += features[[i, j]] * w;
            }
            den += w;
        }
        out.push((den > 0.0).then(|| num.iter().map(|v| v / den).collect()));
    }
    out
}

/// Argmax of a row scan; first maximum wins.
pub fn argmax_oracle(row: &[f64]) -> usize {
    let mut best = 0;
    for j in 1..row.len() {
        if row[j] > row[best] {
            best = j;
        }
    }
    best
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// Determinant of the 2-D ML covariance of the chosen rows, closed form.
pub fn det2_of_subset(points: &Array2<f64>, rows: &[usize]) -> f64 {
    let h = rows.len() as f64;
    let (mut mx, mut my) = (0.0, 0.0);
    for &r in rows {
        mx += points[[r, 0]];
        my += points[[r, 1]];
    }
    mx /= h;
    my /= h;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for &r in rows {
        let dx = points[[r, 0]] - mx;
        let dy = points[[r, 1]] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    (sxx / h) * (syy / h) - (sxy / h) * (sxy / h)
}

/// Every `k`-subset of `0..n` by recursion.
pub fn all_subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Brute-force 2-D MCD: the subset with the smallest covariance determinant.
pub fn brute_force_mcd2(points: &Array2<f64>, h: usize) -> (Vec<usize>, f64) {
    let mut best: Option<(Vec<usize>, f64)> = None;
    for s in all_subsets(points.nrows(), h) {
        let det = det2_of_subset(points, &s);
        if best.as_ref().is_none_or(|(_, d)| det < *d) {
            best = Some((s, det));
        }
    }
    best.unwrap()
}
