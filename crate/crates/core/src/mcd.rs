//! Minimum Covariance Determinant location/scatter estimation.
//!
//! The MCD estimate is the mean and covariance of the `h`-point subset whose
//! covariance has the smallest determinant. Small problems are solved exactly
//! by enumerating every subset; otherwise the randomized FAST-MCD search is
//! used: from random `(D+1)`-point seeds, C-steps repeatedly keep the `h`
//! points with the smallest Mahalanobis distance under the current estimate.
//! Each C-step never increases the determinant, so every start converges to a
//! local optimum and the best one is returned. As in the original algorithm,
//! `n_trials` seeds are first screened with two C-steps and only the
//! `n_starts` most promising are iterated to convergence.
//!
//! All determinants are taken of `cov + λI`, where `λ` is fixed once per call
//! from the spread of the full point set (see [`crate::linalg::ridge`]). With
//! a fixed ridge the C-step monotonicity argument carries over unchanged, and
//! rank-deficient subsets still get a finite objective.

use ndarray::{Array1, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PdaError, Result};
use crate::linalg::{add_ridge, mean_cov, ridge, subset_mean_cov, Cholesky};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McdConfig {
    /// Fraction of points kept in the subset, in (0.5, 1].
    pub h_fraction: f64,
    /// Random seeds screened with two C-steps; at least `n_starts` are used.
    pub n_trials: usize,
    /// Screened candidates iterated to convergence.
    pub n_starts: usize,
    pub c_steps_max: usize,
    /// A C-step that lowers the determinant by less than this fraction ends
    /// the start.
    pub det_rel_tol: f64,
    pub seed: u64,
    /// Enumerate all subsets when there are at most this many.
    pub exhaustive_threshold: u64,
}

impl Default for McdConfig {
    fn default() -> Self {
        Self {
            h_fraction: 0.75,
            n_trials: 50,
            n_starts: 10,
            c_steps_max: 20,
            det_rel_tol: 1e-9,
            seed: 0,
            exhaustive_threshold: 10_000,
        }
    }
}

impl McdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.h_fraction > 0.5 && self.h_fraction <= 1.0) {
            return Err(PdaError::Precondition(format!(
                "h_fraction must lie in (0.5, 1], got {}",
                self.h_fraction
            )));
        }
        if self.n_starts == 0 || self.c_steps_max == 0 {
            return Err(PdaError::Precondition(
                "n_starts and c_steps_max must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.det_rel_tol) {
            return Err(PdaError::Precondition(format!(
                "det_rel_tol must lie in [0, 1), got {}",
                self.det_rel_tol
            )));
        }
        Ok(())
    }

    /// `h = max(⌈h_fraction·n⌉, D+1)`; fails when that exceeds `n`.
    pub fn subset_size(&self, n: usize, d: usize) -> Result<usize> {
        // the epsilon keeps e.g. 0.7·10 from rounding up to 8
        let frac = (self.h_fraction * n as f64 - 1e-9).ceil() as usize;
        let h = frac.max(d + 1);
        if h > n {
            return Err(PdaError::Precondition(format!(
                "subset size {h} exceeds {n} points"
            )));
        }
        Ok(h)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustEstimate {
    /// Sample mean of the support subset.
    pub mean: Array1<f64>,
    /// Sample covariance (divisor `h`) of the support subset, without ridge.
    pub cov: Array2<f64>,
    /// `ln det(cov + ridge·I)`, the minimized objective.
    pub log_det: f64,
    /// Ridge used for distances and the objective.
    pub ridge: f64,
    /// Sorted indices of the selected `h` points.
    pub support: Vec<usize>,
}

impl RobustEstimate {
    pub fn h(&self) -> usize {
        self.support.len()
    }

    /// Factor of `cov + ridge·I`.
    pub fn factor(&self) -> Result<Cholesky> {
        Cholesky::factor(add_ridge(&self.cov, self.ridge).view())
    }
}

#[derive(Debug, Clone)]
pub struct McdRun {
    pub estimate: RobustEstimate,
    /// Log-determinants after every C-step, one trace per start. Empty when
    /// the exhaustive search was used.
    pub traces: Vec<Vec<f64>>,
    pub exhaustive: bool,
}

/// `C(n, k)` if it does not exceed `cap`.
pub fn binomial_at_most(n: usize, k: usize, cap: u64) -> Option<u64> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > cap as u128 {
            return None;
        }
    }
    Some(acc as u64)
}

struct Fit {
    subset: Vec<usize>,
    mean: Array1<f64>,
    cov: Array2<f64>,
    chol: Cholesky,
    log_det: f64,
}

impl Fit {
    fn new(points: ArrayView2<f64>, subset: Vec<usize>, lambda: f64) -> Result<Self> {
        let (mean, cov) = subset_mean_cov(points, &subset);
        let chol = Cholesky::factor(add_ridge(&cov, lambda).view())?;
        let log_det = chol.log_det();
        Ok(Self {
            subset,
            mean,
            cov,
            chol,
            log_det,
        })
    }

    fn into_estimate(self, lambda: f64) -> RobustEstimate {
        RobustEstimate {
            mean: self.mean,
            cov: self.cov,
            log_det: self.log_det,
            ridge: lambda,
            support: self.subset,
        }
    }
}

/// Indices of the `h` points closest to `fit` in Mahalanobis distance, sorted.
/// Equal distances are resolved by index.
fn c_step(points: ArrayView2<f64>, fit: &Fit, h: usize) -> Vec<usize> {
    let mut dist: Vec<(f64, usize)> = points
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, x)| (fit.chol.mahalanobis_sq((&x - &fit.mean).view()), i))
        .collect();
    let by_dist = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if h < dist.len() {
        dist.select_nth_unstable_by(h - 1, by_dist);
    }
    let mut subset: Vec<usize> = dist[..h].iter().map(|&(_, i)| i).collect();
    subset.sort_unstable();
    subset
}

/// One randomized search path and the log-determinants it visited.
struct Path {
    fit: Fit,
    trace: Vec<f64>,
    done: bool,
}

fn seed_path(points: ArrayView2<f64>, h: usize, lambda: f64, cfg: &McdConfig, trial: usize) -> Result<Path> {
    let n = points.nrows();
    let seed_size = (points.ncols() + 1).min(n - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ trial as u64);
    let mut seed_rows = rand::seq::index::sample(&mut rng, n, seed_size).into_vec();
    seed_rows.sort_unstable();
    let seed_fit = Fit::new(points, seed_rows, lambda)?;
    let fit = Fit::new(points, c_step(points, &seed_fit, h), lambda)?;
    Ok(Path {
        trace: vec![fit.log_det],
        fit,
        done: false,
    })
}

/// Runs C-steps until the path has taken `steps` in total or converged.
fn advance(points: ArrayView2<f64>, h: usize, lambda: f64, cfg: &McdConfig, path: &mut Path, steps: usize) -> Result<()> {
    let min_gain = (-cfg.det_rel_tol).ln_1p();
    while !path.done && path.trace.len() < steps {
        let subset = c_step(points, &path.fit, h);
        if subset == path.fit.subset {
            path.done = true;
            break;
        }
        let next = Fit::new(points, subset, lambda)?;
        path.trace.push(next.log_det);
        path.done = next.log_det - path.fit.log_det >= min_gain;
        if next.log_det <= path.fit.log_det {
            path.fit = next;
        }
    }
    Ok(())
}

/// Globally optimal subset by enumerating all `C(n, h)` candidates in
/// lexicographic order; the first minimum wins.
fn exhaustive(points: ArrayView2<f64>, h: usize, lambda: f64) -> Result<Fit> {
    let n = points.nrows();
    let mut idx: Vec<usize> = (0..h).collect();
    let mut best = Fit::new(points, idx.clone(), lambda)?;
    loop {
        // advance to the next combination
        let mut pos = h;
        while pos > 0 && idx[pos - 1] == n - h + pos - 1 {
            pos -= 1;
        }
        if pos == 0 {
            return Ok(best);
        }
        idx[pos - 1] += 1;
        for j in pos..h {
            idx[j] = idx[j - 1] + 1;
        }
        let cand = Fit::new(points, idx.clone(), lambda)?;
        if cand.log_det < best.log_det {
            best = cand;
        }
    }
}

fn check_points(points: ArrayView2<f64>) -> Result<()> {
    let (n, d) = points.dim();
    if d == 0 {
        return Err(PdaError::Precondition("points have zero dimensions".into()));
    }
    if n < d + 2 {
        return Err(PdaError::Precondition(format!(
            "MCD needs at least D+2 = {} points, got {n}",
            d + 2
        )));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(PdaError::Data("MCD input contains non-finite values".into()));
    }
    Ok(())
}

/// Ridge applied throughout one MCD call for this point set.
pub fn ridge_for(points: ArrayView2<f64>) -> f64 {
    let (_, cov) = mean_cov(points);
    ridge(cov.view())
}

/// MCD estimate of `points` (rows are observations).
pub fn fast_mcd(points: ArrayView2<f64>, cfg: &McdConfig) -> Result<RobustEstimate> {
    fast_mcd_traced(points, cfg).map(|run| run.estimate)
}

/// Like [`fast_mcd`], also returning the per-start determinant traces.
pub fn fast_mcd_traced(points: ArrayView2<f64>, cfg: &McdConfig) -> Result<McdRun> {
    cfg.validate()?;
    check_points(points)?;
    let (n, d) = points.dim();
    let h = cfg.subset_size(n, d)?;
    let lambda = ridge_for(points);

    if binomial_at_most(n, h, cfg.exhaustive_threshold).is_some() {
        let best = exhaustive(points, h, lambda)?;
        return Ok(McdRun {
            estimate: best.into_estimate(lambda),
            traces: Vec::new(),
            exhaustive: true,
        });
    }

    let trials = cfg.n_trials.max(cfg.n_starts);
    let screen_steps = if trials > cfg.n_starts { 2.min(cfg.c_steps_max) } else { 0 };
    let mut paths: Vec<(usize, Path)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut path = seed_path(points, h, lambda, cfg, t)?;
            advance(points, h, lambda, cfg, &mut path, screen_steps)?;
            Ok((t, path))
        })
        .collect::<Result<_>>()?;
    paths.sort_by(|a, b| a.1.fit.log_det.total_cmp(&b.1.fit.log_det).then(a.0.cmp(&b.0)));
    paths.truncate(cfg.n_starts);
    paths.sort_by_key(|p| p.0);
    let paths: Vec<Path> = paths
        .into_par_iter()
        .map(|(_, mut path)| {
            advance(points, h, lambda, cfg, &mut path, cfg.c_steps_max)?;
            Ok(path)
        })
        .collect::<Result<_>>()?;

    let mut traces = Vec::with_capacity(paths.len());
    let mut best: Option<Fit> = None;
    for Path { fit, trace, .. } in paths {
        traces.push(trace);
        if best.as_ref().is_none_or(|b| fit.log_det < b.log_det) {
            best = Some(fit);
        }
    }
    Ok(McdRun {
        estimate: best.expect("n_starts >= 1").into_estimate(lambda),
        traces,
        exhaustive: false,
    })
}
