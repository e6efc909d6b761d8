//! Nearest-prototype inference and accuracy reporting.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PdaError, Result};
use crate::prototypes::PrototypeSet;

/// Norms below this are treated as this value under the cosine metric.
pub const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Cosine,
    Euclidean,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Cosine => "cosine",
            Metric::Euclidean => "euclidean",
        })
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "cosine" => Ok(Metric::Cosine),
            "euclidean" => Ok(Metric::Euclidean),
            other => Err(format!("unknown metric '{other}' (expected cosine or euclidean)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub labels: Vec<usize>,
    /// Negated distance to each prototype; `-inf` for absent classes.
    pub scores: Array2<f64>,
}

fn norm(v: ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}

pub fn cosine_distance(x: ArrayView1<f64>, c: ArrayView1<f64>) -> f64 {
    1.0 - x.dot(&c) / (norm(x).max(NORM_FLOOR) * norm(c).max(NORM_FLOOR))
}

pub fn euclidean_distance(x: ArrayView1<f64>, c: ArrayView1<f64>) -> f64 {
    x.iter()
        .zip(c.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Assigns every row of `features` to its closest present prototype.
pub fn nearest_prototype(
    features: ArrayView2<f64>,
    protos: &PrototypeSet,
    metric: Metric,
) -> Result<Prediction> {
    if protos.num_present() == 0 {
        return Err(PdaError::State("no class has a prototype".into()));
    }
    if features.ncols() != protos.dim() {
        return Err(PdaError::Schema(format!(
            "features have {} columns, prototypes {}",
            features.ncols(),
            protos.dim()
        )));
    }
    let c = protos.num_classes();
    let rows: Vec<(usize, Array1<f64>)> = features
        .axis_iter(Axis(0))
        .into_par_iter()
        .map(|x| {
            let mut scores = Array1::from_elem(c, f64::NEG_INFINITY);
            let mut best: Option<usize> = None;
            for l in 0..c {
                if !protos.present[l] {
                    continue;
                }
                let proto = protos.vectors.row(l);
                let d = match metric {
                    Metric::Cosine => cosine_distance(x, proto),
                    Metric::Euclidean => euclidean_distance(x, proto),
                };
                scores[l] = -d;
                if best.is_none_or(|b| scores[l] > scores[b]) {
                    best = Some(l);
                }
            }
            (best.expect("at least one present prototype"), scores)
        })
        .collect();

    let mut scores = Array2::<f64>::zeros((features.nrows(), c));
    let mut labels = Vec::with_capacity(rows.len());
    for (i, (label, s)) in rows.into_iter().enumerate() {
        labels.push(label);
        scores.row_mut(i).assign(&s);
    }
    Ok(Prediction { labels, scores })
}

/// Fraction of predictions equal to the labels.
pub fn accuracy(predicted: &[usize], labels: &[usize]) -> Result<f64> {
    if predicted.len() != labels.len() {
        return Err(PdaError::Schema(format!(
            "{} predictions for {} labels",
            predicted.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(PdaError::Data("accuracy of an empty set".into()));
    }
    let hits = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub accuracy: f64,
    /// Recall per true class; `null` for classes without labeled examples.
    pub per_class_accuracy: Vec<Option<f64>>,
    /// Classes that never appear among the predictions.
    pub num_absent_classes: usize,
}

impl AccuracyReport {
    pub fn new(predicted: &[usize], labels: &[usize], num_classes: usize) -> Result<Self> {
        let accuracy = accuracy(predicted, labels)?;
        let mut total = vec![0usize; num_classes];
        let mut hits = vec![0usize; num_classes];
        let mut seen = vec![false; num_classes];
        for (&p, &l) in predicted.iter().zip(labels) {
            if p >= num_classes || l >= num_classes {
                return Err(PdaError::Data(format!(
                    "class index {} outside [0, {num_classes})",
                    p.max(l)
                )));
            }
            seen[p] = true;
            total[l] += 1;
            if p == l {
                hits[l] += 1;
            }
        }
        Ok(Self {
            accuracy,
            per_class_accuracy: total
                .iter()
                .zip(&hits)
                .map(|(&t, &h)| (t > 0).then(|| h as f64 / t as f64))
                .collect(),
            num_absent_classes: seen.iter().filter(|&&s| !s).count(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prototypes::weighted_class_means;
    use ndarray::array;

    fn protos(vectors: Array2<f64>) -> PrototypeSet {
        let c = vectors.nrows();
        let labels: Vec<usize> = (0..c).collect();
        weighted_class_means(vectors.view(), &labels, &vec![1.0; c], c).unwrap()
    }

    #[test]
    fn exact_match_has_zero_distance() {
        let p = protos(array![[1.0, 0.0, 0.0], [0.0, 1.0, 1.0], [0.3, 0.2, -1.0]]);
        let x = array![[0.3, 0.2, -1.0]];
        let pred = nearest_prototype(x.view(), &p, Metric::Cosine).unwrap();
        assert_eq!(pred.labels, vec![2]);
        assert!(pred.scores[[0, 2]].abs() < 1e-15);
    }

    #[test]
    fn cosine_ignores_feature_scale() {
        let p = protos(array![[1.0, 0.2], [0.1, 1.0], [-1.0, 0.4]]);
        let x = array![[0.6, 0.5]];
        let a = nearest_prototype(x.view(), &p, Metric::Cosine).unwrap();
        let b = nearest_prototype((&x * 7.3).view(), &p, Metric::Cosine).unwrap();
        assert_eq!(a.labels, b.labels);
        for (s, t) in a.scores.iter().zip(b.scores.iter()) {
            assert!((s - t).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_vector_is_equidistant() {
        let p = protos(array![[1.0, 0.0], [0.0, 1.0]]);
        let pred = nearest_prototype(array![[0.0, 0.0]].view(), &p, Metric::Cosine).unwrap();
        assert_eq!(pred.labels, vec![0]);
        assert_eq!(pred.scores.row(0), array![-1.0, -1.0]);
    }

    #[test]
    fn absent_classes_are_skipped() {
        let f = array![[1.0, 0.0], [0.0, 1.0]];
        let p = weighted_class_means(f.view(), &[0, 2], &[1.0, 1.0], 3).unwrap();
        let pred = nearest_prototype(array![[0.1, 0.0], [0.0, 0.2]].view(), &p, Metric::Euclidean)
            .unwrap();
        assert_eq!(pred.labels, vec![0, 2]);
        assert_eq!(pred.scores[[0, 1]], f64::NEG_INFINITY);
    }

    #[test]
    fn no_present_prototype_is_state_error() {
        let p = PrototypeSet {
            vectors: Array2::from_elem((2, 2), f64::NAN),
            mass: vec![0.0, 0.0],
            support: vec![0, 0],
            present: vec![false, false],
        };
        let err = nearest_prototype(array![[1.0, 0.0]].view(), &p, Metric::Cosine).unwrap_err();
        assert!(matches!(err, PdaError::State(_)));
    }

    #[test]
    fn dimension_mismatch_is_schema_error() {
        let p = protos(array![[1.0, 0.0], [0.0, 1.0]]);
        let err = nearest_prototype(array![[1.0, 0.0, 0.0]].view(), &p, Metric::Cosine).unwrap_err();
        assert!(matches!(err, PdaError::Schema(_)));
    }

    #[test]
    fn accuracy_counts() {
        assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 0], &[0, 1]).unwrap(), 0.0);
        assert_eq!(accuracy(&[0, 1, 1, 1], &[0, 1, 0, 1]).unwrap(), 0.75);
        assert!(matches!(accuracy(&[0], &[0, 1]), Err(PdaError::Schema(_))));
    }

    #[test]
    fn report_per_class() {
        let r = AccuracyReport::new(&[0, 0, 1, 0], &[0, 0, 1, 1], 3).unwrap();
        assert_eq!(r.accuracy, 0.75);
        assert_eq!(r.per_class_accuracy, vec![Some(1.0), Some(0.5), None]);
        assert_eq!(r.num_absent_classes, 1);
    }

    #[test]
    fn metric_parsing() {
        assert_eq!("cosine".parse::<Metric>().unwrap(), Metric::Cosine);
        assert!("manhattan".parse::<Metric>().is_err());
    }
}
