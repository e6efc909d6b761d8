//! Class probabilities, argmax pseudo-labels and the per-example confidence
//! weights that drive prototype construction.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{PdaError, Result};

const SIMPLEX_TOL: f64 = 1e-6;

/// Pseudo-labels of a target set together with their confidences.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabeling {
    /// N×C class probabilities.
    pub probs: Array2<f64>,
    /// Argmax class per example.
    pub pseudo: Vec<usize>,
    /// Probability of the pseudo-label class, i.e. the row maximum of `probs`.
    pub weights: Vec<f64>,
}

impl PseudoLabeling {
    pub fn len(&self) -> usize {
        self.pseudo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pseudo.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.probs.ncols()
    }

    /// Convenience: softmax the logits, then take the argmax.
    pub fn from_logits(logits: ArrayView2<f64>) -> Result<Self> {
        pseudo_labels(softmax_rows(logits)?)
    }
}

fn softmax_row(row: ArrayView1<f64>) -> Array1<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = row.mapv(|z| (z - max).exp());
    let total: f64 = out.sum();
    out /= total;
    out
}

/// Row-wise softmax, stabilized by subtracting each row's maximum.
pub fn softmax_rows(logits: ArrayView2<f64>) -> Result<Array2<f64>> {
    if let Some(((r, c), v)) = logits.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(PdaError::Data(format!("logit [{r}, {c}] is not finite ({v})")));
    }
    let rows: Vec<Array1<f64>> = logits
        .axis_iter(Axis(0))
        .into_par_iter()
        .map(softmax_row)
        .collect();
    let mut out = Array2::<f64>::zeros(logits.raw_dim());
    for (mut dst, src) in out.axis_iter_mut(Axis(0)).zip(rows) {
        dst.assign(&src);
    }
    Ok(out)
}

/// Index of the largest entry; exact ties go to the lowest index.
pub(crate) fn argmax(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Argmax pseudo-labels of a probability matrix and their confidences.
pub fn pseudo_labels(probs: Array2<f64>) -> Result<PseudoLabeling> {
    if probs.nrows() == 0 || probs.ncols() == 0 {
        return Err(PdaError::Data("cannot pseudo-label an empty matrix".into()));
    }
    for (i, row) in probs.axis_iter(Axis(0)).enumerate() {
        let sum: f64 = row.sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL || row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(PdaError::Data(format!(
                "row {i} is not a probability distribution (sum {sum})"
            )));
        }
    }
    let pseudo: Vec<usize> = probs.axis_iter(Axis(0)).map(argmax).collect();
    let weights = pseudo
        .iter()
        .enumerate()
        .map(|(i, &l)| probs[[i, l]])
        .collect();
    Ok(PseudoLabeling {
        probs,
        pseudo,
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn uniform_logits() {
        let p = softmax_rows(array![[0.0, 0.0, 0.0]].view()).unwrap();
        for v in p.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_extended_precision_oracle() {
        // exp/normalize of [1, 2, 3] evaluated independently with the
        // un-shifted formula; the result is well within f64 range.
        let e: Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|z| z.exp()).collect();
        let total: f64 = e.iter().sum();
        let oracle: Vec<f64> = e.iter().map(|v| v / total).collect();
        let p = softmax_rows(array![[1.0, 2.0, 3.0]].view()).unwrap();
        for (a, b) in p.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
        // frozen reference values
        assert!((p[[0, 0]] - 0.090_030_573_170_380_46).abs() < 1e-15);
        assert!((p[[0, 1]] - 0.244_728_471_054_797_64).abs() < 1e-15);
        assert!((p[[0, 2]] - 0.665_240_955_774_821_9).abs() < 1e-15);
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let p = softmax_rows(array![[1000.0, 1001.0]].view()).unwrap();
        assert!((p.sum() - 1.0).abs() < 1e-12);
        assert!(p[[0, 1]] > p[[0, 0]]);
    }

    #[test]
    fn rejects_non_finite_logits() {
        let err = softmax_rows(array![[0.0, f64::NAN]].view()).unwrap_err();
        assert!(matches!(err, PdaError::Data(_)));
    }

    #[test]
    fn one_hot_row() {
        let l = pseudo_labels(array![[0.0, 0.0, 1.0, 0.0]]).unwrap();
        assert_eq!(l.pseudo, vec![2]);
        assert_eq!(l.weights, vec![1.0]);
    }

    #[test]
    fn uniform_row_breaks_tie_low() {
        let l = pseudo_labels(array![[0.25, 0.25, 0.25, 0.25]]).unwrap();
        assert_eq!(l.pseudo, vec![0]);
        assert_eq!(l.weights, vec![0.25]);
    }

    #[test]
    fn random_matrix_matches_row_scan() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut probs = Array2::<f64>::zeros((6, 3));
        for mut row in probs.rows_mut() {
            row.mapv_inplace(|_| rng.random::<f64>());
            let s = row.sum();
            row /= s;
        }
        let l = pseudo_labels(probs.clone()).unwrap();
        for i in 0..6 {
            let (mut best, mut best_v) = (0, probs[[i, 0]]);
            for j in 1..3 {
                if probs[[i, j]] > best_v {
                    best = j;
                    best_v = probs[[i, j]];
                }
            }
            assert_eq!(l.pseudo[i], best);
            assert_eq!(l.weights[i], best_v);
        }
    }

    #[test]
    fn rejects_empty_and_non_simplex() {
        assert!(matches!(
            pseudo_labels(Array2::zeros((0, 3))),
            Err(PdaError::Data(_))
        ));
        assert!(matches!(
            pseudo_labels(array![[0.5, 0.6]]),
            Err(PdaError::Data(_))
        ));
    }

    fn logits_strategy() -> impl Strategy<Value = Array2<f64>> {
        (1usize..12, 2usize..8).prop_flat_map(|(n, c)| {
            proptest::collection::vec(-20.0f64..20.0, n * c)
                .prop_map(move |v| Array2::from_shape_vec((n, c), v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn rows_on_simplex_and_shift_invariant(logits in logits_strategy(), k in -50.0f64..50.0) {
            let p = softmax_rows(logits.view()).unwrap();
            for row in p.rows() {
                prop_assert!((row.sum() - 1.0).abs() < 1e-12);
                prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
            let shifted = softmax_rows((&logits + k).view()).unwrap();
            for (a, b) in p.iter().zip(shifted.iter()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn temperature_keeps_pseudo_labels(logits in logits_strategy(), t in 0.05f64..20.0) {
            let base = PseudoLabeling::from_logits(logits.view()).unwrap();
            let tempered = PseudoLabeling::from_logits((&logits / t).view()).unwrap();
            prop_assert_eq!(&base.pseudo, &tempered.pseudo);
            let c = logits.ncols() as f64;
            for (i, &w) in base.weights.iter().enumerate() {
                let row_max = base.probs.row(i).iter().copied().fold(f64::MIN, f64::max);
                prop_assert_eq!(w, row_max);
                prop_assert!(w > 0.0 && w >= 1.0 / c - 1e-15);
            }
        }
    }
}
