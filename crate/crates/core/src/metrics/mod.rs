//! Classification scores, representation geometry, the covariate-shift
//! probe and the feature-correlation analysis.

mod correlation;
mod probe;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DftError, Result};
use crate::tensor::Tensor;

pub use correlation::{
    correlation_operator, expected_correlation, glorot_correlation_curve,
    monte_carlo_correlation, CorrelationOperator, CurvePoint,
};
pub use probe::{covariate_shift_probe, shuffled_probe, ProbeReport};

fn check_labels(pred: &[usize], truth: &[usize], classes: usize) -> Result<()> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(DftError::Metric(format!(
            "need equal nonempty label vectors, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    if let Some(&bad) = pred.iter().chain(truth).find(|&&l| l >= classes) {
        return Err(DftError::Metric(format!("label {bad} outside [0, {classes})")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub class: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class scores for every class that occurs in `pred` or `truth`.
pub fn class_scores(pred: &[usize], truth: &[usize], classes: usize) -> Result<Vec<ClassScores>> {
    check_labels(pred, truth, classes)?;
    let (mut tp, mut fp, mut fnn) = (vec![0; classes], vec![0; classes], vec![0; classes]);
    for (&p, &t) in pred.iter().zip(truth) {
        if p == t {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fnn[t] += 1;
        }
    }
    Ok((0..classes)
        .filter(|&c| tp[c] + fp[c] + fnn[c] > 0)
        .map(|c| ClassScores {
            class: c,
            precision: ratio(tp[c], tp[c] + fp[c]),
            recall: ratio(tp[c], tp[c] + fnn[c]),
            f1: ratio(2 * tp[c], 2 * tp[c] + fp[c] + fnn[c]),
            support: tp[c] + fnn[c],
        })
        .collect())
}

/// `(micro, macro)` F1. Classes absent from both vectors do not enter the
/// macro average.
pub fn f1_scores(pred: &[usize], truth: &[usize], classes: usize) -> Result<(f64, f64)> {
    let per_class = class_scores(pred, truth, classes)?;
    let correct = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    // Pooled TP / (TP + (FP + FN) / 2); each error is one FP and one FN.
    let micro = correct as f64 / pred.len() as f64;
    let macro_f1 = per_class.iter().map(|c| c.f1).sum::<f64>() / per_class.len() as f64;
    Ok((micro, macro_f1))
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn check_points(z: &Tensor, labels: &[usize]) -> Result<()> {
    if z.rows() != labels.len() {
        return Err(DftError::Metric(format!(
            "{} points but {} labels",
            z.rows(),
            labels.len()
        )));
    }
    Ok(())
}

/// Intra-class distance ratio `D̄_intra / (D̄_intra + D̄_inter)`, with the
/// means taken over unordered pairs.
pub fn icdr(z: &Tensor, labels: &[usize]) -> Result<f64> {
    check_points(z, labels)?;
    let n = z.rows();
    // Row-wise partial sums, combined in a fixed order for reproducibility.
    let partial: Vec<[f64; 4]> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut acc = [0.0; 4];
            for j in i + 1..n {
                let d = dist(z.row(i), z.row(j));
                let k = if labels[i] == labels[j] { 0 } else { 2 };
                acc[k] += d;
                acc[k + 1] += 1.0;
            }
            acc
        })
        .collect();
    let mut tot = [0.0; 4];
    for p in &partial {
        for (t, v) in tot.iter_mut().zip(p) {
            *t += v;
        }
    }
    if tot[1] == 0.0 {
        return Err(DftError::Metric("icdr: no intra-class pairs".into()));
    }
    if tot[3] == 0.0 {
        return Err(DftError::Metric("icdr: no inter-class pairs".into()));
    }
    let (intra, inter) = (tot[0] / tot[1], tot[2] / tot[3]);
    if intra + inter == 0.0 {
        return Err(DftError::Metric("icdr: all points coincide".into()));
    }
    Ok(intra / (intra + inter))
}

/// Mean silhouette coefficient; members of singleton classes score 0.
pub fn silhouette(z: &Tensor, labels: &[usize]) -> Result<f64> {
    check_points(z, labels)?;
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; classes];
    for &l in labels {
        sizes[l] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(DftError::Metric("silhouette needs at least two classes".into()));
    }
    let n = z.rows();
    let scores: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let own = labels[i];
            if sizes[own] < 2 {
                return 0.0;
            }
            let mut sums = vec![0.0; classes];
            for j in 0..n {
                if j != i {
                    sums[labels[j]] += dist(z.row(i), z.row(j));
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..classes)
                .filter(|&c| c != own && sizes[c] > 0)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m == 0.0 {
                0.0
            } else {
                (b - a) / m
            }
        })
        .collect();
    Ok(scores.iter().sum::<f64>() / n as f64)
}

/// Everything reported for one labelled evaluation graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub icdr: f64,
    pub silhouette: f64,
    pub per_class: Vec<ClassScores>,
}

impl MetricsReport {
    /// Scores predictions `pred` against `truth` and the geometry of the
    /// representations `z`.
    pub fn compute(z: &Tensor, pred: &[usize], truth: &[usize], classes: usize) -> Result<Self> {
        let (micro_f1, macro_f1) = f1_scores(pred, truth, classes)?;
        Ok(MetricsReport {
            micro_f1,
            macro_f1,
            icdr: icdr(z, truth)?,
            silhouette: silhouette(z, truth)?,
            per_class: class_scores(pred, truth, classes)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(rows: &[[f64; 2]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn f1_hand_counts() {
        assert_eq!(f1_scores(&[0, 1, 2], &[0, 1, 2], 3).unwrap(), (1.0, 1.0));
        let (mi, ma) = f1_scores(&[0, 0, 1, 1], &[0, 1, 0, 1], 2).unwrap();
        assert!((mi - 0.5).abs() < 1e-15 && (ma - 0.5).abs() < 1e-15);
        let (mi, ma) = f1_scores(&[0, 0, 0, 0], &[0, 0, 1, 1], 2).unwrap();
        assert!((mi - 0.5).abs() < 1e-15);
        assert!((ma - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn f1_skips_absent_classes() {
        let (_, ma) = f1_scores(&[0, 1], &[0, 1], 5).unwrap();
        assert_eq!(ma, 1.0);
    }

    #[test]
    fn f1_errors() {
        assert!(f1_scores(&[], &[], 2).is_err());
        assert!(f1_scores(&[0], &[0, 1], 2).is_err());
        assert!(f1_scores(&[2], &[0], 2).is_err());
    }

    #[test]
    fn icdr_hand_example() {
        let z = pts(&[[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]]);
        let inter = (2.0 * 101f64.sqrt() + 20.0) / 4.0;
        let expect = 1.0 / (1.0 + inter);
        let got = icdr(&z, &[0, 0, 1, 1]).unwrap();
        assert!((got - expect).abs() < 1e-12);
        assert!((got - 0.0908).abs() < 1e-4);
    }

    #[test]
    fn icdr_coincident_classes_and_degenerate_partitions() {
        let z = pts(&[[1.0, 1.0], [1.0, 1.0], [4.0, 5.0], [4.0, 5.0]]);
        assert_eq!(icdr(&z, &[0, 0, 1, 1]).unwrap(), 0.0);
        assert!(icdr(&z, &[0, 0, 0, 0]).unwrap_err().to_string().contains("inter"));
        assert!(icdr(&z, &[0, 1, 2, 3]).unwrap_err().to_string().contains("intra"));
    }

    #[test]
    fn icdr_equal_means_is_half() {
        let h = 3f64.sqrt() / 2.0;
        let z = pts(&[[0.0, 0.0], [1.0, 0.0], [0.5, h]]);
        assert!((icdr(&z, &[0, 0, 1]).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn icdr_line_hand_value() {
        let z = pts(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]]);
        // intra pairs 3 and 1 (mean 2), inter pairs 1, 2, 2, 1 (mean 1.5).
        let got = icdr(&z, &[0, 1, 1, 0]).unwrap();
        assert!((got - 2.0 / 3.5).abs() < 1e-15);
    }

    #[test]
    fn silhouette_separated_and_swapped() {
        let z = pts(&[[0.0, 0.0], [0.01, 0.0], [10.0, 0.0], [10.0, 0.01]]);
        assert!(silhouette(&z, &[0, 0, 1, 1]).unwrap() > 0.9);
        assert!(silhouette(&z, &[0, 1, 0, 1]).unwrap() < 0.0);
        assert!(silhouette(&z, &[0, 0, 0, 0]).is_err());
    }

    #[test]
    fn silhouette_singletons_score_zero() {
        let z = pts(&[[0.0, 0.0], [0.1, 0.0], [5.0, 0.0]]);
        let s = silhouette(&z, &[0, 0, 1]).unwrap();
        // Points 0 and 1 are near 1, point 2 contributes 0.
        assert!(s > 0.6 && s < 2.0 / 3.0);
    }
}
