//! kNN check of whether `p(y|x)` agrees across two domains.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DftError, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub k: usize,
    pub agreement: f64,
    /// Agreement after permuting the target labels.
    pub shuffled: f64,
    pub num_classes: usize,
}

/// Majority label among the `k` nearest rows of `x` to `q`. Distance ties
/// go to the lower row index, vote ties to the lower class.
fn knn_vote(q: &[f64], x: &Tensor, y: &[usize], k: usize, classes: usize) -> usize {
    let mut d: Vec<(f64, usize)> = (0..x.rows())
        .map(|i| {
            let s: f64 = q.iter().zip(x.row(i)).map(|(a, b)| (a - b) * (a - b)).sum();
            (s, i)
        })
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < d.len() {
        d.select_nth_unstable_by(k - 1, cmp);
    }
    let mut votes = vec![0usize; classes];
    for &(_, i) in &d[..k] {
        votes[y[i]] += 1;
    }
    let best = *votes.iter().max().expect("classes > 0");
    votes.iter().position(|&v| v == best).expect("max exists")
}

/// Fraction of the pooled rows of `x_s` and `x_t` whose `k`-nearest-neighbour
/// label among the source equals the one among the target.
pub fn covariate_shift_probe(
    x_s: &Tensor,
    y_s: &[usize],
    x_t: &Tensor,
    y_t: &[usize],
    k: usize,
) -> Result<f64> {
    if x_s.rows() != y_s.len() || x_t.rows() != y_t.len() {
        return Err(DftError::Metric("probe: feature and label counts differ".into()));
    }
    if x_s.cols() != x_t.cols() {
        return Err(DftError::Metric(format!(
            "probe: feature widths {} and {} differ",
            x_s.cols(),
            x_t.cols()
        )));
    }
    if k == 0 || k > x_s.rows().min(x_t.rows()) {
        return Err(DftError::Metric(format!(
            "probe: k = {k} must lie in [1, {}]",
            x_s.rows().min(x_t.rows())
        )));
    }
    let classes = y_s.iter().chain(y_t).max().map_or(0, |m| m + 1);
    let n = x_s.rows() + x_t.rows();
    let agree: Vec<bool> = (0..n)
        .into_par_iter()
        .map(|i| {
            let q = if i < x_s.rows() {
                x_s.row(i)
            } else {
                x_t.row(i - x_s.rows())
            };
            knn_vote(q, x_s, y_s, k, classes) == knn_vote(q, x_t, y_t, k, classes)
        })
        .collect();
    Ok(agree.iter().filter(|&&a| a).count() as f64 / n as f64)
}

/// [`covariate_shift_probe`] with the target labels randomly permuted.
pub fn shuffled_probe<R: Rng + ?Sized>(
    x_s: &Tensor,
    y_s: &[usize],
    x_t: &Tensor,
    y_t: &[usize],
    k: usize,
    rng: &mut R,
) -> Result<f64> {
    let mut perm = y_t.to_vec();
    perm.shuffle(rng);
    covariate_shift_probe(x_s, y_s, x_t, &perm, k)
}

impl ProbeReport {
    pub fn compute<R: Rng + ?Sized>(
        x_s: &Tensor,
        y_s: &[usize],
        x_t: &Tensor,
        y_t: &[usize],
        k: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(ProbeReport {
            k,
            agreement: covariate_shift_probe(x_s, y_s, x_t, y_t, k)?,
            shuffled: shuffled_probe(x_s, y_s, x_t, y_t, k, rng)?,
            num_classes: y_s.iter().chain(y_t).max().map_or(0, |m| m + 1),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_domains_agree_everywhere() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::random_normal(50, 3, &mut rng);
        let y: Vec<usize> = (0..50).map(|i| i % 3).collect();
        assert_eq!(covariate_shift_probe(&x, &y, &x, &y, 5).unwrap(), 1.0);
    }

    #[test]
    fn vote_ties_go_to_lower_class() {
        let x = Tensor::from_rows(&[vec![1.0], vec![-1.0]]).unwrap();
        assert_eq!(knn_vote(&[0.0], &x, &[1, 0], 2, 2), 0);
        // Equidistant neighbours: the lower index wins the last slot.
        assert_eq!(knn_vote(&[0.0], &x, &[1, 0], 1, 2), 1);
    }

    #[test]
    fn rejects_bad_k() {
        let x = Tensor::zeros(3, 2);
        assert!(covariate_shift_probe(&x, &[0, 1, 0], &x, &[0, 1, 0], 4).is_err());
        assert!(covariate_shift_probe(&x, &[0, 1, 0], &x, &[0, 1, 0], 0).is_err());
    }
}
