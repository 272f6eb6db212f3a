//! Expected feature correlation `E‖H Hᵀ‖_F²` after `k` propagation steps
//! `H = Ãᵏ X` with standard-normal `X`, in closed form and by sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DftError, Result};
use crate::graph::{adjacency_with_self_loops, normalized_adjacency, Graph};
use crate::tensor::Tensor;

/// Propagation operator used by the correlation analysis.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationOperator {
    /// `A + I`.
    #[default]
    Unnormalized,
    /// `(D+I)^{-1/2} (A+I) (D+I)^{-1/2}`.
    Normalized,
}

pub fn correlation_operator(g: &Graph, op: CorrelationOperator) -> Tensor {
    match op {
        CorrelationOperator::Unnormalized => adjacency_with_self_loops(g),
        CorrelationOperator::Normalized => normalized_adjacency(g),
    }
}

fn check_square(a: &Tensor, op: &'static str) -> Result<()> {
    if a.rows() != a.cols() {
        return Err(DftError::Shape {
            op,
            lhs: a.shape(),
            rhs: a.shape(),
        });
    }
    Ok(())
}

fn power(a: &Tensor, k: usize) -> Tensor {
    let mut out = Tensor::identity(a.rows());
    for _ in 0..k {
        out = a.matmul(&out).expect("square");
    }
    out
}

/// `D·((D+1)·Σ_ij B_ij² + (tr B)²)` with `B = Ã^{2k}`.
pub fn expected_correlation(a_tilde: &Tensor, k: usize, d: usize) -> Result<f64> {
    check_square(a_tilde, "expected_correlation")?;
    let b = power(a_tilde, 2 * k);
    let d = d as f64;
    Ok(d * ((d + 1.0) * b.sq_norm() + b.trace().powi(2)))
}

fn gram_sq_norm(h: &Tensor) -> f64 {
    h.matmul_t(h).expect("same width").sq_norm()
}

/// Running mean and standard error.
#[derive(Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let delta = x - self.mean;
        self.mean += delta / self.n;
        self.m2 += delta * (x - self.mean);
    }

    fn stderr(&self) -> f64 {
        if self.n < 2.0 {
            return 0.0;
        }
        (self.m2 / (self.n - 1.0) / self.n).sqrt()
    }
}

const MIN_SAMPLES: usize = 1000;

fn check_samples(samples: usize) -> Result<()> {
    if samples < MIN_SAMPLES {
        return Err(DftError::contract(format!(
            "need at least {MIN_SAMPLES} samples, got {samples}"
        )));
    }
    Ok(())
}

/// Sample mean and standard error of `‖Ãᵏ X (Ãᵏ X)ᵀ‖_F²` over fresh
/// `N × D` standard-normal `X`.
pub fn monte_carlo_correlation<R: Rng + ?Sized>(
    a_tilde: &Tensor,
    k: usize,
    d: usize,
    samples: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    check_square(a_tilde, "monte_carlo_correlation")?;
    check_samples(samples)?;
    let m = power(a_tilde, k);
    let mut acc = Moments::default();
    for _ in 0..samples {
        let x = Tensor::random_normal(a_tilde.rows(), d, rng);
        acc.push(gram_sq_norm(&m.matmul(&x)?));
    }
    Ok((acc.mean, acc.stderr()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub depth: usize,
    pub mean: f64,
    pub stderr: f64,
}

/// Sampled `E‖H⁽ᵏ⁾H⁽ᵏ⁾ᵀ‖_F²` for `k = 0..=depth_max`, where
/// `H⁽ᵏ⁾ = Ã H⁽ᵏ⁻¹⁾ W_k` with a fresh Glorot-uniform `D × D` weight per
/// layer and sample, and `H⁽⁰⁾ = X`.
pub fn glorot_correlation_curve<R: Rng + ?Sized>(
    a_tilde: &Tensor,
    depth_max: usize,
    d: usize,
    samples: usize,
    rng: &mut R,
) -> Result<Vec<CurvePoint>> {
    check_square(a_tilde, "glorot_correlation_curve")?;
    if samples == 0 {
        return Err(DftError::contract("need at least one sample"));
    }
    let mut acc: Vec<Moments> = (0..=depth_max).map(|_| Moments::default()).collect();
    for _ in 0..samples {
        let mut h = Tensor::random_normal(a_tilde.rows(), d, rng);
        acc[0].push(gram_sq_norm(&h));
        for slot in acc.iter_mut().skip(1) {
            let w = Tensor::glorot_uniform(d, d, rng);
            h = a_tilde.matmul(&h)?.matmul(&w)?;
            slot.push(gram_sq_norm(&h));
        }
    }
    Ok(acc
        .iter()
        .enumerate()
        .map(|(depth, m)| CurvePoint {
            depth,
            mean: m.mean,
            stderr: m.stderr(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn path3() -> Tensor {
        Tensor::from_rows(&[
            vec![1.0, 1.0, 0.0],
            vec![1.0, 1.0, 1.0],
            vec![0.0, 1.0, 1.0],
        ])
        .unwrap()
    }

    #[test]
    fn closed_form_at_zero_depth() {
        assert_eq!(expected_correlation(&path3(), 0, 2).unwrap(), 36.0);
    }

    #[test]
    fn fourth_moment_of_a_standard_normal() {
        let a = Tensor::identity(1);
        let (mean, se) =
            monte_carlo_correlation(&a, 0, 1, 100_000, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!((mean - 3.0).abs() < 3.0 * se, "{mean} ± {se}");
    }

    #[test]
    fn path_graph_matches_sampling() {
        let exact = expected_correlation(&path3(), 1, 2).unwrap();
        let (mean, se) =
            monte_carlo_correlation(&path3(), 1, 2, 100_000, &mut ChaCha8Rng::seed_from_u64(2))
                .unwrap();
        assert!((mean - exact).abs() < 3.0 * se, "{exact} vs {mean} ± {se}");
    }

    #[test]
    fn stderr_shrinks_with_root_samples() {
        let a = path3();
        let (_, s1) = monte_carlo_correlation(&a, 1, 2, 10_000, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let (_, s4) = monte_carlo_correlation(&a, 1, 2, 40_000, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let r = s1 / s4;
        assert!((r - 2.0).abs() < 0.4, "ratio {r}");
    }

    #[test]
    fn too_few_samples() {
        assert!(monte_carlo_correlation(&path3(), 1, 2, 10, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn curve_depth_zero_and_determinism() {
        let a = path3();
        let c1 = glorot_correlation_curve(&a, 3, 2, 20_000, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let c2 = glorot_correlation_curve(&a, 3, 2, 20_000, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(c1, c2);
        assert_eq!(c1.len(), 4);
        let exact = expected_correlation(&a, 0, 2).unwrap();
        assert!((c1[0].mean - exact).abs() < 3.0 * c1[0].stderr);
    }
}
