use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{DftError, Result};
use crate::tensor::Tensor;

/// Parameters of a stochastic block model with Gaussian node features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SbmSpec {
    /// Number of nodes per block; block `c` gets label `c`.
    pub blocks: Vec<usize>,
    pub p_in: f64,
    pub p_out: f64,
    /// One feature mean per block, all of the same length.
    pub feat_means: Vec<Vec<f64>>,
    pub feat_std: f64,
}

impl SbmSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.p_out && self.p_out <= self.p_in && self.p_in <= 1.0) {
            return Err(DftError::Config(format!(
                "sbm needs 0 <= p_out <= p_in <= 1, got p_in={} p_out={}",
                self.p_in, self.p_out
            )));
        }
        if self.feat_means.len() != self.blocks.len() {
            return Err(DftError::Config(format!(
                "{} blocks but {} feature means",
                self.blocks.len(),
                self.feat_means.len()
            )));
        }
        let d = self.feat_means.first().map_or(0, Vec::len);
        if self.feat_means.iter().any(|m| m.len() != d) {
            return Err(DftError::Config("feature means differ in length".into()));
        }
        if !(self.feat_std >= 0.0) {
            return Err(DftError::Config(format!(
                "feat_std must be nonnegative, got {}",
                self.feat_std
            )));
        }
        Ok(())
    }
}

/// Samples a labelled graph from `spec`. Bit-reproducible for a fixed RNG
/// state.
pub fn sbm_generate<R: Rng + ?Sized>(spec: &SbmSpec, rng: &mut R) -> Result<Graph> {
    spec.validate()?;
    let labels: Vec<usize> = spec
        .blocks
        .iter()
        .enumerate()
        .flat_map(|(c, &size)| std::iter::repeat_n(c, size))
        .collect();
    let n = labels.len();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if labels[u] == labels[v] {
                spec.p_in
            } else {
                spec.p_out
            };
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let d = spec.feat_means.first().map_or(0, Vec::len);
    let mut features = Tensor::zeros(n, d);
    for (i, &c) in labels.iter().enumerate() {
        for (j, &mu) in spec.feat_means[c].iter().enumerate() {
            let z: f64 = StandardNormal.sample(&mut *rng);
            features.set(i, j, mu + spec.feat_std * z);
        }
    }
    Graph::new(n, edges, features)?.with_labels(labels, spec.blocks.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(p_in: f64, p_out: f64, std: f64) -> SbmSpec {
        SbmSpec {
            blocks: vec![4, 5],
            p_in,
            p_out,
            feat_means: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            feat_std: std,
        }
    }

    #[test]
    fn certain_in_zero_out_gives_two_cliques() {
        let g = sbm_generate(&spec(1.0, 0.0, 1.0), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(g.num_edges(), 6 + 10);
        assert_eq!(g.num_components(), 2);
        for (u, v) in g.edges() {
            assert_eq!(g.labels().unwrap()[u], g.labels().unwrap()[v]);
        }
    }

    #[test]
    fn zero_std_features_equal_class_means() {
        let g = sbm_generate(&spec(0.5, 0.1, 0.0), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for i in 0..4 {
            assert_eq!(g.features().row(i), &[1.0, 0.0]);
        }
        for i in 4..9 {
            assert_eq!(g.features().row(i), &[0.0, 1.0]);
        }
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let a = sbm_generate(&spec(0.5, 0.2, 1.0), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sbm_generate(&spec(0.5, 0.2, 1.0), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_p_out_above_p_in() {
        assert!(spec(0.1, 0.2, 1.0).validate().is_err());
    }
}
