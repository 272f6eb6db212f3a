use std::sync::Arc;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::eigen::symmetric_eigen;
use super::ppmi::{ppmi_matrix, ppmi_operator};
use super::Graph;
use crate::error::{DftError, Result};
use crate::tensor::Tensor;

/// Eigenvalues below this are treated as zero (trivial eigenvectors).
const ZERO_EIGENVALUE: f64 = 1e-8;

/// Random-walk sampling parameters for the PPMI operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpmiConfig {
    pub walk_len: usize,
    pub walks_per_node: usize,
    pub window: usize,
}

impl Default for PpmiConfig {
    fn default() -> Self {
        PpmiConfig {
            walk_len: 40,
            walks_per_node: 10,
            window: 5,
        }
    }
}

impl PpmiConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.walk_len < self.window {
            return Err(DftError::Config(format!(
                "ppmi needs walk_len >= window >= 1, got walk_len={} window={}",
                self.walk_len, self.window
            )));
        }
        Ok(())
    }
}

/// `D^{-1/2} M D^{-1/2}` with `D` the row sums of `m`. Rows summing to zero
/// are left at zero.
pub(crate) fn symmetric_normalize(m: &Tensor) -> Tensor {
    let n = m.rows();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = m.row(i).iter().sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mut out = Tensor::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, inv_sqrt[i] * m.get(i, j) * inv_sqrt[j]);
        }
    }
    out
}

/// `A + I` as a dense matrix.
pub fn adjacency_with_self_loops(g: &Graph) -> Tensor {
    let mut a = g.adjacency();
    for i in 0..g.num_nodes() {
        a.set(i, i, 1.0);
    }
    a
}

/// `(D+I)^{-1/2} (A+I) (D+I)^{-1/2}`.
pub fn normalized_adjacency(g: &Graph) -> Tensor {
    let deg = g.degrees();
    let inv_sqrt: Vec<f64> = deg.iter().map(|&d| 1.0 / ((d + 1) as f64).sqrt()).collect();
    let n = g.num_nodes();
    let mut a = Tensor::zeros(n, n);
    for i in 0..n {
        a.set(i, i, inv_sqrt[i] * inv_sqrt[i]);
    }
    for (u, v) in g.edges() {
        let w = inv_sqrt[u] * inv_sqrt[v];
        a.set(u, v, w);
        a.set(v, u, w);
    }
    a
}

/// `I - M`.
fn identity_minus(m: &Tensor) -> Tensor {
    let mut l = m.scale(-1.0);
    for i in 0..m.rows() {
        let v = l.get(i, i) + 1.0;
        l.set(i, i, v);
    }
    l
}

/// Attention mask: 1 on edges and on the diagonal.
pub fn attention_mask(g: &Graph) -> Tensor {
    adjacency_with_self_loops(g)
}

/// Eigenvectors of `laplacian` for the `k` smallest nonzero eigenvalues.
///
/// Eigenvalues below `1e-8` are skipped; more than one of them (a
/// disconnected graph) is logged. Each column has unit norm and its first
/// nonzero entry is positive.
pub fn positional_encoding_from_laplacian(laplacian: &Tensor, k: usize) -> Result<Tensor> {
    let n = laplacian.rows();
    if k >= n.max(1) && k > 0 {
        return Err(DftError::contract(format!(
            "positional encoding of dimension {k} needs more than {n} nodes"
        )));
    }
    let eig = symmetric_eigen(laplacian)?;
    let skip = eig.values.iter().take_while(|&&v| v < ZERO_EIGENVALUE).count();
    if skip > 1 {
        warn!("laplacian has {skip} zero eigenvalues (disconnected graph); skipping all of them");
    }
    if skip + k > n {
        return Err(DftError::contract(format!(
            "only {} nontrivial eigenvectors available, {k} requested",
            n - skip
        )));
    }
    let mut pe = Tensor::zeros(n, k);
    for j in 0..k {
        let src = skip + j;
        let col: Vec<f64> = (0..n).map(|r| eig.vectors.get(r, src)).collect();
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        let sign = col
            .iter()
            .find(|v| v.abs() > 1e-10)
            .map_or(1.0, |v| v.signum());
        for (r, v) in col.iter().enumerate() {
            pe.set(r, j, sign * v / norm);
        }
    }
    Ok(pe)
}

/// Positional encodings of `g` from `I - normalized_adjacency(g)`.
pub fn laplacian_positional_encoding(g: &Graph, k: usize) -> Result<Tensor> {
    positional_encoding_from_laplacian(&identity_minus(&normalized_adjacency(g)), k)
}

/// Every matrix the model needs for one graph, computed once.
#[derive(Clone, Debug)]
pub struct GraphOperators {
    /// Symmetrically normalised adjacency with self-loops.
    pub a_norm: Arc<Tensor>,
    /// `I - a_norm`.
    pub laplacian: Arc<Tensor>,
    /// Normalised PPMI propagation operator.
    pub ppmi: Arc<Tensor>,
    /// `I - ppmi`.
    pub ppmi_laplacian: Arc<Tensor>,
    /// Laplacian positional encodings, `n × k`.
    pub pos_enc: Arc<Tensor>,
    /// 0/1 neighbourhood mask with self-loops.
    pub mask: Arc<Tensor>,
}

impl GraphOperators {
    pub fn new<R: Rng + ?Sized>(
        g: &Graph,
        ppmi_cfg: &PpmiConfig,
        pe_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let a_norm = normalized_adjacency(g);
        let laplacian = identity_minus(&a_norm);
        let ppmi = ppmi_operator(&ppmi_matrix(g, ppmi_cfg, rng)?)?;
        let ppmi_laplacian = identity_minus(&ppmi);
        let pos_enc = if pe_dim == 0 {
            Tensor::zeros(g.num_nodes(), 0)
        } else {
            positional_encoding_from_laplacian(&laplacian, pe_dim)?
        };
        Ok(GraphOperators {
            a_norm: Arc::new(a_norm),
            laplacian: Arc::new(laplacian),
            ppmi: Arc::new(ppmi),
            ppmi_laplacian: Arc::new(ppmi_laplacian),
            pos_enc: Arc::new(pos_enc),
            mask: Arc::new(attention_mask(g)),
        })
    }

    /// Recomputes the adjacency-derived matrices for a perturbed edge set
    /// while keeping the PPMI operator and positional encodings.
    pub fn with_structure_of(&self, g: &Graph) -> GraphOperators {
        let a_norm = normalized_adjacency(g);
        let laplacian = identity_minus(&a_norm);
        GraphOperators {
            a_norm: Arc::new(a_norm),
            laplacian: Arc::new(laplacian),
            ppmi: Arc::clone(&self.ppmi),
            ppmi_laplacian: Arc::clone(&self.ppmi_laplacian),
            pos_enc: Arc::clone(&self.pos_enc),
            mask: Arc::new(attention_mask(g)),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.a_norm.rows()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn graph(n: usize, edges: &[(usize, usize)]) -> Graph {
        Graph::new(n, edges.iter().copied(), Tensor::zeros(n, 1)).unwrap()
    }

    #[test]
    fn isolated_node() {
        let g = graph(1, &[]);
        let a = normalized_adjacency(&g);
        assert_eq!(a, Tensor::full(1, 1, 1.0));
        assert_eq!(identity_minus(&a), Tensor::zeros(1, 1));
    }

    #[test]
    fn single_edge_normalized_adjacency() {
        let a = normalized_adjacency(&graph(2, &[(0, 1)]));
        for &v in a.data() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn laplacian_annihilates_sqrt_degree_vector() {
        let g = graph(6, &[(0, 1), (1, 2), (2, 0), (3, 4), (0, 5)]);
        let l = identity_minus(&normalized_adjacency(&g));
        let s = Tensor::column(g.degrees().iter().map(|&d| ((d + 1) as f64).sqrt()).collect());
        let ls = l.matmul(&s).unwrap();
        assert!(ls.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn positional_encoding_columns_are_unit_eigenvectors() {
        let g = graph(7, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 0), (1, 4)]);
        let l = identity_minus(&normalized_adjacency(&g));
        let pe = positional_encoding_from_laplacian(&l, 3).unwrap();
        let eig = symmetric_eigen(&l).unwrap();
        for j in 0..3 {
            let col = Tensor::column((0..7).map(|r| pe.get(r, j)).collect());
            assert!((col.sq_norm().sqrt() - 1.0).abs() < 1e-10);
            let residual = l.matmul(&col).unwrap().max_abs_diff(&col.scale(eig.values[j + 1]));
            assert!(residual < 1e-8);
            let first = col.data().iter().find(|v| v.abs() > 1e-10).unwrap();
            assert!(*first > 0.0);
        }
    }

    #[test]
    fn positional_encoding_needs_k_below_n() {
        let g = graph(3, &[(0, 1), (1, 2)]);
        let l = identity_minus(&normalized_adjacency(&g));
        assert!(positional_encoding_from_laplacian(&l, 3).is_err());
    }

    #[test]
    fn dropped_structure_keeps_ppmi() {
        let g = graph(5, &[(0, 1), (1, 2), (2, 3), (3, 4)]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ops = GraphOperators::new(&g, &PpmiConfig::default(), 2, &mut rng).unwrap();
        let thin = graph(5, &[(0, 1)]);
        let ops2 = ops.with_structure_of(&thin);
        assert!(Arc::ptr_eq(&ops.ppmi, &ops2.ppmi));
        assert_eq!(ops2.a_norm.get(2, 3), 0.0);
    }
}
