//! Positive pointwise mutual information of random-walk co-occurrences.

use rand::Rng;

use super::operators::{symmetric_normalize, PpmiConfig};
use super::Graph;
use crate::error::{DftError, Result};
use crate::tensor::Tensor;

/// Windowed co-occurrence counts from uniform random walks.
///
/// Every node starts `walks_per_node` walks of `walk_len` nodes. Two positions
/// at distance `1..=window` along a walk add one count in each direction.
/// A node without neighbours repeats itself.
pub fn cooccurrence_counts<R: Rng + ?Sized>(
    g: &Graph,
    cfg: &PpmiConfig,
    rng: &mut R,
) -> Result<Tensor> {
    cfg.validate()?;
    let n = g.num_nodes();
    let adj = g.neighbors();
    let mut counts = Tensor::zeros(n, n);
    let mut walk = Vec::with_capacity(cfg.walk_len);
    for start in 0..n {
        for _ in 0..cfg.walks_per_node {
            walk.clear();
            walk.push(start);
            let mut cur = start;
            for _ in 1..cfg.walk_len {
                let nb = &adj[cur];
                if !nb.is_empty() {
                    cur = nb[rng.random_range(0..nb.len())];
                }
                walk.push(cur);
            }
            for i in 0..walk.len() {
                for j in i + 1..walk.len().min(i + cfg.window + 1) {
                    let (a, b) = (walk[i], walk[j]);
                    let ab = counts.get(a, b) + 1.0;
                    counts.set(a, b, ab);
                    let ba = counts.get(b, a) + 1.0;
                    counts.set(b, a, ba);
                }
            }
        }
    }
    Ok(counts)
}

/// `max(0, ln(F_ij · ΣF / (Σ_a F_ia · Σ_b F_bj)))`, zero where `F_ij = 0`.
pub fn ppmi_from_counts(counts: &Tensor) -> Tensor {
    let n = counts.rows();
    let total = counts.sum();
    let mut out = Tensor::zeros(n, counts.cols());
    if total <= 0.0 {
        return out;
    }
    let row: Vec<f64> = (0..n).map(|i| counts.row(i).iter().sum()).collect();
    let mut col = vec![0.0; counts.cols()];
    for i in 0..n {
        for (c, v) in col.iter_mut().zip(counts.row(i)) {
            *c += v;
        }
    }
    for i in 0..n {
        for j in 0..counts.cols() {
            let f = counts.get(i, j);
            if f > 0.0 {
                let pmi = (f * total / (row[i] * col[j])).ln();
                out.set(i, j, pmi.max(0.0));
            }
        }
    }
    out
}

/// Raw PPMI matrix of `g`; all zeros for an edgeless graph.
pub fn ppmi_matrix<R: Rng + ?Sized>(g: &Graph, cfg: &PpmiConfig, rng: &mut R) -> Result<Tensor> {
    if g.num_edges() == 0 {
        cfg.validate()?;
        return Ok(Tensor::zeros(g.num_nodes(), g.num_nodes()));
    }
    Ok(ppmi_from_counts(&cooccurrence_counts(g, cfg, rng)?))
}

/// Turns a raw PPMI matrix into a propagation operator: symmetrise, add the
/// identity, then normalise symmetrically by the weighted degree, exactly as
/// the adjacency is normalised.
pub fn ppmi_operator(ppmi: &Tensor) -> Result<Tensor> {
    if ppmi.rows() != ppmi.cols() {
        return Err(DftError::Shape {
            op: "ppmi_operator",
            lhs: ppmi.shape(),
            rhs: ppmi.shape(),
        });
    }
    let pt = ppmi.transpose();
    let mut sym = ppmi.zip_map(&pt, |a, b| 0.5 * (a + b));
    for i in 0..sym.rows() {
        let v = sym.get(i, i) + 1.0;
        sym.set(i, i, v);
    }
    Ok(symmetric_normalize(&sym))
}
