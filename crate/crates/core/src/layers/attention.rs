use serde::{Deserialize, Serialize};

use crate::error::{DftError, Result};
use crate::tensor::{Tensor, Var};

/// How the adjacency enters the attention scores.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    /// Softmax over the neighbourhood (plus self) only.
    #[default]
    Neighbors,
    /// Scores multiplied elementwise by the adjacency, then a full-row
    /// softmax. Non-neighbours keep weight `e^0`; kept for comparison.
    Hadamard,
}

/// Row-stochastic attention matrix `softmax(Q Kᵀ / √d)` restricted by `adj`.
pub fn attention_weights<'t>(
    q: Var<'t>,
    k: Var<'t>,
    adj: &Tensor,
    mode: AttentionMode,
) -> Result<Var<'t>> {
    let [n, d] = q.shape();
    if k.shape() != q.shape() {
        return Err(DftError::Shape {
            op: "sparse_attention",
            lhs: q.shape(),
            rhs: k.shape(),
        });
    }
    if adj.shape() != [n, n] {
        return Err(DftError::Shape {
            op: "sparse_attention",
            lhs: adj.shape(),
            rhs: q.shape(),
        });
    }
    if d == 0 {
        return Err(DftError::contract("sparse_attention needs a positive width"));
    }
    let tape = q.tape();
    let scores = q.matmul(k.t())?.scale(1.0 / (d as f64).sqrt());
    match mode {
        AttentionMode::Neighbors => {
            let mut mask = adj.clone();
            for i in 0..n {
                mask.set(i, i, 1.0);
            }
            scores.masked_softmax(&mask)
        }
        AttentionMode::Hadamard => Ok(scores.mul(tape.constant(adj.clone()))?.softmax()),
    }
}

/// Attention-weighted sum of the rows of `v`.
pub fn sparse_attention<'t>(
    q: Var<'t>,
    k: Var<'t>,
    v: Var<'t>,
    adj: &Tensor,
    mode: AttentionMode,
) -> Result<Var<'t>> {
    if v.shape()[0] != q.shape()[0] {
        return Err(DftError::Shape {
            op: "sparse_attention",
            lhs: q.shape(),
            rhs: v.shape(),
        });
    }
    attention_weights(q, k, adj, mode)?.matmul(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_queries_average_values() {
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = Tensor::random_normal(4, 3, &mut rng);
        let zero = tape.constant(Tensor::zeros(4, 3));
        let out = sparse_attention(zero, zero, tape.constant(v.clone()), &Tensor::full(4, 4, 1.0), AttentionMode::Neighbors)
            .unwrap();
        for c in 0..3 {
            let mean = (0..4).map(|r| v.get(r, c)).sum::<f64>() / 4.0;
            for r in 0..4 {
                assert!((out.value().get(r, c) - mean).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn identity_mask_returns_values() {
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = tape.constant(Tensor::random_normal(5, 2, &mut rng));
        let v = Tensor::random_normal(5, 2, &mut rng);
        let out = sparse_attention(q, q, tape.constant(v.clone()), &Tensor::identity(5), AttentionMode::Neighbors)
            .unwrap();
        assert_eq!(*out.value(), v);
    }

    #[test]
    fn isolated_row_attends_to_itself() {
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = tape.constant(Tensor::random_normal(3, 2, &mut rng));
        let w = attention_weights(q, q, &Tensor::zeros(3, 3), AttentionMode::Neighbors).unwrap();
        assert_eq!(*w.value(), Tensor::identity(3));
    }

    #[test]
    fn hadamard_mode_leaks_to_non_neighbours() {
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let q = tape.constant(Tensor::random_normal(3, 2, &mut rng));
        let w = attention_weights(q, q, &Tensor::identity(3), AttentionMode::Hadamard).unwrap();
        assert!(w.value().get(0, 1) > 0.0);
    }
}
