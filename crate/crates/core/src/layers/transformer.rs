use rand::Rng;

use super::{sparse_attention, BatchNorm, Dense, ForwardCtx};
use crate::error::{DftError, Result};
use crate::params::{ParamGroup, ParamId, ParamStore};
use crate::tensor::{Tensor, Var};

/// Parameters of one graph transformer layer. The same instance serves both
/// domains.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformerLayerParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub ffn1: Dense,
    pub ffn2: Dense,
    pub bn1: BatchNorm,
    pub bn2: BatchNorm,
    /// Projection of the positional encodings; present only on layers that
    /// inject them.
    pub pe_dense: Option<Dense>,
}

impl TransformerLayerParams {
    /// `pe_dim = Some(k)` creates the `k → width` positional projection.
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        pe_dim: Option<usize>,
        rng: &mut R,
    ) -> Self {
        let g = ParamGroup::Feat;
        let mut square = |suffix: &str, rng: &mut R| {
            store.add(
                format!("{name}.{suffix}"),
                g,
                Tensor::glorot_uniform(width, width, rng),
            )
        };
        let wq = square("wq", rng);
        let wk = square("wk", rng);
        let wv = square("wv", rng);
        TransformerLayerParams {
            wq,
            wk,
            wv,
            ffn1: Dense::init(store, &format!("{name}.ffn1"), g, width, width, true, rng),
            ffn2: Dense::init(store, &format!("{name}.ffn2"), g, width, width, true, rng),
            bn1: BatchNorm::init(store, &format!("{name}.bn1"), g, width),
            bn2: BatchNorm::init(store, &format!("{name}.bn2"), g, width),
            pe_dense: pe_dim
                .filter(|&k| k > 0)
                .map(|k| Dense::init(store, &format!("{name}.pe"), g, k, width, true, rng)),
        }
    }
}

/// One transformer layer:
///
/// ```text
/// H† = H + Dense(φ)              (first layer only)
/// H‡ = BN(H† + SA(H†))
/// H≀ = ReLU(Dense(H‡))
/// Z  = BN(H‡ + Dense(H≀))
/// ```
///
/// followed by dropout at the context's rate.
pub fn transformer_layer<'t>(
    h: Var<'t>,
    pos_enc: Var<'t>,
    adj: &Tensor,
    params: &TransformerLayerParams,
    first_layer: bool,
    ctx: &mut ForwardCtx<'_, 't>,
) -> Result<Var<'t>> {
    let mut h_dag = h;
    if first_layer {
        if let Some(pe) = &params.pe_dense {
            if pos_enc.shape()[0] != h.shape()[0] {
                return Err(DftError::Shape {
                    op: "transformer_layer",
                    lhs: h.shape(),
                    rhs: pos_enc.shape(),
                });
            }
            h_dag = h.add(pe.forward(pos_enc, ctx.binding)?)?;
        }
    }
    let q = h_dag.matmul(ctx.var(params.wq))?;
    let k = h_dag.matmul(ctx.var(params.wk))?;
    let v = h_dag.matmul(ctx.var(params.wv))?;
    let sa = sparse_attention(q, k, v, adj, ctx.attention)?;
    let h_ddag = params.bn1.forward(h_dag.add(sa)?, ctx)?;
    let h_wr = params.ffn1.forward(h_ddag, ctx.binding)?.relu();
    let z = params
        .bn2
        .forward(h_ddag.add(params.ffn2.forward(h_wr, ctx.binding)?)?, ctx)?;
    Ok(z.dropout(ctx.dropout, ctx.train, &mut *ctx.rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(width: usize, pe: usize, seed: u64) -> (ParamStore, TransformerLayerParams) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = TransformerLayerParams::init(&mut store, "t0", width, Some(pe), &mut rng);
        (store, p)
    }

    #[test]
    fn output_shape_matches_input() {
        for (n, w) in [(1, 1), (3, 4), (7, 5)] {
            let (store, p) = setup(w, 1, 0);
            let tape = Tape::new();
            let bind = store.bind(&tape, &[ParamGroup::Feat]);
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let h = tape.constant(Tensor::random_normal(n, w, &mut rng));
            let pe = tape.constant(Tensor::random_normal(n, 1, &mut rng));
            let mut ctx = ForwardCtx::new(&bind, true, &mut rng);
            ctx.dropout = 0.5;
            let z = transformer_layer(h, pe, &Tensor::full(n, n, 1.0), &p, true, &mut ctx).unwrap();
            assert_eq!(z.shape(), [n, w]);
        }
    }

    #[test]
    fn zeroed_blocks_reduce_to_identity_on_h_dagger() {
        let (mut store, p) = setup(3, 2, 2);
        for id in [p.wv, p.ffn2.weight, p.ffn2.bias.unwrap()] {
            let shape = store.value(id).shape();
            *store.value_mut(id) = Tensor::zeros(shape[0], shape[1]);
        }
        let tape = Tape::new();
        let bind = store.bind(&tape, &[]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = Tensor::random_normal(6, 3, &mut rng);
        let pe = Tensor::random_normal(6, 2, &mut rng);
        let mut ctx = ForwardCtx::new(&bind, false, &mut rng);
        let z = transformer_layer(
            tape.constant(h.clone()),
            tape.constant(pe.clone()),
            &Tensor::identity(6),
            &p,
            true,
            &mut ctx,
        )
        .unwrap();
        let pe_dense = p.pe_dense.unwrap();
        let mut h_dag = h.clone();
        h_dag.add_assign(&pe.matmul(store.value(pe_dense.weight)).unwrap());
        assert!(z.value().max_abs_diff(&h_dag) < 1e-7);
    }

    #[test]
    fn positional_encoding_only_on_first_layer() {
        let (store, p) = setup(2, 1, 4);
        let tape = Tape::new();
        let bind = store.bind(&tape, &[]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = tape.constant(Tensor::random_normal(4, 2, &mut rng));
        let pe_a = tape.constant(Tensor::random_normal(4, 1, &mut rng));
        let pe_b = tape.constant(Tensor::random_normal(4, 1, &mut rng));
        let adj = Tensor::full(4, 4, 1.0);
        let mut ctx = ForwardCtx::new(&bind, false, &mut rng);
        let za = transformer_layer(h, pe_a, &adj, &p, false, &mut ctx).unwrap();
        let zb = transformer_layer(h, pe_b, &adj, &p, false, &mut ctx).unwrap();
        assert_eq!(*za.value(), *zb.value());
        let zc = transformer_layer(h, pe_b, &adj, &p, true, &mut ctx).unwrap();
        assert!(za.value().max_abs_diff(&zc.value()) > 0.0);
    }
}
