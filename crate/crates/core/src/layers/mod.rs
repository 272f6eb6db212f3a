//! Network building blocks: decorrelated propagation, sparse attention
//! transformer layers and plain graph convolutions.

mod attention;
mod decorr;
mod transformer;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{DftError, Result};
use crate::params::{Binding, BnUpdate, ParamGroup, ParamId, ParamStore};
use crate::tensor::{Tensor, Var, BN_EPS};

pub use attention::{attention_weights, sparse_attention, AttentionMode};
pub use decorr::{decorr_gradient, decorr_stack, decorr_stack_from, DecorrConfig};
pub use transformer::{transformer_layer, TransformerLayerParams};

/// Momentum of the batch-norm running statistics.
pub const BN_MOMENTUM: f64 = 0.1;

/// State threaded through one forward pass.
pub struct ForwardCtx<'a, 't> {
    pub binding: &'a Binding<'t>,
    pub train: bool,
    pub dropout: f64,
    pub attention: AttentionMode,
    pub rng: &'a mut dyn RngCore,
    /// Running-statistics updates collected in training mode; the caller
    /// applies them once the pass succeeds.
    pub bn_updates: Vec<BnUpdate>,
}

impl<'a, 't> ForwardCtx<'a, 't> {
    pub fn new(binding: &'a Binding<'t>, train: bool, rng: &'a mut dyn RngCore) -> Self {
        ForwardCtx {
            binding,
            train,
            dropout: 0.0,
            attention: AttentionMode::Neighbors,
            rng,
            bn_updates: Vec::new(),
        }
    }

    pub fn var(&self, id: ParamId) -> Var<'t> {
        self.binding.var(id)
    }
}

/// Fully connected layer `x W + b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Dense {
    /// Glorot-uniform weights and zero bias.
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Dense {
        let weight = store.add(
            format!("{name}.weight"),
            group,
            Tensor::glorot_uniform(fan_in, fan_out, rng),
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), group, Tensor::zeros(1, fan_out)));
        Dense {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward<'t>(&self, x: Var<'t>, binding: &Binding<'t>) -> Result<Var<'t>> {
        let y = x.matmul(binding.var(self.weight))?;
        match self.bias {
            Some(b) => y.add(binding.var(b)),
            None => Ok(y),
        }
    }
}

/// Per-feature batch normalisation with learnable scale and shift.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn init(store: &mut ParamStore, name: &str, group: ParamGroup, width: usize) -> BatchNorm {
        BatchNorm {
            gamma: store.add(format!("{name}.gamma"), group, Tensor::full(1, width, 1.0)),
            beta: store.add(format!("{name}.beta"), group, Tensor::zeros(1, width)),
            running_mean: store.add(
                format!("{name}.running_mean"),
                ParamGroup::Buffer,
                Tensor::zeros(1, width),
            ),
            running_var: store.add(
                format!("{name}.running_var"),
                ParamGroup::Buffer,
                Tensor::full(1, width, 1.0),
            ),
        }
    }

    /// Batch statistics in training mode, running statistics otherwise.
    pub fn forward<'t>(&self, x: Var<'t>, ctx: &mut ForwardCtx<'_, 't>) -> Result<Var<'t>> {
        let normed = if ctx.train {
            let (y, stats) = x.batch_norm();
            ctx.bn_updates.push(BnUpdate {
                running_mean: self.running_mean,
                running_var: self.running_var,
                momentum: BN_MOMENTUM,
                stats,
            });
            y
        } else {
            let tape = x.tape();
            let mean = ctx.var(self.running_mean).value();
            let inv_std = ctx
                .var(self.running_var)
                .value()
                .map(|v| 1.0 / (v + BN_EPS).sqrt());
            x.sub(tape.constant_shared(mean))?
                .mul(tape.constant(inv_std))?
        };
        normed.mul(ctx.var(self.gamma))?.add(ctx.var(self.beta))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

/// `σ(a_norm · h · w)`.
pub fn gcn_layer<'t>(h: Var<'t>, a_norm: Var<'t>, w: Var<'t>, act: Activation) -> Result<Var<'t>> {
    let [n, _] = h.shape();
    if a_norm.shape() != [n, n] {
        return Err(DftError::Shape {
            op: "gcn_layer",
            lhs: a_norm.shape(),
            rhs: h.shape(),
        });
    }
    let out = a_norm.matmul(h.matmul(w)?)?;
    Ok(match act {
        Activation::Relu => out.relu(),
        Activation::Identity => out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gcn_identity_case() {
        let tape = Tape::new();
        let h = Tensor::from_rows(&[vec![1.0, -2.0], vec![3.0, 4.0]]).unwrap();
        let out = gcn_layer(
            tape.constant(h.clone()),
            tape.constant(Tensor::identity(2)),
            tape.constant(Tensor::identity(2)),
            Activation::Identity,
        )
        .unwrap();
        assert_eq!(*out.value(), h);
    }

    #[test]
    fn gcn_single_edge_averages() {
        let tape = Tape::new();
        let a = Tensor::full(2, 2, 0.5);
        let out = gcn_layer(
            tape.constant(Tensor::identity(2)),
            tape.constant(a.clone()),
            tape.constant(Tensor::identity(2)),
            Activation::Identity,
        )
        .unwrap();
        assert_eq!(*out.value(), a);
    }

    #[test]
    fn gcn_relu_clamps() {
        let tape = Tape::new();
        let h = Tensor::from_rows(&[vec![-1.0, 2.0]]).unwrap();
        let out = gcn_layer(
            tape.constant(h),
            tape.constant(Tensor::identity(1)),
            tape.constant(Tensor::identity(2)),
            Activation::Relu,
        )
        .unwrap();
        assert_eq!(out.value().data(), &[0.0, 2.0]);
    }

    #[test]
    fn batch_norm_train_then_eval() {
        let mut store = ParamStore::new();
        let bn = BatchNorm::init(&mut store, "bn", ParamGroup::Feat, 2);
        let x = Tensor::from_rows(&[vec![1.0, 10.0], vec![3.0, 10.0]]).unwrap();
        let tape = Tape::new();
        let binding = store.bind(&tape, &[ParamGroup::Feat]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ctx = ForwardCtx::new(&binding, true, &mut rng);
        let y = bn.forward(tape.constant(x.clone()), &mut ctx).unwrap();
        assert!((y.value().get(0, 0) + 1.0).abs() < 1e-6);
        assert_eq!(y.value().get(0, 1), 0.0);
        let updates = std::mem::take(&mut ctx.bn_updates);
        for u in &updates {
            u.apply(&mut store);
        }
        assert!((store.value(bn.running_mean).get(0, 0) - 0.2).abs() < 1e-15);
        // unbiased batch variance of [1, 3] is 2
        assert!((store.value(bn.running_var).get(0, 0) - (0.9 + 0.2)).abs() < 1e-15);

        let tape = Tape::new();
        let binding = store.bind(&tape, &[]);
        let mut ctx = ForwardCtx::new(&binding, false, &mut rng);
        let y = bn.forward(tape.constant(x), &mut ctx).unwrap();
        let expect = (1.0 - 0.2) / (1.1f64 + BN_EPS).sqrt();
        assert!((y.value().get(0, 0) - expect).abs() < 1e-12);
        assert!(ctx.bn_updates.is_empty());
    }
}
