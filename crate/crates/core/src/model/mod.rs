//! The full network: input projection, two propagation branches, attention
//! aggregation, transformer stack, classifier and domain critic.

mod checkpoint;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{DftError, Result};
use crate::graph::{GraphOperators, PpmiConfig};
use crate::layers::{
    decorr_stack, gcn_layer, transformer_layer, Activation, AttentionMode, DecorrConfig, Dense,
    ForwardCtx, TransformerLayerParams,
};
use crate::params::{Binding, BnUpdate, ParamGroup, ParamId, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};

/// Architecture and loss variants.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Dft,
    /// Plain GCN branches instead of decorrelated propagation.
    DftGcn,
    /// No transformer layers; the classifier reads the aggregated branches.
    DftNot,
    /// Transformer attention over all node pairs.
    DftPuret,
    /// MMD alignment instead of the adversarial critic.
    DftMmd,
    /// GCN branches on a source graph whose edges are resampled each epoch.
    DftDropedge,
}

impl Variant {
    pub fn uses_gcn_branches(self) -> bool {
        matches!(self, Variant::DftGcn | Variant::DftDropedge)
    }

    pub fn uses_critic(self) -> bool {
        self != Variant::DftMmd
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticKind {
    /// `D̃ → D̃ → 1` with a ReLU in between.
    #[default]
    Mlp,
    /// A single affine map `D̃ → 1`.
    Linear,
}

/// Batch-norm statistics used outside training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalNorm {
    /// Statistics of the evaluated graph, as each domain is normalised
    /// during training.
    #[default]
    Graph,
    /// Running averages accumulated over both domains during training.
    Running,
}

/// Everything needed to rebuild the parameter layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub in_dim: usize,
    pub num_classes: usize,
    pub hidden: usize,
    pub pe_dim: usize,
    pub num_transformer_layers: usize,
    pub decorr: DecorrConfig,
    pub dropout: f64,
    pub attention: AttentionMode,
    pub variant: Variant,
    pub critic: CriticKind,
    /// Inject positional encodings before every transformer layer rather
    /// than only the first.
    pub pe_every_layer: bool,
    #[serde(default)]
    pub eval_norm: EvalNorm,
    /// Sampling of the PPMI operator the model is run with.
    #[serde(default)]
    pub ppmi: PpmiConfig,
}

impl ModelConfig {
    pub fn new(in_dim: usize, num_classes: usize) -> Self {
        ModelConfig {
            in_dim,
            num_classes,
            hidden: 128,
            pe_dim: 2,
            num_transformer_layers: 4,
            decorr: DecorrConfig::default(),
            dropout: 0.1,
            attention: AttentionMode::Neighbors,
            variant: Variant::Dft,
            critic: CriticKind::Mlp,
            pe_every_layer: false,
            eval_norm: EvalNorm::Graph,
            ppmi: PpmiConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.decorr.validate()?;
        if self.in_dim == 0 || self.hidden == 0 {
            return Err(DftError::Config("input and hidden widths must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(DftError::Config(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(DftError::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    fn transformer_layers(&self) -> usize {
        if self.variant == Variant::DftNot {
            0
        } else {
            self.num_transformer_layers
        }
    }
}

/// Domain critic `f_critic`.
#[derive(Clone, Debug, PartialEq)]
pub struct Critic {
    pub kind: CriticKind,
    pub first: Dense,
    pub second: Option<Dense>,
}

impl Critic {
    fn init<R: Rng + ?Sized>(store: &mut ParamStore, kind: CriticKind, width: usize, rng: &mut R) -> Self {
        let g = ParamGroup::Critic;
        match kind {
            CriticKind::Linear => Critic {
                kind,
                first: Dense::init(store, "critic.l1", g, width, 1, true, rng),
                second: None,
            },
            CriticKind::Mlp => Critic {
                kind,
                first: Dense::init(store, "critic.l1", g, width, width, true, rng),
                second: Some(Dense::init(store, "critic.l2", g, width, 1, true, rng)),
            },
        }
    }

    /// One score per node, `n × 1`, no output activation.
    pub fn forward<'t>(&self, z: Var<'t>, binding: &Binding<'t>) -> Result<Var<'t>> {
        let h = self.first.forward(z, binding)?;
        match &self.second {
            Some(l2) => l2.forward(h.relu(), binding),
            None => Ok(h),
        }
    }

    /// Row `i` is `∇_z f(z_i)`, built from critic parameters so that it can
    /// be differentiated with respect to them.
    ///
    /// For the ReLU network the activation pattern is a constant, so the
    /// result does not depend on `z` through the tape.
    pub fn input_gradient<'t>(&self, z: Var<'t>, binding: &Binding<'t>) -> Result<Var<'t>> {
        let tape = z.tape();
        let [n, _] = z.shape();
        let w1 = binding.var(self.first.weight);
        match &self.second {
            None => tape.constant(Tensor::full(n, 1, 1.0)).matmul(w1.t()),
            Some(l2) => {
                let pre = self.first.forward(z, binding)?.value();
                let active = tape.constant(pre.map(|v| if v > 0.0 { 1.0 } else { 0.0 }));
                let w2 = binding.var(l2.weight);
                active.mul(w2.t())?.matmul(w1.t())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Branches {
    Decorr,
    Gcn { adj: Vec<ParamId>, ppmi: Vec<ParamId> },
}

/// Parameters and wiring of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    store: ParamStore,
    input: Dense,
    branches: Branches,
    aggregate: Dense,
    transformers: Vec<TransformerLayerParams>,
    classifier: Dense,
    critic: Option<Critic>,
}

/// Per-domain outputs of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct DomainForward<'t> {
    /// Representations, `n × D̃`.
    pub z: Var<'t>,
    /// Class probabilities, `n × C`.
    pub y_hat: Var<'t>,
    /// `[α_A, α_P]` per node, `n × 2`.
    pub alpha: Var<'t>,
}

impl Model {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Model> {
        config.validate()?;
        let d = config.hidden;
        let mut store = ParamStore::new();
        let input = Dense::init(&mut store, "input", ParamGroup::Feat, config.in_dim, d, true, rng);
        let branches = if config.variant.uses_gcn_branches() {
            let mut layer = |branch: &str, l: usize, rng: &mut R| {
                store.add(
                    format!("gcn.{branch}.{l}"),
                    ParamGroup::Feat,
                    Tensor::glorot_uniform(d, d, rng),
                )
            };
            let adj = (0..config.decorr.num_layers).map(|l| layer("adj", l, rng)).collect();
            let ppmi = (0..config.decorr.num_layers).map(|l| layer("ppmi", l, rng)).collect();
            Branches::Gcn { adj, ppmi }
        } else {
            Branches::Decorr
        };
        // Zero weights give α = (½, ½) at initialisation.
        let aggregate = Dense {
            weight: store.add("aggregate.weight", ParamGroup::Feat, Tensor::zeros(2 * d, 2)),
            bias: Some(store.add("aggregate.bias", ParamGroup::Feat, Tensor::zeros(1, 2))),
            fan_in: 2 * d,
            fan_out: 2,
        };
        let transformers = (0..config.transformer_layers())
            .map(|i| {
                let pe = (i == 0 || config.pe_every_layer).then_some(config.pe_dim);
                TransformerLayerParams::init(&mut store, &format!("transformer.{i}"), d, pe, rng)
            })
            .collect();
        let classifier = Dense::init(
            &mut store,
            "classifier",
            ParamGroup::Clf,
            d,
            config.num_classes,
            true,
            rng,
        );
        let critic = config
            .variant
            .uses_critic()
            .then(|| Critic::init(&mut store, config.critic, d, rng));
        Ok(Model {
            config,
            store,
            input,
            branches,
            aggregate,
            transformers,
            classifier,
            critic,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn critic(&self) -> Option<&Critic> {
        self.critic.as_ref()
    }

    pub fn classifier(&self) -> &Dense {
        &self.classifier
    }

    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate]) {
        for u in updates {
            u.apply(&mut self.store);
        }
    }

    /// A forward context configured from the model.
    pub fn context<'a, 't>(
        &self,
        binding: &'a Binding<'t>,
        train: bool,
        rng: &'a mut dyn RngCore,
    ) -> ForwardCtx<'a, 't> {
        let mut ctx = ForwardCtx::new(binding, train, rng);
        ctx.dropout = self.config.dropout;
        ctx.attention = self.config.attention;
        ctx
    }

    /// Aggregated branch output `H` and the attention coefficients.
    pub fn aggregate<'t>(
        &self,
        features: &Tensor,
        ops: &GraphOperators,
        ctx: &mut ForwardCtx<'_, 't>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        if features.cols() != self.config.in_dim || features.rows() != ops.num_nodes() {
            return Err(DftError::Shape {
                op: "extract_features",
                lhs: features.shape(),
                rhs: [ops.num_nodes(), self.config.in_dim],
            });
        }
        let binding = ctx.binding;
        let tape = binding.var(self.input.weight).tape();
        let x = self.input.forward(tape.constant(features.clone()), binding)?;
        let (h_a, h_p) = match &self.branches {
            Branches::Decorr => {
                let l_a = tape.constant_shared(ops.laplacian.clone());
                let l_p = tape.constant_shared(ops.ppmi_laplacian.clone());
                (
                    decorr_stack(x, l_a, &self.config.decorr)?,
                    decorr_stack(x, l_p, &self.config.decorr)?,
                )
            }
            Branches::Gcn { adj, ppmi } => {
                let run = |op: Var<'t>, weights: &[ParamId]| -> Result<Var<'t>> {
                    let mut h = x;
                    for (l, &w) in weights.iter().enumerate() {
                        let act = if l + 1 < weights.len() {
                            Activation::Relu
                        } else {
                            Activation::Identity
                        };
                        h = gcn_layer(h, op, binding.var(w), act)?;
                    }
                    Ok(h)
                };
                (
                    run(tape.constant_shared(ops.a_norm.clone()), adj)?,
                    run(tape.constant_shared(ops.ppmi.clone()), ppmi)?,
                )
            }
        };
        let alpha = self
            .aggregate
            .forward(h_a.concat_cols(h_p)?, binding)?
            .softmax();
        let h = h_a
            .mul(alpha.slice_cols(0, 1)?)?
            .add(h_p.mul(alpha.slice_cols(1, 1)?)?)?;
        Ok((h, alpha))
    }

    /// Representations `Z` and attention coefficients for one domain.
    pub fn extract_features<'t>(
        &self,
        features: &Tensor,
        ops: &GraphOperators,
        ctx: &mut ForwardCtx<'_, 't>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let (mut h, alpha) = self.aggregate(features, ops, ctx)?;
        if self.transformers.is_empty() {
            return Ok((h, alpha));
        }
        let tape = h.tape();
        let pos_enc = tape.constant_shared(ops.pos_enc.clone());
        let dense_mask;
        let mask = if self.config.variant == Variant::DftPuret {
            dense_mask = Tensor::full(ops.num_nodes(), ops.num_nodes(), 1.0);
            &dense_mask
        } else {
            &*ops.mask
        };
        for (i, layer) in self.transformers.iter().enumerate() {
            let inject = i == 0 || self.config.pe_every_layer;
            h = transformer_layer(h, pos_enc, mask, layer, inject, ctx)?;
        }
        Ok((h, alpha))
    }

    /// Row-softmax class probabilities.
    pub fn classify<'t>(&self, z: Var<'t>, binding: &Binding<'t>) -> Result<Var<'t>> {
        Ok(self.classifier.forward(z, binding)?.softmax())
    }

    /// Critic scores, `n × 1`.
    pub fn criticize<'t>(&self, z: Var<'t>, binding: &Binding<'t>) -> Result<Var<'t>> {
        match &self.critic {
            Some(c) => c.forward(z, binding),
            None => Err(DftError::contract("this variant has no critic")),
        }
    }

    pub fn forward<'t>(
        &self,
        features: &Tensor,
        ops: &GraphOperators,
        ctx: &mut ForwardCtx<'_, 't>,
    ) -> Result<DomainForward<'t>> {
        let (z, alpha) = self.extract_features(features, ops, ctx)?;
        let y_hat = self.classify(z, ctx.binding)?;
        Ok(DomainForward { z, y_hat, alpha })
    }

    /// Eval-mode representations and class probabilities, with batch norm
    /// as configured by [`ModelConfig::eval_norm`].
    pub fn predict(&self, features: &Tensor, ops: &GraphOperators) -> Result<(Tensor, Tensor)> {
        self.predict_with(features, ops, self.config.eval_norm)
    }

    /// Like [`Model::predict`] with an explicit batch-norm mode. Dropout is
    /// off either way.
    pub fn predict_with(
        &self,
        features: &Tensor,
        ops: &GraphOperators,
        norm: EvalNorm,
    ) -> Result<(Tensor, Tensor)> {
        let batch_stats = norm == EvalNorm::Graph;
        let tape = Tape::new();
        let binding = self.store.bind(&tape, &[]);
        // Eval mode draws nothing from the generator.
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut ctx = self.context(&binding, batch_stats, &mut rng);
        ctx.dropout = 0.0;
        let out = self.forward(features, ops, &mut ctx)?;
        Ok(((*out.z.value()).clone(), (*out.y_hat.value()).clone()))
    }
}
