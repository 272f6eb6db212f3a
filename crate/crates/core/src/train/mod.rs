//! Losses, the adversarial objective and the training loop.

mod losses;

use std::sync::Arc;
use std::time::Instant;

use log::{debug, info};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DftError, Result};
use crate::graph::{Graph, GraphOperators, PpmiConfig};
use crate::layers::{AttentionMode, DecorrConfig};
use crate::model::{CriticKind, EvalNorm, Model, ModelConfig, Variant};
use crate::params::ParamGroup;
use crate::tensor::{Adam, Tape, Tensor};

pub use losses::{
    gradient_penalty, loss_critic, loss_mmd, loss_source, loss_target_entropy, GpMode,
};

/// `λ_t = epoch / (epochs · 100)`.
pub fn lambda_t_schedule(epoch: usize, epochs: usize) -> f64 {
    lambda_t_schedule_with(epoch, epochs, 100.0)
}

/// `λ_t = epoch / (epochs · divisor)`.
pub fn lambda_t_schedule_with(epoch: usize, epochs: usize, divisor: f64) -> f64 {
    epoch as f64 / (epochs as f64 * divisor)
}

/// Every hyperparameter of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub n_critic: usize,
    pub lambda_critic: f64,
    pub lambda_gp: f64,
    /// `λ_t` reaches `1 / lambda_t_divisor` at the last epoch.
    pub lambda_t_divisor: f64,
    pub decorr: DecorrConfig,
    pub dropout: f64,
    pub hidden: usize,
    pub pe_dim: usize,
    pub transformer_layers: usize,
    pub pe_every_layer: bool,
    pub variant: Variant,
    pub dropedge_rate: f64,
    pub gp_mode: GpMode,
    pub attention: AttentionMode,
    pub critic: CriticKind,
    pub eval_norm: EvalNorm,
    pub ppmi: PpmiConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            lr: 0.003,
            n_critic: 5,
            lambda_critic: 1.0,
            lambda_gp: 10.0,
            lambda_t_divisor: 100.0,
            decorr: DecorrConfig::default(),
            dropout: 0.1,
            hidden: 128,
            pe_dim: 2,
            transformer_layers: 4,
            pe_every_layer: false,
            variant: Variant::Dft,
            dropedge_rate: 0.2,
            gp_mode: GpMode::Literal,
            attention: AttentionMode::Neighbors,
            critic: CriticKind::Mlp,
            eval_norm: EvalNorm::Graph,
            ppmi: PpmiConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(DftError::Config(msg));
        if self.epochs == 0 || self.n_critic == 0 {
            return bad(format!(
                "epochs and n_critic must be >= 1, got {} and {}",
                self.epochs, self.n_critic
            ));
        }
        for (name, v) in [
            ("lr", self.lr),
            ("lambda_critic", self.lambda_critic),
            ("lambda_gp", self.lambda_gp),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !(self.lambda_t_divisor > 0.0) {
            return bad(format!(
                "lambda_t_divisor must be positive, got {}",
                self.lambda_t_divisor
            ));
        }
        if !(0.0..1.0).contains(&self.dropedge_rate) {
            return bad(format!(
                "dropedge_rate must lie in [0, 1), got {}",
                self.dropedge_rate
            ));
        }
        self.ppmi.validate()?;
        self.decorr.validate()
    }

    pub fn model_config(&self, in_dim: usize, num_classes: usize) -> ModelConfig {
        ModelConfig {
            in_dim,
            num_classes,
            hidden: self.hidden,
            pe_dim: self.pe_dim,
            num_transformer_layers: self.transformer_layers,
            decorr: self.decorr.clone(),
            dropout: self.dropout,
            attention: self.attention,
            variant: self.variant,
            critic: self.critic,
            pe_every_layer: self.pe_every_layer,
            eval_norm: self.eval_norm,
            ppmi: self.ppmi.clone(),
        }
    }
}

/// Losses of one epoch. `l_critic` holds the MMD value for the MMD variant,
/// whose `l_gp` is zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_s: f64,
    pub l_t: f64,
    pub l_critic: f64,
    pub l_gp: f64,
    pub lambda_t: f64,
    /// The scalar minimised by the feature extractor and classifier.
    pub objective: f64,
    pub seconds: f64,
}

/// Parameters after training together with the loss history.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub model: Model,
    pub history: Vec<EpochRecord>,
}

/// Critic loss and penalty on fixed representations.
pub fn critic_objective(
    model: &Model,
    z_s: &Arc<Tensor>,
    z_t: &Arc<Tensor>,
    mode: GpMode,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64)> {
    let critic = model
        .critic()
        .ok_or_else(|| DftError::contract("this variant has no critic"))?;
    let tape = Tape::new();
    let binding = model.store().bind_groups(&tape, &[ParamGroup::Critic], &[]);
    let (zs, zt) = (tape.constant_shared(z_s.clone()), tape.constant_shared(z_t.clone()));
    let lc = loss_critic(critic.forward(zs, &binding)?, critic.forward(zt, &binding)?)?;
    let gp = gradient_penalty(critic, &binding, zs, zt, mode, rng)?;
    Ok((lc.value().item(), gp.value().item()))
}

fn finite(v: f64, epoch: usize, loss: &'static str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(DftError::NonFinite { epoch, loss })
    }
}

/// Algorithm state across epochs.
pub struct Trainer<'g> {
    pub model: Model,
    cfg: TrainConfig,
    source: &'g Graph,
    labels: Vec<usize>,
    target_features: Tensor,
    ops_s: GraphOperators,
    ops_t: GraphOperators,
    adam_feat: Adam,
    adam_clf: Adam,
    adam_critic: Adam,
    rng: ChaCha8Rng,
    epoch: usize,
}

impl<'g> Trainer<'g> {
    /// Builds operators and the model. Only the features and structure of
    /// `target` are read.
    pub fn new(source: &'g Graph, target: &Graph, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let (labels, classes) = match (source.labels(), source.num_classes()) {
            (Some(l), Some(c)) => (l.to_vec(), c),
            _ => return Err(DftError::contract("source graph has no labels")),
        };
        if source.feature_dim() != target.feature_dim() {
            return Err(DftError::contract(format!(
                "feature dimensions differ: source {} target {}",
                source.feature_dim(),
                target.feature_dim()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let ops_s = GraphOperators::new(source, &cfg.ppmi, cfg.pe_dim, &mut rng)?;
        let ops_t = GraphOperators::new(target, &cfg.ppmi, cfg.pe_dim, &mut rng)?;
        let model = Model::new(cfg.model_config(source.feature_dim(), classes), &mut rng)?;
        Ok(Trainer {
            model,
            cfg: cfg.clone(),
            source,
            labels,
            target_features: target.features().clone(),
            ops_s,
            ops_t,
            adam_feat: Adam::default(),
            adam_clf: Adam::default(),
            adam_critic: Adam::default(),
            rng,
            epoch: 0,
        })
    }

    pub fn source_operators(&self) -> &GraphOperators {
        &self.ops_s
    }

    pub fn target_operators(&self) -> &GraphOperators {
        &self.ops_t
    }

    /// One ascent step of `L_critic - λ_gp L_gp` on fixed representations.
    /// Returns the loss and penalty evaluated before the step.
    pub fn critic_step(&mut self, z_s: &Arc<Tensor>, z_t: &Arc<Tensor>, lr: f64) -> Result<(f64, f64)> {
        let critic = self
            .model
            .critic()
            .ok_or_else(|| DftError::contract("this variant has no critic"))?
            .clone();
        let tape = Tape::new();
        let binding = self
            .model
            .store()
            .bind_groups(&tape, &[ParamGroup::Critic], &[ParamGroup::Critic]);
        let (zs, zt) = (tape.constant_shared(z_s.clone()), tape.constant_shared(z_t.clone()));
        let lc = loss_critic(critic.forward(zs, &binding)?, critic.forward(zt, &binding)?)?;
        let gp = gradient_penalty(&critic, &binding, zs, zt, self.cfg.gp_mode, &mut self.rng)?;
        let objective = lc.sub(gp.scale(self.cfg.lambda_gp))?;
        let (lc, gp) = (lc.value().item(), gp.value().item());
        finite(lc, self.epoch, "L_critic")?;
        finite(gp, self.epoch, "L_gp")?;
        let grads = tape.backward(objective)?;
        self.model.store_mut().adam_step(
            ParamGroup::Critic,
            &binding,
            &grads,
            &mut self.adam_critic,
            -lr,
        )?;
        Ok((lc, gp))
    }

    /// Runs the next epoch and returns its record.
    pub fn epoch(&mut self) -> Result<EpochRecord> {
        self.epoch_with(|_| {})
    }

    /// [`Trainer::epoch`], calling `after_critic` with the model once the
    /// critic loop has finished and before the feature/classifier step.
    pub fn epoch_with(&mut self, after_critic: impl FnOnce(&Model)) -> Result<EpochRecord> {
        let start = Instant::now();
        self.epoch += 1;
        let epoch = self.epoch;
        let cfg = self.cfg.clone();
        let ops_s = if cfg.variant == Variant::DftDropedge {
            let dropped = self.source.drop_edge(cfg.dropedge_rate, &mut self.rng)?;
            self.ops_s.with_structure_of(&dropped)
        } else {
            self.ops_s.clone()
        };

        let tape = Tape::new();
        let mut binding = self.model.store().bind_groups(
            &tape,
            &[ParamGroup::Feat, ParamGroup::Clf, ParamGroup::Buffer],
            &[ParamGroup::Feat, ParamGroup::Clf],
        );
        let (src, tgt, bn_updates) = {
            let mut ctx = self.model.context(&binding, true, &mut self.rng);
            let src = self.model.forward(self.source.features(), &ops_s, &mut ctx)?;
            let tgt = self.model.forward(&self.target_features, &self.ops_t, &mut ctx)?;
            (src, tgt, ctx.bn_updates)
        };

        let (z_s, z_t) = (src.z.value(), tgt.z.value());
        let mut l_gp = 0.0;
        if self.model.critic().is_some() {
            for _ in 0..cfg.n_critic {
                l_gp = self.critic_step(&z_s, &z_t, cfg.lr)?.1;
            }
        }
        after_critic(&self.model);

        let l_s = loss_source(src.y_hat, &self.labels)?;
        let l_t = loss_target_entropy(tgt.y_hat);
        let align = match self.model.critic() {
            Some(critic) => {
                self.model
                    .store()
                    .bind_group(&mut binding, &tape, ParamGroup::Critic, false);
                loss_critic(critic.forward(src.z, &binding)?, critic.forward(tgt.z, &binding)?)?
            }
            None => loss_mmd(src.z, tgt.z)?,
        };
        let lambda_t = lambda_t_schedule_with(epoch, cfg.epochs, cfg.lambda_t_divisor);
        let objective = l_s
            .add(l_t.scale(lambda_t))?
            .add(align.scale(cfg.lambda_critic))?;

        let l_s_v = finite(l_s.value().item(), epoch, "L_s")?;
        let l_t_v = finite(l_t.value().item(), epoch, "L_t")?;
        let align_v = finite(align.value().item(), epoch, "L_critic")?;
        let objective_v = finite(objective.value().item(), epoch, "objective")?;

        let grads = tape.backward(objective)?;
        let store = self.model.store_mut();
        store.adam_step(ParamGroup::Feat, &binding, &grads, &mut self.adam_feat, cfg.lr)?;
        store.adam_step(ParamGroup::Clf, &binding, &grads, &mut self.adam_clf, cfg.lr)?;
        self.model.apply_bn_updates(&bn_updates);

        let record = EpochRecord {
            epoch,
            l_s: l_s_v,
            l_t: l_t_v,
            l_critic: align_v,
            l_gp,
            lambda_t,
            objective: objective_v,
            seconds: start.elapsed().as_secs_f64(),
        };
        debug!("{record:?}");
        if epoch % 50 == 0 || epoch == cfg.epochs {
            info!(
                "epoch {epoch}/{}: L_s {:.4} L_t {:.4} L_critic {:.4} L_gp {:.4}",
                cfg.epochs, record.l_s, record.l_t, record.l_critic, record.l_gp
            );
        }
        Ok(record)
    }
}

/// Trains for `cfg.epochs` epochs. `target` labels, if any, are ignored.
pub fn train(source: &Graph, target: &Graph, cfg: &TrainConfig) -> Result<TrainOutput> {
    train_with(source, target, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    source: &Graph,
    target: &Graph,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutput> {
    let mut trainer = Trainer::new(source, target, cfg)?;
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let record = trainer.epoch()?;
        on_epoch(&record);
        history.push(record);
    }
    Ok(TrainOutput {
        model: trainer.model,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_values() {
        assert_eq!(lambda_t_schedule(0, 500), 0.0);
        assert_eq!(lambda_t_schedule(500, 500), 0.01);
        assert_eq!(lambda_t_schedule(250, 500), 0.005);
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let err = serde_json::from_str::<TrainConfig>(r#"{"epochs": 3, "learning_rate": 0.1}"#);
        assert!(err.is_err());
        let ok: TrainConfig = serde_json::from_str(r#"{"epochs": 3}"#).unwrap();
        assert_eq!(ok.epochs, 3);
        assert_eq!(ok.lr, 0.003);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let cfg = TrainConfig {
            n_critic: 0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
