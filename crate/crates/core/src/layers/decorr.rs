use serde::{Deserialize, Serialize};

use crate::error::{DftError, Result};
use crate::tensor::Var;

/// Weights and step size of the decorrelated propagation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecorrConfig {
    /// Graph smoothing weight.
    pub lambda1: f64,
    /// Decorrelation weight.
    pub lambda2: f64,
    /// Gradient step size.
    pub gamma: f64,
    pub num_layers: usize,
}

impl Default for DecorrConfig {
    fn default() -> Self {
        DecorrConfig {
            lambda1: 100.0,
            lambda2: 0.001,
            gamma: 0.01,
            num_layers: 3,
        }
    }
}

impl DecorrConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("gamma", self.gamma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(DftError::Config(format!(
                    "decorr {name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if self.num_layers == 0 {
            return Err(DftError::Config("decorr num_layers must be >= 1".into()));
        }
        Ok(())
    }
}

/// `G(H) = H - X + λ1 L H + λ2 (H Hᵀ - I) H`, the gradient of
/// `½‖H-X‖² + (λ1/2) tr(HᵀLH) + (λ2/4)‖HHᵀ-I‖²`.
///
/// The last term is evaluated as `H (HᵀH) - H`, which never forms the
/// `n × n` product.
pub fn decorr_gradient<'t>(
    h: Var<'t>,
    x: Var<'t>,
    laplacian: Var<'t>,
    cfg: &DecorrConfig,
) -> Result<Var<'t>> {
    let [n, _] = h.shape();
    if h.shape() != x.shape() {
        return Err(DftError::Shape {
            op: "decorr_gradient",
            lhs: h.shape(),
            rhs: x.shape(),
        });
    }
    if laplacian.shape() != [n, n] {
        return Err(DftError::Shape {
            op: "decorr_gradient",
            lhs: laplacian.shape(),
            rhs: h.shape(),
        });
    }
    let mut g = h.sub(x)?;
    if cfg.lambda1 != 0.0 {
        g = g.add(laplacian.matmul(h)?.scale(cfg.lambda1))?;
    }
    if cfg.lambda2 != 0.0 {
        let gram = h.t().matmul(h)?;
        g = g.add(h.matmul(gram)?.sub(h)?.scale(cfg.lambda2))?;
    }
    Ok(g)
}

/// `num_layers` steps of `H ← H - γ G(H)` from `H = x`.
pub fn decorr_stack<'t>(x: Var<'t>, laplacian: Var<'t>, cfg: &DecorrConfig) -> Result<Var<'t>> {
    decorr_stack_from(x, x, laplacian, cfg)
}

/// [`decorr_stack`] started from an arbitrary `h0` instead of `x`.
pub fn decorr_stack_from<'t>(
    h0: Var<'t>,
    x: Var<'t>,
    laplacian: Var<'t>,
    cfg: &DecorrConfig,
) -> Result<Var<'t>> {
    cfg.validate()?;
    let mut h = h0;
    for _ in 0..cfg.num_layers {
        let g = decorr_gradient(h, x, laplacian, cfg)?;
        h = h.sub(g.scale(cfg.gamma))?;
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Tape, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(lambda1: f64, lambda2: f64, gamma: f64, num_layers: usize) -> DecorrConfig {
        DecorrConfig {
            lambda1,
            lambda2,
            gamma,
            num_layers,
        }
    }

    #[test]
    fn gradient_vanishes_at_input_without_regularisers() {
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = tape.constant(Tensor::random_normal(5, 3, &mut rng));
        let l = tape.constant(Tensor::random_normal(5, 5, &mut rng));
        let g = decorr_gradient(x, x, l, &cfg(0.0, 0.0, 0.1, 1)).unwrap();
        assert_eq!(*g.value(), Tensor::zeros(5, 3));
    }

    #[test]
    fn gradient_vanishes_for_orthonormal_rows() {
        let tape = Tape::new();
        let h = tape.constant(Tensor::from_rows(&[vec![0.6, 0.8, 0.0], vec![-0.8, 0.6, 0.0]]).unwrap());
        let l = tape.constant(Tensor::zeros(2, 2));
        let g = decorr_gradient(h, h, l, &cfg(0.0, 1.0, 0.1, 1)).unwrap();
        assert!(g.value().data().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn unit_step_returns_input() {
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = tape.constant(Tensor::random_normal(4, 2, &mut rng));
        let h0 = tape.constant(Tensor::random_normal(4, 2, &mut rng));
        let l = tape.constant(Tensor::identity(4));
        let out = decorr_stack_from(h0, x, l, &cfg(0.0, 0.0, 1.0, 3)).unwrap();
        assert_eq!(*out.value(), *x.value());
        let out = decorr_stack(x, l, &cfg(5.0, 1.0, 0.0, 2)).unwrap();
        assert_eq!(*out.value(), *x.value());
    }

    #[test]
    fn shape_mismatch_named() {
        let tape = Tape::new();
        let err = decorr_gradient(
            tape.constant(Tensor::zeros(3, 2)),
            tape.constant(Tensor::zeros(3, 3)),
            tape.constant(Tensor::zeros(3, 3)),
            &DecorrConfig::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("decorr_gradient"));
    }

    #[test]
    fn config_validation() {
        assert!(DecorrConfig::default().validate().is_ok());
        assert!(cfg(-1.0, 0.0, 0.1, 1).validate().is_err());
        assert!(cfg(0.0, 0.0, 0.1, 0).validate().is_err());
    }
}
