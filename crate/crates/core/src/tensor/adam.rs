use super::dense::Tensor;
use crate::error::{DftError, Result};

/// Adam with bias-corrected moments.
///
/// One instance serves one fixed, ordered group of parameters. A negative
/// learning rate turns the update into gradient ascent.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam::new(0.9, 0.999, 1e-8)
    }
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[Option<&Tensor>],
        lr: f64,
    ) -> Result<()> {
        if params.len() != grads.len() {
            return Err(DftError::contract(format!(
                "adam: {} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
            self.second = self.first.clone();
        } else if self.first.len() != params.len() {
            return Err(DftError::contract(
                "adam: parameter group changed between steps",
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let g = g.ok_or_else(|| {
                DftError::contract(format!("adam: missing gradient for parameter {i}"))
            })?;
            if g.shape() != p.shape() || self.first[i].shape() != p.shape() {
                return Err(DftError::Shape {
                    op: "adam",
                    lhs: p.shape(),
                    rhs: g.shape(),
                });
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads[i].expect("checked above");
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (((w, &gj), mj), vj) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mj = self.beta1 * *mj + (1.0 - self.beta1) * gj;
                *vj = self.beta2 * *vj + (1.0 - self.beta2) * gj * gj;
                let m_hat = *mj / bc1;
                let v_hat = *vj / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g and v̂ = g² after one step, so the update is lr·g/(|g|+ε).
        let mut p = Tensor::scalar(1.0);
        let g = Tensor::scalar(1.0);
        let mut adam = Adam::default();
        adam.step(&mut [&mut p], &[Some(&g)], 0.1).unwrap();
        let expected = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8);
        assert!((p.item() - expected).abs() < 1e-15);
        assert!((p.item() - 0.9).abs() < 1e-8);
        assert_eq!(adam.steps_taken(), 1);
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut p = Tensor::from_rows(&[vec![0.3, -2.0]]).unwrap();
        let before = p.clone();
        let g = Tensor::zeros(1, 2);
        let mut adam = Adam::default();
        for _ in 0..3 {
            adam.step(&mut [&mut p], &[Some(&g)], 0.01).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn negated_rate_negates_update() {
        let g = Tensor::from_rows(&[vec![0.5, -1.5, 2.0]]).unwrap();
        let start = Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let (mut up, mut down) = (start.clone(), start.clone());
        Adam::default().step(&mut [&mut up], &[Some(&g)], 0.05).unwrap();
        Adam::default().step(&mut [&mut down], &[Some(&g)], -0.05).unwrap();
        for i in 0..3 {
            let du = up.data()[i] - start.data()[i];
            let dd = down.data()[i] - start.data()[i];
            assert!((du + dd).abs() < 1e-15, "{du} vs {dd}");
        }
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut p = Tensor::scalar(1.0);
        let err = Adam::default().step(&mut [&mut p], &[None], 0.1);
        assert!(matches!(err, Err(DftError::Contract(_))));
    }
}
