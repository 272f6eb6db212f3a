use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DftError, Result};
use crate::model::Critic;
use crate::params::Binding;
use crate::tensor::{Tensor, Var};

/// Where the gradient penalty is evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GpMode {
    /// At the representations themselves.
    #[default]
    Literal,
    /// At random convex combinations of a node with a random node of the
    /// other domain.
    Interpolate,
}

fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut y = Tensor::zeros(labels.len(), classes);
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(DftError::contract(format!(
                "label {l} outside [0, {classes})"
            )));
        }
        y.set(i, l, 1.0);
    }
    Ok(y)
}

/// Mean negative log-probability of the true class.
pub fn loss_source<'t>(y_hat: Var<'t>, labels: &[usize]) -> Result<Var<'t>> {
    let [n, c] = y_hat.shape();
    if labels.len() != n || n == 0 {
        return Err(DftError::contract(format!(
            "{} labels for {n} predictions",
            labels.len()
        )));
    }
    let y = y_hat.tape().constant(one_hot(labels, c)?);
    Ok(y.mul(y_hat.ln())?.sum().scale(-1.0 / n as f64))
}

/// Mean Shannon entropy of the predicted distributions.
pub fn loss_target_entropy(y_hat: Var<'_>) -> Var<'_> {
    let n = y_hat.shape()[0].max(1);
    y_hat
        .mul(y_hat.ln())
        .expect("same shape")
        .sum()
        .scale(-1.0 / n as f64)
}

/// `mean(q_s) - mean(q_t)`.
pub fn loss_critic<'t>(q_s: Var<'t>, q_t: Var<'t>) -> Result<Var<'t>> {
    q_s.mean().sub(q_t.mean())
}

fn penalty_one<'t>(critic: &Critic, z: Var<'t>, binding: &Binding<'t>) -> Result<Var<'t>> {
    let g = critic.input_gradient(z, binding)?;
    Ok(g.row_norm().add_scalar(-1.0).square().mean())
}

fn interpolate<R: Rng + ?Sized>(a: &Tensor, b: &Tensor, rng: &mut R) -> Tensor {
    let mut out = a.clone();
    if b.rows() == 0 {
        return out;
    }
    for i in 0..a.rows() {
        let j = rng.random_range(0..b.rows());
        let eps: f64 = rng.random();
        for (o, (&x, &y)) in out.row_mut(i).iter_mut().zip(a.row(i).iter().zip(b.row(j))) {
            *o = eps * x + (1.0 - eps) * y;
        }
    }
    out
}

/// `Σ_r mean_i (‖∇f(z_{r,i})‖ - 1)²` over both domains.
pub fn gradient_penalty<'t, R: Rng + ?Sized>(
    critic: &Critic,
    binding: &Binding<'t>,
    z_s: Var<'t>,
    z_t: Var<'t>,
    mode: GpMode,
    rng: &mut R,
) -> Result<Var<'t>> {
    match mode {
        GpMode::Literal => penalty_one(critic, z_s, binding)?.add(penalty_one(critic, z_t, binding)?),
        GpMode::Interpolate => {
            let tape = z_s.tape();
            let (vs, vt) = (z_s.value(), z_t.value());
            let hs = tape.constant(interpolate(&vs, &vt, rng));
            let ht = tape.constant(interpolate(&vt, &vs, rng));
            penalty_one(critic, hs, binding)?.add(penalty_one(critic, ht, binding)?)
        }
    }
}

/// Pairwise squared distances `‖a_i - b_j‖²`.
fn sq_dists<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    let na = a.square().row_sum();
    let nb = b.square().row_sum().t();
    a.matmul(b.t())?.scale(-2.0).add(na)?.add(nb)
}

/// `‖a_i - b_j‖²` as a differentiable scalar, where `a_i` is row `i` of
/// `a` and `b_j` row `j` of `b`.
fn pair_sq_dist<'t>(a: Var<'t>, i: usize, b: Var<'t>, j: usize) -> Result<Var<'t>> {
    let tape = a.tape();
    let mut ea = Tensor::zeros(1, a.shape()[0]);
    ea.set(0, i, 1.0);
    let mut eb = Tensor::zeros(1, b.shape()[0]);
    eb.set(0, j, 1.0);
    let diff = tape.constant(ea).matmul(a)?.sub(tape.constant(eb).matmul(b)?)?;
    Ok(diff.square().sum())
}

/// Squared MMD (biased V-statistic) with the Gaussian kernel
/// `exp(-‖a-b‖² / (2σ²))`, where `σ²` is the median squared distance over
/// distinct pairs of the pooled rows.
///
/// The median is differentiated through the pair (or two pairs) that
/// attain it. If every pooled row coincides, `σ² = 1`.
pub fn loss_mmd<'t>(z_s: Var<'t>, z_t: Var<'t>) -> Result<Var<'t>> {
    if z_s.shape()[1] != z_t.shape()[1] {
        return Err(DftError::Shape {
            op: "loss_mmd",
            lhs: z_s.shape(),
            rhs: z_t.shape(),
        });
    }
    let tape = z_s.tape();
    let (vs, vt) = (z_s.value(), z_t.value());
    let ns = vs.rows();
    let row = |k: usize| if k < ns { vs.row(k) } else { vt.row(k - ns) };
    let total = ns + vt.rows();
    let mut pairs = Vec::with_capacity(total * total.saturating_sub(1) / 2);
    for i in 0..total {
        for j in i + 1..total {
            let d: f64 = row(i).iter().zip(row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            pairs.push((d, i, j));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let pooled = |k: usize| if k < ns { (z_s, k) } else { (z_t, k - ns) };
    let dist = |&(_, i, j): &(f64, usize, usize)| -> Result<Var<'t>> {
        let ((a, ia), (b, jb)) = (pooled(i), pooled(j));
        pair_sq_dist(a, ia, b, jb)
    };
    let m = pairs.len() / 2;
    let sigma2 = match pairs.len() {
        0 => tape.scalar(1.0),
        len if len % 2 == 1 => dist(&pairs[m])?,
        _ => dist(&pairs[m - 1])?.add(dist(&pairs[m])?)?.scale(0.5),
    };
    let sigma2 = if sigma2.value().item() > 0.0 {
        sigma2
    } else {
        tape.scalar(1.0)
    };
    // -1 / (2σ²), as a 1×1 factor broadcast over the distance matrices.
    let coef = sigma2.ln().scale(-1.0).exp().scale(-0.5);
    let kernel = |a: Var<'t>, b: Var<'t>| -> Result<Var<'t>> {
        Ok(sq_dists(a, b)?.mul(coef)?.exp().mean())
    };
    kernel(z_s, z_s)?
        .add(kernel(z_t, z_t)?)?
        .sub(kernel(z_s, z_t)?.scale(2.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cross_entropy_hand_value() {
        let tape = Tape::new();
        let p = tape.constant(Tensor::from_rows(&[vec![0.5, 0.5], vec![0.9, 0.1]]).unwrap());
        let l = loss_source(p, &[0, 0]).unwrap().value().item();
        let expect = -(0.5f64.ln() + 0.9f64.ln()) / 2.0;
        assert!((l - expect).abs() < 1e-15);
        assert!((l - 0.3993).abs() < 1e-4);
    }

    #[test]
    fn entropy_extremes() {
        let tape = Tape::new();
        let onehot = tape.constant(Tensor::identity(3));
        assert_eq!(loss_target_entropy(onehot).value().item(), 0.0);
        let uniform = tape.constant(Tensor::full(4, 3, 1.0 / 3.0));
        assert!((loss_target_entropy(uniform).value().item() - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn critic_loss_values() {
        let tape = Tape::new();
        let qs = tape.constant(Tensor::full(2, 1, 1.0));
        let qt = tape.constant(Tensor::zeros(1, 1));
        assert_eq!(loss_critic(qs, qt).unwrap().value().item(), 1.0);
        assert_eq!(loss_critic(qt, qs).unwrap().value().item(), -1.0);
    }

    #[test]
    fn mmd_of_identical_sets_is_zero() {
        let tape = Tape::new();
        let z = tape.constant(Tensor::random_normal(6, 3, &mut ChaCha8Rng::seed_from_u64(0)));
        assert!(loss_mmd(z, z).unwrap().value().item().abs() < 1e-12);
    }

    #[test]
    fn pair_distance() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::from_rows(&[vec![0.0, 0.0], vec![3.0, 4.0]]).unwrap());
        assert_eq!(pair_sq_dist(a, 0, a, 1).unwrap().value().item(), 25.0);
    }
}
