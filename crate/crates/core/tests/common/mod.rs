//! Test oracles shared by the integration tests.
#![allow(dead_code)]

use dft_core::tensor::{Tape, Tensor, Var};
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn eval<F>(inputs: &[Tensor], f: &F) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    f(&tape, &vars).value().item()
}

/// Largest relative error between reverse-mode and central-difference
/// gradients of the scalar `f` over every entry of every input.
pub fn gradcheck<F>(inputs: &[Tensor], f: F) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    gradcheck_entries(inputs, &f, None::<&mut rand_chacha::ChaCha8Rng>, usize::MAX)
}

/// Like [`gradcheck`] but probes at most `per_input` random entries of each
/// input.
pub fn gradcheck_sampled<F, R: Rng>(inputs: &[Tensor], f: F, rng: &mut R, per_input: usize) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    gradcheck_entries(inputs, &f, Some(rng), per_input)
}

fn gradcheck_entries<F, R: Rng>(
    inputs: &[Tensor],
    f: &F,
    mut rng: Option<&mut R>,
    per_input: usize,
) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&tape, &vars);
    let grads = tape.backward(loss).expect("backward");
    let scale = loss.value().item().abs().max(1.0);
    let mut worst = 0.0f64;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]).expect("tracked leaf").clone();
        let entries: Vec<usize> = match rng.as_deref_mut() {
            Some(r) if input.len() > per_input => {
                (0..per_input).map(|_| r.random_range(0..input.len())).collect()
            }
            _ => (0..input.len()).collect(),
        };
        for idx in entries {
            let mut shifted = inputs.to_vec();
            shifted[k].data_mut()[idx] += FD_STEP;
            let up = eval(&shifted, f);
            shifted[k].data_mut()[idx] -= 2.0 * FD_STEP;
            let down = eval(&shifted, f);
            let numeric = (up - down) / (2.0 * FD_STEP);
            // Below this, central differences are dominated by rounding.
            let floor = 1e-6 * scale;
            worst = worst.max(rel_err(analytic.data()[idx], numeric, floor));
        }
    }
    worst
}

/// Fixed random weights turning a matrix into a scalar with a nontrivial
/// gradient: `Σ x ∘ w`.
pub fn weighted_sum<'t>(x: Var<'t>, w: &Tensor) -> Var<'t> {
    x.mul(x.tape().constant(w.clone())).expect("shape").sum()
}

/// Pins a closure to the higher-ranked signature the checkers expect.
pub fn scalar_fn<F>(f: F) -> F
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    f
}
