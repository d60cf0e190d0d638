//! Finite-difference gradient checking.
//!
//! The numeric side only ever calls the forward pass (central differences),
//! so it stays independent of the backward closures it is used to verify.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Step for central differences. cbrt(f64 machine eps) is ~6e-6; 1e-5 keeps
/// truncation and rounding error both near 1e-10 for O(1) values.
pub const FD_STEP: f64 = 1e-5;

/// Floor for the relative-error denominator, so near-zero gradients do not
/// blow up the ratio.
pub const REL_FLOOR: f64 = 1e-6;

/// Outcome of a gradient comparison.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    /// Number of coordinates compared.
    pub checked: usize,
}

fn eval_scalar<B>(data: &[Vec<f64>], shapes: &[Vec<usize>], build: &B) -> Result<f64>
where
    B: Fn(&Graph, &[Var]) -> Result<Var>,
{
    let g = Graph::new();
    let mut vars = Vec::with_capacity(data.len());
    for (d, s) in data.iter().zip(shapes) {
        vars.push(g.input(Tensor::from_vec(s, d.clone())?));
    }
    let out = build(&g, &vars)?;
    g.value(out).item()
}

/// Compare analytic gradients of a scalar-valued builder against central
/// finite differences on every coordinate of every input.
pub fn check_gradients<B>(
    data: &[Vec<f64>],
    shapes: &[Vec<usize>],
    build: B,
) -> Result<GradCheck>
where
    B: Fn(&Graph, &[Var]) -> Result<Var>,
{
    check_gradients_sampled(data, shapes, build, usize::MAX, 0)
}

/// Same as [`check_gradients`] but comparing at most `max_per_input`
/// randomly chosen coordinates per input (deterministic in `seed`).
pub fn check_gradients_sampled<B>(
    data: &[Vec<f64>],
    shapes: &[Vec<usize>],
    build: B,
    max_per_input: usize,
    seed: u64,
) -> Result<GradCheck>
where
    B: Fn(&Graph, &[Var]) -> Result<Var>,
{
    if data.len() != shapes.len() {
        return Err(Error::shape("check_gradients: data/shape count mismatch"));
    }
    // Analytic pass.
    let g = Graph::new();
    let mut vars = Vec::with_capacity(data.len());
    for (d, s) in data.iter().zip(shapes) {
        vars.push(g.input(Tensor::from_vec(s, d.clone())?));
    }
    let out = build(&g, &vars)?;
    let grads = g.backward(out)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut result = GradCheck { max_abs_err: 0.0, max_rel_err: 0.0, checked: 0 };
    let mut work: Vec<Vec<f64>> = data.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*var, &shapes[i]);
        let mut coords: Vec<usize> = (0..data[i].len()).collect();
        if coords.len() > max_per_input {
            coords.shuffle(&mut rng);
            coords.truncate(max_per_input);
        }
        for &c in &coords {
            let saved = work[i][c];
            work[i][c] = saved + FD_STEP;
            let f_plus = eval_scalar(&work, shapes, &build)?;
            work[i][c] = saved - FD_STEP;
            let f_minus = eval_scalar(&work, shapes, &build)?;
            work[i][c] = saved;
            let numeric = (f_plus - f_minus) / (2.0 * FD_STEP);
            let a = analytic.data()[c];
            let abs_err = (a - numeric).abs();
            let rel_err = abs_err / a.abs().max(numeric.abs()).max(REL_FLOOR);
            result.max_abs_err = result.max_abs_err.max(abs_err);
            result.max_rel_err = result.max_rel_err.max(rel_err);
            result.checked += 1;
        }
    }
    Ok(result)
}
