//! Finite-difference verification of tape gradients.
//!
//! `grad_check` compares the gradients produced by [`Tape::backward`] against
//! central differences of the same function, returning the worst relative
//! error. The numeric side never touches the backward pass, so the two
//! routes stay independent.

use crate::autodiff::tape::{Tape, ValueId};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// A scalar-valued function built on a tape from leaf inputs.
pub trait ScalarFn: Sync {
    fn eval(&self, tape: &mut Tape, inputs: &[ValueId]) -> Result<ValueId>;
}

impl<F> ScalarFn for F
where
    F: Fn(&mut Tape, &[ValueId]) -> Result<ValueId> + Sync,
{
    fn eval(&self, tape: &mut Tape, inputs: &[ValueId]) -> Result<ValueId> {
        self(tape, inputs)
    }
}

fn eval_scalar(f: &dyn ScalarFn, inputs: &[Tensor]) -> Result<f64> {
    let mut tape = Tape::new();
    let ids: Vec<ValueId> = inputs.iter().map(|t| tape.constant(t)).collect();
    let out = f.eval(&mut tape, &ids)?;
    let value = tape.value(out);
    if !value.is_scalar() {
        return Err(Error::InvalidArgument {
            op: "grad_check",
            message: format!("function must return a scalar, got {}x{}", value.rows(), value.cols()),
        });
    }
    Ok(value.data()[0])
}

/// Tape gradients of `f` with respect to every entry of every input.
pub fn analytic_gradients(f: &dyn ScalarFn, inputs: &[Tensor]) -> Result<Vec<Vec<f64>>> {
    let mut tape = Tape::new();
    let ids: Vec<ValueId> = inputs.iter().map(|t| tape.param(t)).collect();
    let out = f.eval(&mut tape, &ids)?;
    let value = tape.value(out);
    if !value.is_scalar() {
        return Err(Error::InvalidArgument {
            op: "grad_check",
            message: format!("function must return a scalar, got {}x{}", value.rows(), value.cols()),
        });
    }
    tape.backward(out)?;
    Ok(ids
        .iter()
        .zip(inputs)
        .map(|(&id, t)| {
            tape.grad(id)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; t.len()])
        })
        .collect())
}

/// Central differences (f(x+eps) - f(x-eps)) / (2 eps), entry by entry.
pub fn numeric_gradients(f: &dyn ScalarFn, inputs: &[Tensor], eps: f64) -> Result<Vec<Vec<f64>>> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument {
            op: "grad_check",
            message: format!("eps must be positive, got {eps}"),
        });
    }
    let entries: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j)))
        .collect();

    let diff_at = |&(i, j): &(usize, usize)| -> Result<f64> {
        let mut perturbed = inputs.to_vec();
        perturbed[i].data_mut()[j] += eps;
        let plus = eval_scalar(f, &perturbed)?;
        perturbed[i].data_mut()[j] -= 2.0 * eps;
        let minus = eval_scalar(f, &perturbed)?;
        Ok((plus - minus) / (2.0 * eps))
    };

    #[cfg(feature = "parallel")]
    let flat: Result<Vec<f64>> = entries.par_iter().map(diff_at).collect();
    #[cfg(not(feature = "parallel"))]
    let flat: Result<Vec<f64>> = entries.iter().map(diff_at).collect();
    let flat = flat?;

    let mut out = Vec::with_capacity(inputs.len());
    let mut cursor = 0;
    for t in inputs {
        out.push(flat[cursor..cursor + t.len()].to_vec());
        cursor += t.len();
    }
    Ok(out)
}

/// Worst relative error between two gradient sets, with denominator
/// max(|analytic|, |numeric|, 1e-8).
pub fn max_relative_error(analytic: &[Vec<f64>], numeric: &[Vec<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for (a_vec, n_vec) in analytic.iter().zip(numeric) {
        for (a, n) in a_vec.iter().zip(n_vec) {
            let denom = a.abs().max(n.abs()).max(1e-8);
            worst = worst.max((a - n).abs() / denom);
        }
    }
    worst
}

/// Max relative error between tape gradients and central differences of `f`
/// at `inputs`.
pub fn grad_check(f: impl ScalarFn, inputs: &[Tensor], eps: f64) -> Result<f64> {
    let analytic = analytic_gradients(&f, inputs)?;
    let numeric = numeric_gradients(&f, inputs, eps)?;
    Ok(max_relative_error(&analytic, &numeric))
}

/// Run `grad_check` over every tape primitive with random inputs drawn from
/// `seed`, returning the worst relative error seen. Outputs are reduced to a
/// scalar through a fixed random weighting so no gradient is structurally
/// zero; leaky_relu inputs are kept away from the kink at 0.
pub fn primitive_grad_battery(seed: u64, eps: f64) -> Result<f64> {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut tensor = |rows: usize, cols: usize| {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        Tensor::new(rows, cols, data).expect("consistent shape")
    };

    // Scalarize by sum(output * W) with W a constant companion input so the
    // upstream gradient is dense and non-uniform.
    fn weighted(tape: &mut Tape, out: ValueId, weights: ValueId) -> Result<ValueId> {
        let prod = tape.mul_elem(out, weights)?;
        Ok(tape.sum(prod))
    }

    let mut worst = 0.0f64;
    let mut run = |err: Result<f64>| -> Result<()> {
        worst = worst.max(err?);
        Ok(())
    };

    // matmul
    run(grad_check(
        |tape: &mut Tape, ids: &[ValueId]| {
            let c = tape.matmul(ids[0], ids[1])?;
            weighted(tape, c, ids[2])
        },
        &[tensor(3, 4), tensor(4, 2), tensor(3, 2)],
        eps,
    ))?;

    // matmul_nt
    run(grad_check(
        |tape: &mut Tape, ids: &[ValueId]| {
            let c = tape.matmul_nt(ids[0], ids[1])?;
            weighted(tape, c, ids[2])
        },
        &[tensor(3, 4), tensor(5, 4), tensor(3, 5)],
        eps,
    ))?;

    // affine (bias broadcast over rows)
    run(grad_check(
        |tape: &mut Tape, ids: &[ValueId]| {
            let c = tape.affine(ids[0], ids[1], ids[2])?;
            weighted(tape, c, ids[3])
        },
        &[tensor(3, 4), tensor(4, 2), tensor(1, 2), tensor(3, 2)],
        eps,
    ))?;

    // add and mul_elem
    run(grad_check(
        |tape: &mut Tape, ids: &[ValueId]| {
            let c = tape.add(ids[0], ids[1])?;
            weighted(tape, c, ids[2])
        },
        &[tensor(2, 3), tensor(2, 3), tensor(2, 3)],
        eps,
    ))?;
    run(grad_check(
        |tape: &mut Tape, ids: &[ValueId]| {
            let c = tape.mul_elem(ids[0], ids[1])?;
            weighted(tape, c, ids[2])
        },
        &[tensor(2, 3), tensor(2, 3), tensor(2, 3)],
        eps,
    ))?;

    // scale
    run(grad_check(
        |tape: &mut Tape, ids: &[ValueId]| {
            let c = tape.scale(ids[0], -1.7);
            weighted(tape, c, ids[1])
        },
        &[tensor(2, 3), tensor(2, 3)],
        eps,
    ))?;

    // sigmoid
    run(grad_check(
        |tape: &mut Tape, ids: &[ValueId]| {
            let c = tape.sigmoid(ids[0]);
            weighted(tape, c, ids[1])
        },
        &[tensor(2, 3), tensor(2, 3)],
        eps,
    ))?;

    // leaky_relu, inputs nudged away from the kink
    let mut leaky_input = tensor(2, 3);
    for v in leaky_input.data_mut() {
        if v.abs() < 10.0 * eps {
            *v = if *v >= 0.0 { 20.0 * eps } else { -20.0 * eps };
        }
    }
    run(grad_check(
        |tape: &mut Tape, ids: &[ValueId]| {
            let c = tape.leaky_relu(ids[0], 0.01)?;
            weighted(tape, c, ids[1])
        },
        &[leaky_input, tensor(2, 3)],
        eps,
    ))?;

    // softmax_rows
    run(grad_check(
        |tape: &mut Tape, ids: &[ValueId]| {
            let c = tape.softmax_rows(ids[0]);
            weighted(tape, c, ids[1])
        },
        &[tensor(2, 4), tensor(2, 4)],
        eps,
    ))?;

    // stack_rows + flatten
    run(grad_check(
        |tape: &mut Tape, ids: &[ValueId]| {
            let s = tape.stack_rows(&ids[..3])?;
            let f = tape.flatten(s);
            weighted(tape, f, ids[3])
        },
        &[tensor(1, 3), tensor(1, 3), tensor(1, 3), tensor(1, 9)],
        eps,
    ))?;

    // gather_rows picking rows out of batched sources
    run(grad_check(
        |tape: &mut Tape, ids: &[ValueId]| {
            let s = tape.gather_rows(&[(ids[0], 1), (ids[1], 0)])?;
            weighted(tape, s, ids[2])
        },
        &[tensor(2, 3), tensor(2, 3), tensor(2, 3)],
        eps,
    ))?;

    // concat_cols
    run(grad_check(
        |tape: &mut Tape, ids: &[ValueId]| {
            let c = tape.concat_cols(&ids[..2])?;
            weighted(tape, c, ids[2])
        },
        &[tensor(2, 2), tensor(2, 3), tensor(2, 5)],
        eps,
    ))?;

    // scaled_dot_attention, gradients through both outputs
    run(grad_check(
        |tape: &mut Tape, ids: &[ValueId]| {
            let (out, weights) = tape.scaled_dot_attention(ids[0], ids[1], ids[2])?;
            let a = weighted(tape, out, ids[3])?;
            let b = weighted(tape, weights, ids[4])?;
            tape.add(a, b)
        },
        &[
            tensor(3, 4),
            tensor(3, 4),
            tensor(3, 4),
            tensor(3, 4),
            tensor(3, 3),
        ],
        eps,
    ))?;

    // cross_entropy
    run(grad_check(
        |tape: &mut Tape, ids: &[ValueId]| tape.cross_entropy(ids[0], &[2, 0, 1, 1]),
        &[tensor(4, 3)],
        eps,
    ))?;

    Ok(worst)
}
