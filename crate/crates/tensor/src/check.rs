//! Central finite-difference gradient oracle.
//!
//! Only forward values are used here; nothing in this module touches the
//! backward rules it is checking.

use rand::{Rng, RngExt};

use crate::{Graph, NodeId, Result, Tensor};

/// Relative step for the central difference: `h = 1e-5 * max(1, |x|)`.
pub const REL_STEP: f64 = 1e-5;

/// Evaluates the scalar objective built by `build` on fresh leaves holding
/// `inputs`. Non-scalar outputs are contracted against a fixed pseudo-random
/// weight vector so the check covers a full vector-Jacobian product.
fn objective<F>(inputs: &[Tensor<f64>], build: &F, track: bool) -> Result<(Graph<f64>, Vec<NodeId>, NodeId)>
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs
        .iter()
        .map(|t| g.leaf(t.shape(), t.data().to_vec(), track))
        .collect::<Result<_>>()?;
    let out = build(&mut g, &ids)?;
    let n = g.value(out).len();
    let loss = if n == 1 {
        out
    } else {
        let w: Vec<f64> = (0..n)
            .map(|i| ((i as f64 + 1.0) * 0.7548776662).fract() * 2.0 - 1.0)
            .collect();
        let shape = g.shape(out).to_vec();
        let w = g.constant(&shape, w)?;
        let p = g.mul(out, w)?;
        g.sum_all(p)?
    };
    Ok((g, ids, loss))
}

/// Worst norm-wise relative error `|a - n| / max(|a|, |n|)` over all inputs,
/// where `a` is the backward gradient and `n` the central difference.
/// Pairs whose norms are both below `1e-10` count as exact.
pub fn max_relative_error<F>(inputs: &[Tensor<f64>], build: F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
{
    let (g, ids, loss) = objective(inputs, &build, true)?;
    let grads = g.backward(loss)?;
    let mut worst = 0.0f64;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(ids[k], input.numel());
        let mut numeric = vec![0.0; input.numel()];
        for j in 0..input.numel() {
            let x = input.data()[j];
            let h = REL_STEP * x.abs().max(1.0);
            let eval = |v: f64| -> Result<f64> {
                let mut shifted = inputs.to_vec();
                shifted[k].data_mut()[j] = v;
                let (g, _, loss) = objective(&shifted, &build, false)?;
                Ok(g.item(loss))
            };
            numeric[j] = (eval(x + h)? - eval(x - h)?) / (2.0 * h);
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < 1e-10 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Uniform tensor in `[lo, hi)`.
pub fn uniform(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Uniform magnitudes in `[lo, hi)` with random sign; keeps inputs away
/// from kinks at zero.
pub fn signed_away_from_zero(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(lo..hi);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

fn dims(rng: &mut impl Rng, rank: usize, max: usize) -> Vec<usize> {
    (0..rank).map(|_| rng.random_range(1..=max)).collect()
}

/// One randomized gradient-check trial for a single forward op.
pub struct OpCase {
    pub name: &'static str,
    pub trial: fn(&mut rand_chacha::ChaCha8Rng) -> Result<f64>,
}

/// Every differentiable op of the engine with a randomized input generator.
pub fn op_cases() -> Vec<OpCase> {
    vec![
        OpCase {
            name: "matmul",
            trial: |r| {
                let d = dims(r, 3, 5);
                let a = uniform(r, &[d[0], d[1]], -1.0, 1.0);
                let b = uniform(r, &[d[1], d[2]], -1.0, 1.0);
                max_relative_error(&[a, b], |g, x| g.matmul(x[0], x[1]))
            },
        },
        OpCase {
            name: "conv1d",
            trial: |r| {
                let (batch, cin, cout) = (r.random_range(1..=2), r.random_range(1..=3), r.random_range(1..=3));
                let k = r.random_range(1..=4);
                let stride = r.random_range(1..=3);
                let pad = r.random_range(0..=2);
                let len = r.random_range(k.max(3)..=9);
                let x = uniform(r, &[batch, cin, len], -1.0, 1.0);
                let w = uniform(r, &[cout, cin, k], -1.0, 1.0);
                let b = uniform(r, &[cout], -1.0, 1.0);
                max_relative_error(&[x, w, b], move |g, v| g.conv1d(v[0], v[1], Some(v[2]), stride, pad))
            },
        },
        OpCase {
            name: "add",
            trial: |r| broadcast_trial(r, |g, a, b| g.add(a, b), false),
        },
        OpCase {
            name: "sub",
            trial: |r| broadcast_trial(r, |g, a, b| g.sub(a, b), false),
        },
        OpCase {
            name: "mul",
            trial: |r| broadcast_trial(r, |g, a, b| g.mul(a, b), false),
        },
        OpCase {
            name: "div",
            trial: |r| broadcast_trial(r, |g, a, b| g.div(a, b), true),
        },
        OpCase {
            name: "add_scalar",
            trial: |r| {
                let c = r.random_range(-2.0..2.0);
                let shape = dims(r, 2, 4);
                let x = uniform(r, &shape, -1.0, 1.0);
                max_relative_error(&[x], move |g, v| g.add_scalar(v[0], c))
            },
        },
        OpCase {
            name: "mul_scalar",
            trial: |r| {
                let c = r.random_range(-2.0..2.0);
                let shape = dims(r, 2, 4);
                let x = uniform(r, &shape, -1.0, 1.0);
                max_relative_error(&[x], move |g, v| g.mul_scalar(v[0], c))
            },
        },
        OpCase {
            name: "relu",
            trial: |r| {
                let shape = dims(r, 2, 5);
                let x = signed_away_from_zero(r, &shape, 0.05, 2.0);
                max_relative_error(&[x], |g, v| g.relu(v[0]))
            },
        },
        OpCase {
            name: "exp",
            trial: |r| {
                let shape = dims(r, 2, 4);
                let x = uniform(r, &shape, -2.0, 2.0);
                max_relative_error(&[x], |g, v| g.exp(v[0]))
            },
        },
        OpCase {
            name: "log",
            trial: |r| {
                let shape = dims(r, 2, 4);
                let x = uniform(r, &shape, 0.2, 3.0);
                max_relative_error(&[x], |g, v| g.log(v[0]))
            },
        },
        OpCase {
            name: "square",
            trial: |r| {
                let shape = dims(r, 2, 4);
                let x = uniform(r, &shape, -2.0, 2.0);
                max_relative_error(&[x], |g, v| g.square(v[0]))
            },
        },
        OpCase {
            name: "sqrt",
            trial: |r| {
                let shape = dims(r, 2, 4);
                let x = uniform(r, &shape, 0.2, 3.0);
                max_relative_error(&[x], |g, v| g.sqrt(v[0]))
            },
        },
        OpCase {
            name: "abs",
            trial: |r| {
                let shape = dims(r, 2, 5);
                let x = signed_away_from_zero(r, &shape, 0.05, 2.0);
                max_relative_error(&[x], |g, v| g.abs(v[0]))
            },
        },
        OpCase {
            name: "clamp",
            trial: |r| {
                // Values keep at least 0.05 from either bound.
                let shape = dims(r, 2, 5);
                let n: usize = shape.iter().product();
                let data = (0..n)
                    .map(|_| match r.random_range(0..3) {
                        0 => r.random_range(-2.0..-0.55),
                        1 => r.random_range(-0.45..0.45),
                        _ => r.random_range(0.55..2.0),
                    })
                    .collect();
                let x = Tensor::new(&shape, data)?;
                max_relative_error(&[x], |g, v| g.clamp(v[0], -0.5, 0.5))
            },
        },
        OpCase {
            name: "softmax",
            trial: |r| {
                let shape = dims(r, 2, 5);
                let x = uniform(r, &shape, -3.0, 3.0);
                max_relative_error(&[x], |g, v| g.softmax(v[0]))
            },
        },
        OpCase {
            name: "log_softmax",
            trial: |r| {
                let shape = dims(r, 2, 5);
                let x = uniform(r, &shape, -3.0, 3.0);
                max_relative_error(&[x], |g, v| g.log_softmax(v[0]))
            },
        },
        OpCase {
            name: "sum",
            trial: |r| {
                let axis = r.random_range(0..3);
                let shape = dims(r, 3, 4);
                let x = uniform(r, &shape, -1.0, 1.0);
                max_relative_error(&[x], move |g, v| g.sum(v[0], axis))
            },
        },
        OpCase {
            name: "mean",
            trial: |r| {
                let axis = r.random_range(0..3);
                let shape = dims(r, 3, 4);
                let x = uniform(r, &shape, -1.0, 1.0);
                max_relative_error(&[x], move |g, v| g.mean(v[0], axis))
            },
        },
        OpCase {
            name: "variance",
            trial: |r| {
                let axis = r.random_range(0..3);
                let unbiased = r.random_bool(0.5);
                let mut shape = dims(r, 3, 4);
                shape[axis] = shape[axis].max(2);
                let x = uniform(r, &shape, -1.0, 1.0);
                max_relative_error(&[x], move |g, v| g.variance(v[0], axis, unbiased))
            },
        },
        OpCase {
            name: "sum_all",
            trial: |r| {
                let shape = dims(r, 3, 4);
                let x = uniform(r, &shape, -1.0, 1.0);
                max_relative_error(&[x], |g, v| g.sum_all(v[0]))
            },
        },
        OpCase {
            name: "mean_all",
            trial: |r| {
                let shape = dims(r, 3, 4);
                let x = uniform(r, &shape, -1.0, 1.0);
                max_relative_error(&[x], |g, v| g.mean_all(v[0]))
            },
        },
        OpCase {
            name: "concat",
            trial: |r| {
                let axis = r.random_range(0..3);
                let base = dims(r, 3, 3);
                let parts: Vec<Tensor<f64>> = (0..r.random_range(2..=3))
                    .map(|_| {
                        let mut s = base.clone();
                        s[axis] = r.random_range(1..=3);
                        uniform(r, &s, -1.0, 1.0)
                    })
                    .collect();
                max_relative_error(&parts, move |g, v| g.concat(v, axis))
            },
        },
        OpCase {
            name: "slice",
            trial: |r| {
                let axis = r.random_range(0..3);
                let mut shape = dims(r, 3, 4);
                shape[axis] = r.random_range(2..=5);
                let start = r.random_range(0..shape[axis]);
                let len = r.random_range(1..=shape[axis] - start);
                let x = uniform(r, &shape, -1.0, 1.0);
                max_relative_error(&[x], move |g, v| g.slice(v[0], axis, start, len))
            },
        },
        OpCase {
            name: "transpose",
            trial: |r| {
                let shape = dims(r, 2, 5);
                let x = uniform(r, &shape, -1.0, 1.0);
                max_relative_error(&[x], |g, v| g.transpose(v[0]))
            },
        },
        OpCase {
            name: "reshape",
            trial: |r| {
                let s = dims(r, 3, 3);
                let x = uniform(r, &s, -1.0, 1.0);
                let flat = [s[0] * s[1], s[2]];
                max_relative_error(&[x], move |g, v| g.reshape(v[0], &flat))
            },
        },
        OpCase {
            name: "scale_shift",
            trial: |r| {
                let s = dims(r, 3, 4);
                let x = uniform(r, &s, -1.0, 1.0);
                let scale = uniform(r, &[s[1]], -1.5, 1.5);
                let shift = uniform(r, &[s[1]], -1.0, 1.0);
                max_relative_error(&[x, scale, shift], |g, v| g.scale_shift(v[0], v[1], v[2]))
            },
        },
    ]
}

fn broadcast_trial(
    r: &mut rand_chacha::ChaCha8Rng,
    op: fn(&mut Graph<f64>, NodeId, NodeId) -> Result<NodeId>,
    positive_rhs: bool,
) -> Result<f64> {
    let a_shape = dims(r, 3, 4);
    let b_shape = match r.random_range(0..4) {
        0 => a_shape.clone(),
        1 => vec![a_shape[2]],
        2 => vec![a_shape[1], 1],
        _ => vec![1],
    };
    let (a_shape, b_shape) = if r.random_bool(0.5) {
        (a_shape, b_shape)
    } else {
        (b_shape, a_shape)
    };
    let a = uniform(r, &a_shape, -1.0, 1.0);
    let b = if positive_rhs {
        signed_away_from_zero(r, &b_shape, 0.5, 2.0)
    } else {
        uniform(r, &b_shape, -1.0, 1.0)
    };
    max_relative_error(&[a, b], move |g, v| op(g, v[0], v[1]))
}
