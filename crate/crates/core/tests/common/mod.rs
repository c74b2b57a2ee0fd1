//! Oracles and fixtures shared by the integration tests and the acceptance
//! gate. Every reference value here is computed from plain `f64` loops, not
//! from the graph code under test.
#![allow(dead_code)]

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vickd::attacks::{run_attack, AttackFamily, AttackSpec, EPSILON};
use vickd::losses::{
    ard_loss, cross_entropy, kd_loss, kl_div, rslad_loss, trades_loss, vic_kd_loss, vicreg_covariance,
    vicreg_invariance, vicreg_variance, VicregWeights,
};
use vickd::models::Classifier;
use vickd_tensor::check::{max_relative_error, uniform};
use vickd_tensor::{Graph, NodeId, Real, Tensor, TensorError};

/// Folds a library error into the engine error type the gradient checker
/// expects.
pub fn lift(e: vickd::Error) -> TensorError {
    match e {
        vickd::Error::Tensor(t) => t,
        other => TensorError::InvalidArgument {
            op: "loss",
            msg: other.to_string(),
        },
    }
}

pub fn labels(rng: &mut impl Rng, n: usize, c: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..c)).collect()
}

/// Random `[rows, cols]` matrix as nested rows.
pub fn matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.random_range(-scale..scale)).collect())
        .collect()
}

pub fn flat(m: &[Vec<f64>]) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

/// Evaluates a scalar graph expression in `f64`.
pub fn eval(build: impl FnOnce(&mut Graph<f64>) -> vickd::Result<NodeId>) -> f64 {
    let mut g = Graph::new();
    let out = build(&mut g).expect("graph builds");
    g.item(out)
}

pub fn leaf(g: &mut Graph<f64>, m: &[Vec<f64>]) -> NodeId {
    g.constant(&[m.len(), m[0].len()], flat(m)).unwrap()
}

// ---- direct formulas -------------------------------------------------------

pub fn log_softmax_row(z: &[f64], t: f64) -> Vec<f64> {
    let m = z.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v / t));
    let lse = m + z.iter().map(|&v| (v / t - m).exp()).sum::<f64>().ln();
    z.iter().map(|&v| v / t - lse).collect()
}

pub fn ce_oracle(logits: &[Vec<f64>], y: &[usize]) -> f64 {
    let n = logits.len() as f64;
    logits.iter().zip(y).map(|(row, &k)| -log_softmax_row(row, 1.0)[k]).sum::<f64>() / n
}

pub fn kl_oracle(p: &[Vec<f64>], q: &[Vec<f64>], t: f64) -> f64 {
    let n = p.len() as f64;
    p.iter()
        .zip(q)
        .map(|(a, b)| {
            let la = log_softmax_row(a, t);
            let lb = log_softmax_row(b, t);
            la.iter().zip(&lb).map(|(x, y)| x.exp() * (x - y)).sum::<f64>()
        })
        .sum::<f64>()
        / n
}

fn column_stats(z: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = z.len() as f64;
    let d = z[0].len();
    let mean: Vec<f64> = (0..d).map(|j| z.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let centered = z.iter().map(|r| r.iter().zip(&mean).map(|(v, m)| v - m).collect()).collect();
    (mean, centered)
}

pub fn var_oracle(z: &[Vec<f64>], gamma: f64, eps: f64) -> f64 {
    let n = z.len() as f64;
    let d = z[0].len();
    let (_, c) = column_stats(z);
    (0..d)
        .map(|j| {
            let var = c.iter().map(|r: &Vec<f64>| r[j] * r[j]).sum::<f64>() / (n - 1.0);
            (gamma - (var + eps).sqrt()).max(0.0)
        })
        .sum::<f64>()
        / d as f64
}

pub fn inv_oracle(z: &[Vec<f64>], zp: &[Vec<f64>]) -> f64 {
    let n = z.len() as f64;
    z.iter()
        .zip(zp)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
        .sum::<f64>()
        / n
}

pub fn cov_oracle(z: &[Vec<f64>]) -> f64 {
    let n = z.len() as f64;
    let d = z[0].len();
    let (_, c) = column_stats(z);
    let mut off = 0.0;
    for i in 0..d {
        for j in 0..d {
            if i != j {
                let cij = c.iter().map(|r: &Vec<f64>| r[i] * r[j]).sum::<f64>() / (n - 1.0);
                off += cij * cij;
            }
        }
    }
    off / d as f64
}

// ---- gradient-check trials for every loss ----------------------------------

pub struct LossCase {
    pub name: &'static str,
    pub trial: fn(&mut ChaCha8Rng) -> Result<f64, TensorError>,
}

fn dims(rng: &mut impl Rng) -> (usize, usize) {
    (rng.random_range(2..=5), rng.random_range(2..=6))
}

/// One finite-difference trial per call for each loss, with every logit and
/// embedding input treated as a differentiable leaf.
pub fn loss_cases() -> Vec<LossCase> {
    vec![
        LossCase {
            name: "cross_entropy",
            trial: |r| {
                let (n, c) = dims(r);
                let y = labels(r, n, c);
                max_relative_error(&[uniform(r, &[n, c], -3.0, 3.0)], |g, v| {
                    cross_entropy(g, v[0], &y).map_err(lift)
                })
            },
        },
        LossCase {
            name: "kl_div",
            trial: |r| {
                let (n, c) = dims(r);
                let t = r.random_range(0.5..4.0);
                let p = uniform(r, &[n, c], -3.0, 3.0);
                let q = uniform(r, &[n, c], -3.0, 3.0);
                max_relative_error(&[p, q], |g, v| kl_div(g, v[0], v[1], t).map_err(lift))
            },
        },
        LossCase {
            name: "kd_loss",
            trial: |r| {
                let (n, c) = dims(r);
                let y = labels(r, n, c);
                let w = r.random_range(0.0..1.0);
                let s = uniform(r, &[n, c], -3.0, 3.0);
                let t = uniform(r, &[n, c], -3.0, 3.0);
                max_relative_error(&[s, t], |g, v| kd_loss(g, v[0], v[1], &y, w, 4.0).map_err(lift))
            },
        },
        LossCase {
            name: "ard_loss",
            trial: |r| {
                let (n, c) = dims(r);
                let y = labels(r, n, c);
                let w = r.random_range(0.0..1.0);
                let s = uniform(r, &[n, c], -3.0, 3.0);
                let t = uniform(r, &[n, c], -3.0, 3.0);
                max_relative_error(&[s, t], |g, v| ard_loss(g, v[0], v[1], &y, w, 1.0).map_err(lift))
            },
        },
        LossCase {
            name: "rslad_loss",
            trial: |r| {
                let (n, c) = dims(r);
                let w = r.random_range(0.0..1.0);
                let a = uniform(r, &[n, c], -3.0, 3.0);
                let b = uniform(r, &[n, c], -3.0, 3.0);
                let t = uniform(r, &[n, c], -3.0, 3.0);
                max_relative_error(&[a, b, t], |g, v| rslad_loss(g, v[0], v[1], v[2], w).map_err(lift))
            },
        },
        LossCase {
            name: "trades_loss",
            trial: |r| {
                let (n, c) = dims(r);
                let y = labels(r, n, c);
                let a = uniform(r, &[n, c], -3.0, 3.0);
                let b = uniform(r, &[n, c], -3.0, 3.0);
                max_relative_error(&[a, b], |g, v| trades_loss(g, v[0], v[1], &y, 6.0).map_err(lift))
            },
        },
        LossCase {
            name: "vicreg_variance",
            trial: |r| {
                let (n, d) = dims(r);
                // Mixed column scales put some columns on each side of the hinge.
                let mut z = uniform(r, &[n, d], -1.0, 1.0);
                for (k, v) in z.data_mut().iter_mut().enumerate() {
                    *v *= 0.3 + 1.5 * (k % d) as f64;
                }
                max_relative_error(&[z], |g, v| vicreg_variance(g, v[0], 1.0, 1e-4).map_err(lift))
            },
        },
        LossCase {
            name: "vicreg_invariance",
            trial: |r| {
                let (n, d) = dims(r);
                let a = uniform(r, &[n, d], -2.0, 2.0);
                let b = uniform(r, &[n, d], -2.0, 2.0);
                max_relative_error(&[a, b], |g, v| vicreg_invariance(g, v[0], v[1]).map_err(lift))
            },
        },
        LossCase {
            name: "vicreg_covariance",
            trial: |r| {
                let (n, d) = dims(r);
                let z = uniform(r, &[n, d], -2.0, 2.0);
                max_relative_error(&[z], |g, v| vicreg_covariance(g, v[0]).map_err(lift))
            },
        },
        LossCase {
            name: "vic_kd_loss",
            trial: |r| {
                let (n, c) = dims(r);
                let d = r.random_range(2..=6);
                let y = labels(r, n, c);
                let alpha = r.random_range(0.0..1.0);
                let inputs = [
                    uniform(r, &[n, c], -3.0, 3.0),
                    uniform(r, &[n, c], -3.0, 3.0),
                    uniform(r, &[n, d], -2.0, 2.0),
                    uniform(r, &[n, d], -2.0, 2.0),
                ];
                let w = VicregWeights::default();
                max_relative_error(&inputs, |g, v| {
                    vic_kd_loss(g, v[0], v[1], v[2], v[3], &y, alpha, 6.0, &w)
                        .map(|t| t.total)
                        .map_err(lift)
                })
            },
        },
    ]
}

/// Worst error over `trials` runs of `case`, seeded per case name.
pub fn worst_loss_error(case: &LossCase, trials: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(vickd::data::derive_seed(11, case.name));
    (0..trials)
        .map(|_| (case.trial)(&mut rng).unwrap_or_else(|e| panic!("{}: {e}", case.name)))
        .fold(0.0, f64::max)
}

/// Largest `|oracle - graph|` of the three VICReg terms over `batches`
/// random batches with `n ∈ [2, 16]` and `d ∈ [1, 64]`.
pub fn vicreg_oracle_gap(batches: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..batches {
        let n = rng.random_range(2..=16);
        let d = rng.random_range(1..=64);
        let scale = rng.random_range(0.1..3.0);
        let z = matrix(&mut rng, n, d, scale);
        let zp = matrix(&mut rng, n, d, scale);
        let var = eval(|g| {
            let a = leaf(g, &zp);
            vicreg_variance(g, a, 1.0, 1e-4)
        });
        let inv = eval(|g| {
            let a = leaf(g, &z);
            let b = leaf(g, &zp);
            vicreg_invariance(g, a, b)
        });
        let cov = eval(|g| {
            let a = leaf(g, &zp);
            vicreg_covariance(g, a)
        });
        worst = worst
            .max((var - var_oracle(&zp, 1.0, 1e-4)).abs())
            .max((inv - inv_oracle(&z, &zp)).abs())
            .max((cov - cov_oracle(&zp)).abs());
    }
    worst
}

pub fn covariance_hand_case() -> f64 {
    eval(|g| {
        let z = g.constant(&[2, 2], vec![1.0, 1.0, -1.0, -1.0])?;
        vicreg_covariance(g, z)
    })
}

pub fn invariance_hand_case() -> f64 {
    eval(|g| {
        let z = g.constant(&[1, 2], vec![1.0, 0.0])?;
        let zp = g.constant(&[1, 2], vec![0.0, 1.0])?;
        vicreg_invariance(g, z, zp)
    })
}

/// Largest deviation of `vic_kd_loss(α)` from the line through its
/// endpoints over `inputs` random inputs and α ∈ {0, ¼, ½, ¾, 1}.
pub fn convexity_gap(inputs: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = VicregWeights::default();
    let mut worst = 0.0f64;
    for _ in 0..inputs {
        let n = rng.random_range(2..=8);
        let c = rng.random_range(2..=12);
        let d = rng.random_range(1..=16);
        let y = labels(&mut rng, n, c);
        let clean = matrix(&mut rng, n, c, 3.0);
        let adv = matrix(&mut rng, n, c, 3.0);
        let z = matrix(&mut rng, n, d, 2.0);
        let zp = matrix(&mut rng, n, d, 2.0);
        let value = |alpha: f64| {
            eval(|g| {
                let (a, b, p, q) = (leaf(g, &clean), leaf(g, &adv), leaf(g, &z), leaf(g, &zp));
                vic_kd_loss(g, a, b, p, q, &y, alpha, 6.0, &w).map(|t| t.total)
            })
        };
        let (v0, v1) = (value(0.0), value(1.0));
        for alpha in [0.0, 0.25, 0.5, 0.75, 1.0] {
            worst = worst.max((value(alpha) - (alpha * v1 + (1.0 - alpha) * v0)).abs());
        }
    }
    worst
}

// ---- attack fixtures -------------------------------------------------------

/// `logits = x W + b` with `W` stored `[len, classes]`.
#[derive(Debug, Clone)]
pub struct LinearModel {
    pub len: usize,
    pub classes: usize,
    pub w: Vec<f32>,
    pub b: Vec<f32>,
}

impl LinearModel {
    pub fn random(len: usize, classes: usize, rng: &mut impl Rng) -> Self {
        Self {
            len,
            classes,
            w: (0..len * classes).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
            b: (0..classes).map(|_| rng.random_range(-0.1f32..0.1)).collect(),
        }
    }
}

impl<T: Real> Classifier<T> for LinearModel {
    fn logits(&self, g: &mut Graph<T>, x: NodeId) -> vickd::Result<NodeId> {
        let w = g.constant(&[self.len, self.classes], self.w.iter().map(|&v| T::of(v as f64)).collect())?;
        let b = g.constant(&[1, self.classes], self.b.iter().map(|&v| T::of(v as f64)).collect())?;
        let h = g.matmul(x, w)?;
        Ok(g.add(h, b)?)
    }

    fn num_classes(&self) -> usize {
        self.classes
    }
}

/// Random inputs in `[-1, 1]` with a share of samples pinned to the range
/// ends, where projection and clipping interact.
pub fn attack_inputs(rng: &mut impl Rng, n: usize, len: usize) -> Vec<f32> {
    (0..n * len)
        .map(|k| match k % 7 {
            0 => 1.0,
            1 => -1.0,
            _ => rng.random_range(-1.0f32..=1.0),
        })
        .collect()
}

/// Families cycled through by the constraint sweep.
pub const FAMILIES: [AttackFamily; 4] = [AttackFamily::Fgsm, AttackFamily::Pgd, AttackFamily::ApgdCe, AttackFamily::ApgdT];

pub fn spec_for(family: AttackFamily, epsilon: f64, steps: usize) -> AttackSpec {
    match family {
        AttackFamily::Fgsm => AttackSpec::fgsm(epsilon),
        AttackFamily::Pgd => AttackSpec::pgd_eval(epsilon).with_steps(steps),
        AttackFamily::ApgdCe => AttackSpec::apgd_ce(epsilon).with_steps(steps),
        AttackFamily::ApgdT => AttackSpec::apgd_t(epsilon).with_steps(steps),
    }
}

/// Largest `‖x_adv − x‖∞ − ε` and the count of out-of-range samples over
/// `invocations` attacks on random linear models.
pub fn constraint_sweep(invocations: usize, seed: u64) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_excess = f64::NEG_INFINITY;
    let mut out_of_range = 0;
    for k in 0..invocations {
        let family = FAMILIES[k % FAMILIES.len()];
        let len = rng.random_range(4..=24);
        let classes = rng.random_range(2..=6);
        let n = rng.random_range(1..=6);
        let eps = EPSILON * rng.random_range(0.0..40.0);
        let steps = rng.random_range(1..=8);
        let model = LinearModel::random(len, classes, &mut rng);
        let x = attack_inputs(&mut rng, n, len);
        let y = labels(&mut rng, n, classes);
        let mut spec = spec_for(family, eps, steps);
        spec.restarts = rng.random_range(1..=2);
        spec.targeted_classes = spec.targeted_classes.min(classes - 1).max(1);
        let adv = run_attack(&model, &x, &y, len, &spec, &mut rng).expect("attack runs");
        for (a, b) in adv.iter().zip(&x) {
            worst_excess = worst_excess.max((a - b).abs() as f64 - eps);
            if !(-1.0..=1.0).contains(a) {
                out_of_range += 1;
            }
        }
    }
    (worst_excess, out_of_range)
}

/// Random `[n, c]` logits tensor in `f64`.
pub fn logits_tensor(rng: &mut impl Rng, n: usize, c: usize) -> Tensor<f64> {
    uniform(rng, &[n, c], -3.0, 3.0)
}
