//! ℓ∞ white-box attacks on waveform batches.
//!
//! Every attack returns points inside the ε-ball around its input and inside
//! `[-1, 1]`. Gradients flow through the attacked model only; its
//! parameters are bound as constants.

use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};
use vickd_tensor::{Graph, NodeId};

use crate::error::{config_err, Error, Result};
use crate::models::Classifier;

/// Perturbation radius used throughout the experiments.
pub const EPSILON: f64 = 1.5e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackFamily {
    Fgsm,
    Pgd,
    ApgdCe,
    ApgdT,
}

impl AttackFamily {
    pub fn name(self) -> &'static str {
        match self {
            AttackFamily::Fgsm => "fgsm",
            AttackFamily::Pgd => "pgd",
            AttackFamily::ApgdCe => "apgd-ce",
            AttackFamily::ApgdT => "apgd-t",
        }
    }
}

impl std::str::FromStr for AttackFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        [AttackFamily::Fgsm, AttackFamily::Pgd, AttackFamily::ApgdCe, AttackFamily::ApgdT]
            .into_iter()
            .find(|f| f.name() == norm || (norm == "apgd" && *f == AttackFamily::ApgdCe))
            .ok_or_else(|| config_err(format!("unknown attack family {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub family: AttackFamily,
    pub epsilon: f64,
    /// Sign-step length. FGSM always steps by ε; APGD starts from this
    /// value and halves it adaptively.
    pub step_size: f64,
    pub steps: usize,
    /// Total number of runs; `0` behaves like `1`, as does `steps == 0`.
    /// Runs after the first always start from a random point in the ball.
    pub restarts: usize,
    pub random_init: bool,
    /// Number of runner-up classes APGD-T targets.
    pub targeted_classes: usize,
}

impl AttackSpec {
    /// Inner maximisation used during adversarial training.
    pub fn training_pgd() -> Self {
        Self {
            family: AttackFamily::Pgd,
            epsilon: EPSILON,
            step_size: 3e-4,
            steps: 10,
            restarts: 1,
            random_init: true,
            targeted_classes: 0,
        }
    }

    pub fn fgsm(epsilon: f64) -> Self {
        Self {
            family: AttackFamily::Fgsm,
            epsilon,
            step_size: epsilon,
            steps: 1,
            restarts: 1,
            random_init: false,
            targeted_classes: 0,
        }
    }

    pub fn pgd_eval(epsilon: f64) -> Self {
        Self {
            family: AttackFamily::Pgd,
            epsilon,
            step_size: epsilon / 4.0,
            steps: 40,
            restarts: 2,
            random_init: true,
            targeted_classes: 0,
        }
    }

    pub fn apgd_ce(epsilon: f64) -> Self {
        Self {
            family: AttackFamily::ApgdCe,
            epsilon,
            step_size: 2.0 * epsilon,
            steps: 100,
            restarts: 1,
            random_init: false,
            targeted_classes: 0,
        }
    }

    pub fn apgd_t(epsilon: f64) -> Self {
        Self {
            family: AttackFamily::ApgdT,
            targeted_classes: 3,
            ..Self::apgd_ce(epsilon)
        }
    }

    /// APGD-CE, APGD-T and PGD at their evaluation budgets.
    pub fn ensemble(epsilon: f64) -> Vec<Self> {
        vec![Self::apgd_ce(epsilon), Self::apgd_t(epsilon), Self::pgd_eval(epsilon)]
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    pub fn label(&self) -> String {
        self.family.name().to_string()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(config_err("attack.eps must be non-negative"));
        }
        // A zero-radius ball admits a zero step; otherwise the step must move.
        let step_ok = self.step_size.is_finite() && (self.step_size > 0.0 || self.epsilon == 0.0 && self.step_size == 0.0);
        if !step_ok {
            return Err(config_err("attack.step must be positive"));
        }
        if self.family == AttackFamily::ApgdT && self.targeted_classes == 0 {
            return Err(config_err("apgd-t needs at least one target class"));
        }
        Ok(())
    }

    /// Without steps there is nothing to restart.
    fn runs(&self) -> usize {
        if self.steps == 0 {
            1
        } else {
            self.restarts.max(1)
        }
    }
}

/// What an attack maximises, per sample.
#[derive(Debug, Clone)]
pub enum Objective {
    /// Cross-entropy against the true labels.
    CrossEntropy(Vec<usize>),
    /// KL(softmax(reference) ‖ softmax(model(x'))), with reference logits
    /// flattened `[B, C]`.
    Kl(Vec<f32>),
    /// Targeted DLR loss pushing each sample toward `targets[i]`. With fewer
    /// than four classes the unnormalised margin `z_t - z_y` is used.
    TargetedDlr { labels: Vec<usize>, targets: Vec<usize> },
}

impl Objective {
    fn labels(&self) -> Option<&[usize]> {
        match self {
            Objective::CrossEntropy(y) | Objective::TargetedDlr { labels: y, .. } => Some(y),
            Objective::Kl(_) => None,
        }
    }
}

/// Values of a model at one batch point.
struct Probe {
    loss: Vec<f32>,
    grad: Vec<f32>,
    logits: Vec<f32>,
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Class indices of a logits row sorted by decreasing value; ties keep the
/// lower index first.
fn ranking(row: &[f32]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    idx
}

/// Predicted class for each row of `x`.
pub fn predict<M: Classifier<f32> + ?Sized>(model: &M, x: &[f32], len: usize) -> Result<Vec<usize>> {
    let logits = logits_of(model, x, len)?;
    let c = model.num_classes();
    Ok(logits.chunks(c).map(argmax).collect())
}

/// Logits for each row of `x`, flattened `[B, C]`.
pub fn logits_of<M: Classifier<f32> + ?Sized>(model: &M, x: &[f32], len: usize) -> Result<Vec<f32>> {
    let b = x.len() / len;
    let mut g = Graph::without_param_grads();
    let xi = g.constant(&[b, len], x.to_vec())?;
    let l = model.logits(&mut g, xi)?;
    Ok(g.value(l).to_vec())
}

fn per_sample_objective(g: &mut Graph<f32>, logits: NodeId, objective: &Objective) -> Result<NodeId> {
    let (b, c) = match g.shape(logits) {
        [b, c] => (*b, *c),
        s => return Err(Error::Model(format!("logits must be 2-D, got {s:?}"))),
    };
    let check = |y: &[usize]| -> Result<()> {
        if y.len() != b || y.iter().any(|&v| v >= c) {
            return Err(Error::Data(format!("attack labels do not fit a [{b}, {c}] batch")));
        }
        Ok(())
    };
    match objective {
        Objective::CrossEntropy(labels) => {
            check(labels)?;
            let mut mask = vec![0.0f32; b * c];
            for (i, &y) in labels.iter().enumerate() {
                mask[i * c + y] = -1.0;
            }
            let mask = g.constant(&[b, c], mask)?;
            let lp = g.log_softmax(logits)?;
            let picked = g.mul(lp, mask)?;
            Ok(g.sum(picked, 1)?)
        }
        Objective::Kl(reference) => {
            if reference.len() != b * c {
                return Err(Error::Data("reference logits do not match the batch".into()));
            }
            let mut p = vec![0.0f32; b * c];
            let mut lp = vec![0.0f32; b * c];
            for i in 0..b {
                let row = &reference[i * c..(i + 1) * c];
                let m = row.iter().fold(f32::NEG_INFINITY, |a, &v| a.max(v));
                let z: f32 = row.iter().map(|&v| (v - m).exp()).sum();
                for j in 0..c {
                    lp[i * c + j] = row[j] - m - z.ln();
                    p[i * c + j] = lp[i * c + j].exp();
                }
            }
            let p = g.constant(&[b, c], p)?;
            let lp = g.constant(&[b, c], lp)?;
            let lq = g.log_softmax(logits)?;
            let diff = g.sub(lp, lq)?;
            let terms = g.mul(p, diff)?;
            Ok(g.sum(terms, 1)?)
        }
        Objective::TargetedDlr { labels, targets } => {
            check(labels)?;
            check(targets)?;
            let values = g.value(logits).to_vec();
            let mut num = vec![0.0f32; b * c];
            let mut den = vec![0.0f32; b * c];
            for i in 0..b {
                num[i * c + targets[i]] += 1.0;
                num[i * c + labels[i]] -= 1.0;
                if c >= 4 {
                    let r = ranking(&values[i * c..(i + 1) * c]);
                    den[i * c + r[0]] += 1.0;
                    den[i * c + r[2]] -= 0.5;
                    den[i * c + r[3]] -= 0.5;
                }
            }
            let num = g.constant(&[b, c], num)?;
            let num = g.mul(logits, num)?;
            let num = g.sum(num, 1)?;
            if c < 4 {
                return Ok(num);
            }
            let den = g.constant(&[b, c], den)?;
            let den = g.mul(logits, den)?;
            let den = g.sum(den, 1)?;
            let den = g.add_scalar(den, 1e-12)?;
            Ok(g.div(num, den)?)
        }
    }
}

fn probe<M: Classifier<f32> + ?Sized>(model: &M, x: &[f32], len: usize, objective: &Objective) -> Result<Probe> {
    let b = x.len() / len;
    let mut g = Graph::without_param_grads();
    let xi = g.leaf(&[b, len], x.to_vec(), true)?;
    let logits = model.logits(&mut g, xi)?;
    let per = per_sample_objective(&mut g, logits, objective)?;
    let total = g.sum_all(per)?;
    let grads = g.backward(total)?;
    let grad = grads.get_or_zeros(xi, x.len());
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite input gradient".into()));
    }
    Ok(Probe {
        loss: g.value(per).to_vec(),
        grad,
        logits: g.value(logits).to_vec(),
    })
}

fn sign(v: f32) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Clamps `v` into the ε-ball around `x` and into `[-1, 1]`.
#[inline]
pub fn project(v: f32, x: f32, eps: f32) -> f32 {
    v.clamp(x - eps, x + eps).clamp(-1.0, 1.0)
}

fn random_start(x: &[f32], eps: f32, rng: &mut impl Rng) -> Vec<f32> {
    x.iter()
        .map(|&v| {
            let d = if eps > 0.0 { rng.random_range(-eps..=eps) } else { 0.0 };
            project(v + d, v, eps)
        })
        .collect()
}

fn check_batch(x: &[f32], len: usize) -> Result<usize> {
    if len == 0 || !x.len().is_multiple_of(len) || x.is_empty() {
        return Err(Error::Data(format!("batch of {} samples is not a multiple of {len}", x.len())));
    }
    Ok(x.len() / len)
}

/// One sign step from `x_adv` along `grad`, projected around `x`.
fn sign_step(x: &[f32], x_adv: &[f32], grad: &[f32], step: &[f32], len: usize, eps: f32) -> Vec<f32> {
    x_adv
        .iter()
        .zip(grad)
        .zip(x)
        .enumerate()
        .map(|(k, ((&a, &gr), &x0))| project(a + step[k / len] * sign(gr), x0, eps))
        .collect()
}

/// Result of a multi-run attack: the chosen point plus per-sample
/// objective and whether it fools the model.
#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub x_adv: Vec<f32>,
    pub objective: Vec<f32>,
    pub fooled: Vec<bool>,
}

struct Tracker {
    x: Vec<f32>,
    loss: Vec<f32>,
    fooled: Vec<bool>,
    len: usize,
}

impl Tracker {
    fn new(x: &[f32], b: usize, len: usize) -> Self {
        Self {
            x: x.to_vec(),
            loss: vec![f32::NEG_INFINITY; b],
            fooled: vec![false; b],
            len,
        }
    }

    /// Keeps, per sample, the fooling point if any, otherwise the highest
    /// objective.
    fn offer(&mut self, x: &[f32], loss: &[f32], fooled: &[bool]) {
        for i in 0..loss.len() {
            let better = match (self.fooled[i], fooled[i]) {
                (false, true) => true,
                (true, false) => false,
                _ => loss[i] > self.loss[i],
            };
            if better {
                self.loss[i] = loss[i];
                self.fooled[i] = fooled[i];
                let r = i * self.len..(i + 1) * self.len;
                self.x[r.clone()].copy_from_slice(&x[r]);
            }
        }
    }

    fn outcome(self) -> AttackOutcome {
        AttackOutcome {
            x_adv: self.x,
            objective: self.loss,
            fooled: self.fooled,
        }
    }
}

fn fooled_flags(logits: &[f32], labels: Option<&[usize]>, b: usize) -> Vec<bool> {
    match labels {
        Some(y) => {
            let c = logits.len() / b;
            (0..b).map(|i| argmax(&logits[i * c..(i + 1) * c]) != y[i]).collect()
        }
        None => vec![false; b],
    }
}

/// Single sign step of size ε on the cross-entropy gradient.
pub fn fgsm<M: Classifier<f32> + ?Sized>(
    model: &M,
    x: &[f32],
    labels: &[usize],
    len: usize,
    epsilon: f64,
) -> Result<Vec<f32>> {
    let b = check_batch(x, len)?;
    let eps = epsilon as f32;
    if eps == 0.0 {
        return Ok(x.to_vec());
    }
    let p = probe(model, x, len, &Objective::CrossEntropy(labels.to_vec()))?;
    Ok(sign_step(x, x, &p.grad, &vec![eps; b], len, eps))
}

/// Projected sign-gradient ascent on `objective`. Returns, per sample, the
/// best iterate over all runs; the starting point only counts when
/// `steps == 0`.
pub fn pgd<M: Classifier<f32> + ?Sized>(
    model: &M,
    x: &[f32],
    len: usize,
    spec: &AttackSpec,
    objective: &Objective,
    rng: &mut impl Rng,
) -> Result<AttackOutcome> {
    let b = check_batch(x, len)?;
    let eps = spec.epsilon as f32;
    let step = vec![spec.step_size as f32; b];
    let mut best = Tracker::new(x, b, len);
    for run in 0..spec.runs() {
        let mut cur = if spec.random_init || run > 0 {
            random_start(x, eps, rng)
        } else {
            x.to_vec()
        };
        let mut p = probe(model, &cur, len, objective)?;
        if spec.steps == 0 {
            let fooled = fooled_flags(&p.logits, objective.labels(), b);
            best.offer(&cur, &p.loss, &fooled);
            continue;
        }
        for _ in 0..spec.steps {
            cur = sign_step(x, &cur, &p.grad, &step, len, eps);
            p = probe(model, &cur, len, objective)?;
            let fooled = fooled_flags(&p.logits, objective.labels(), b);
            best.offer(&cur, &p.loss, &fooled);
        }
    }
    Ok(best.outcome())
}

/// Checkpoint iterations of the adaptive step-size schedule for a budget of
/// `steps` iterations.
pub fn apgd_checkpoints(steps: usize) -> Vec<usize> {
    let mut p = vec![0.0f64, 0.22];
    while *p.last().unwrap() < 1.0 {
        let n = p.len();
        let next = p[n - 1] + (p[n - 1] - p[n - 2] - 0.03).max(0.06);
        p.push(next);
    }
    let mut w: Vec<usize> = p
        .iter()
        .filter(|&&v| v <= 1.0)
        .map(|&v| (v * steps as f64 - 1e-9).ceil() as usize)
        .collect();
    w.dedup();
    w.retain(|&v| v > 0);
    w
}

const APGD_MOMENTUM: f32 = 0.75;
const APGD_RHO: f64 = 0.75;

/// One APGD run from `start`. The returned point has the best objective seen
/// along the run, including `start`.
fn apgd_run<M: Classifier<f32> + ?Sized>(
    model: &M,
    x: &[f32],
    start: Vec<f32>,
    len: usize,
    spec: &AttackSpec,
    objective: &Objective,
    best: &mut Tracker,
) -> Result<()> {
    let b = x.len() / len;
    let eps = spec.epsilon as f32;
    let labels = objective.labels();
    let mut step = vec![spec.step_size as f32; b];

    let mut cur = start;
    let mut p = probe(model, &cur, len, objective)?;
    best.offer(&cur, &p.loss, &fooled_flags(&p.logits, labels, b));
    if spec.steps == 0 || eps == 0.0 {
        return Ok(());
    }

    // Per-run best, used for restarts from the best point.
    let mut run_best_x = cur.clone();
    let mut run_best_loss = p.loss.clone();
    let mut run_best_grad = p.grad.clone();

    let checkpoints = apgd_checkpoints(spec.steps);
    let mut next_cp = 1usize;
    let mut last_cp = 0usize;
    let mut successes = vec![0usize; b];
    let mut loss_at_last_cp = run_best_loss.clone();
    let mut step_at_last_cp = step.clone();

    let mut prev = cur.clone();
    for k in 0..spec.steps {
        let z = sign_step(x, &cur, &p.grad, &step, len, eps);
        let next: Vec<f32> = if k == 0 {
            z
        } else {
            (0..cur.len())
                .map(|j| {
                    let v = cur[j] + APGD_MOMENTUM * (z[j] - cur[j]) + (1.0 - APGD_MOMENTUM) * (cur[j] - prev[j]);
                    project(v, x[j], eps)
                })
                .collect()
        };
        let np = probe(model, &next, len, objective)?;
        best.offer(&next, &np.loss, &fooled_flags(&np.logits, labels, b));
        for i in 0..b {
            if np.loss[i] > p.loss[i] {
                successes[i] += 1;
            }
            if np.loss[i] > run_best_loss[i] {
                run_best_loss[i] = np.loss[i];
                let r = i * len..(i + 1) * len;
                run_best_x[r.clone()].copy_from_slice(&next[r.clone()]);
                run_best_grad[r.clone()].copy_from_slice(&np.grad[r]);
            }
        }
        prev = cur;
        cur = next;
        p = np;

        let iter = k + 1;
        if next_cp < checkpoints.len() && iter == checkpoints[next_cp] {
            let window = (checkpoints[next_cp] - last_cp) as f64;
            for i in 0..b {
                let too_few = (successes[i] as f64) < APGD_RHO * window;
                let stalled = step_at_last_cp[i] == step[i] && loss_at_last_cp[i] == run_best_loss[i];
                step_at_last_cp[i] = step[i];
                loss_at_last_cp[i] = run_best_loss[i];
                if too_few || stalled {
                    step[i] *= 0.5;
                    let r = i * len..(i + 1) * len;
                    cur[r.clone()].copy_from_slice(&run_best_x[r.clone()]);
                    prev[r.clone()].copy_from_slice(&run_best_x[r.clone()]);
                    p.grad[r.clone()].copy_from_slice(&run_best_grad[r]);
                    p.loss[i] = run_best_loss[i];
                }
                successes[i] = 0;
            }
            last_cp = checkpoints[next_cp];
            next_cp += 1;
        }
    }
    Ok(())
}

/// Auto-PGD on cross-entropy with momentum and adaptive step halving.
pub fn apgd<M: Classifier<f32> + ?Sized>(
    model: &M,
    x: &[f32],
    labels: &[usize],
    len: usize,
    spec: &AttackSpec,
    rng: &mut impl Rng,
) -> Result<AttackOutcome> {
    apgd_with(model, x, len, spec, &Objective::CrossEntropy(labels.to_vec()), rng)
}

/// Auto-PGD on an arbitrary objective.
pub fn apgd_with<M: Classifier<f32> + ?Sized>(
    model: &M,
    x: &[f32],
    len: usize,
    spec: &AttackSpec,
    objective: &Objective,
    rng: &mut impl Rng,
) -> Result<AttackOutcome> {
    let b = check_batch(x, len)?;
    let mut best = Tracker::new(x, b, len);
    for run in 0..spec.runs() {
        let start = if spec.random_init || run > 0 {
            random_start(x, spec.epsilon as f32, rng)
        } else {
            x.to_vec()
        };
        apgd_run(model, x, start, len, spec, objective, &mut best)?;
    }
    Ok(best.outcome())
}

/// Targeted Auto-PGD: one run per runner-up class, ranked on the clean
/// logits, with the targeted DLR loss.
pub fn apgd_targeted<M: Classifier<f32> + ?Sized>(
    model: &M,
    x: &[f32],
    labels: &[usize],
    len: usize,
    spec: &AttackSpec,
    rng: &mut impl Rng,
) -> Result<AttackOutcome> {
    let b = check_batch(x, len)?;
    let c = model.num_classes();
    let clean = logits_of(model, x, len)?;
    let ranks: Vec<Vec<usize>> = (0..b)
        .map(|i| {
            ranking(&clean[i * c..(i + 1) * c])
                .into_iter()
                .filter(|&k| k != labels[i])
                .collect()
        })
        .collect();
    let n_targets = spec.targeted_classes.min(c - 1);
    let mut best = Tracker::new(x, b, len);
    for t in 0..n_targets {
        let objective = Objective::TargetedDlr {
            labels: labels.to_vec(),
            targets: ranks.iter().map(|r| r[t]).collect(),
        };
        // Objectives differ per target, so only fooling carries across runs.
        let run = apgd_with(model, x, len, spec, &objective, rng)?;
        let keep: Vec<f32> = run.fooled.iter().map(|&f| if f { 1.0 } else { 0.0 }).collect();
        best.offer(&run.x_adv, &keep, &run.fooled);
    }
    if n_targets == 0 {
        return Ok(AttackOutcome {
            x_adv: x.to_vec(),
            objective: vec![0.0; b],
            fooled: vec![false; b],
        });
    }
    Ok(best.outcome())
}

/// Dispatches `spec` with the cross-entropy objective (targeted DLR for
/// APGD-T) and returns the adversarial batch.
pub fn run_attack<M: Classifier<f32> + ?Sized>(
    model: &M,
    x: &[f32],
    labels: &[usize],
    len: usize,
    spec: &AttackSpec,
    rng: &mut impl Rng,
) -> Result<Vec<f32>> {
    spec.validate()?;
    Ok(match spec.family {
        AttackFamily::Fgsm => fgsm(model, x, labels, len, spec.epsilon)?,
        AttackFamily::Pgd => pgd(model, x, len, spec, &Objective::CrossEntropy(labels.to_vec()), rng)?.x_adv,
        AttackFamily::ApgdCe => apgd(model, x, labels, len, spec, rng)?.x_adv,
        AttackFamily::ApgdT => apgd_targeted(model, x, labels, len, spec, rng)?.x_adv,
    })
}

/// Per-sample robustness flags for an attack ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub attack_names: Vec<String>,
    pub clean_correct: Vec<bool>,
    /// `robust_to_each_attack[a][i]`: sample `i` is clean-correct and still
    /// correct after attack `a`.
    pub robust_to_each_attack: Vec<Vec<bool>>,
    /// AND over all attacks.
    pub robust_overall: Vec<bool>,
}

fn percent(flags: &[bool]) -> f64 {
    if flags.is_empty() {
        return 0.0;
    }
    100.0 * flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64
}

impl EnsembleResult {
    pub fn clean_accuracy(&self) -> f64 {
        percent(&self.clean_correct)
    }

    pub fn attack_accuracy(&self, a: usize) -> f64 {
        percent(&self.robust_to_each_attack[a])
    }

    pub fn robust_accuracy(&self) -> f64 {
        percent(&self.robust_overall)
    }
}

/// Runs every attack on every clean-correct sample in batches of
/// `batch_size`. A sample is robust iff it is clean-correct and survives
/// all attacks.
pub fn ensemble_eval<M: Classifier<f32> + ?Sized>(
    model: &M,
    x: &[f32],
    labels: &[usize],
    len: usize,
    specs: &[AttackSpec],
    batch_size: usize,
    rng: &mut impl Rng,
) -> Result<EnsembleResult> {
    let n = check_batch(x, len)?;
    if labels.len() != n {
        return Err(Error::Data(format!("{} labels for {n} samples", labels.len())));
    }
    if let Some(first) = specs.first() {
        if specs.iter().any(|s| s.epsilon != first.epsilon) {
            return Err(config_err("all attacks in an ensemble must share epsilon"));
        }
    }
    for s in specs {
        s.validate()?;
    }
    let bs = batch_size.max(1);
    let mut clean_correct = vec![false; n];
    let mut per_attack = vec![vec![false; n]; specs.len()];
    for start in (0..n).step_by(bs) {
        let end = (start + bs).min(n);
        let xb = &x[start * len..end * len];
        let pred = predict(model, xb, len)?;
        let idx: Vec<usize> = (start..end).filter(|&i| pred[i - start] == labels[i]).collect();
        for &i in &idx {
            clean_correct[i] = true;
        }
        if idx.is_empty() {
            continue;
        }
        let xs: Vec<f32> = idx.iter().flat_map(|&i| x[i * len..(i + 1) * len].iter().copied()).collect();
        let ys: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        for (a, spec) in specs.iter().enumerate() {
            let adv = run_attack(model, &xs, &ys, len, spec, rng)?;
            let pa = predict(model, &adv, len)?;
            for (k, &i) in idx.iter().enumerate() {
                per_attack[a][i] = pa[k] == ys[k];
            }
        }
    }
    let robust_overall = (0..n)
        .map(|i| clean_correct[i] && per_attack.iter().all(|f| f[i]))
        .collect();
    Ok(EnsembleResult {
        attack_names: specs.iter().map(|s| s.label()).collect(),
        clean_correct,
        robust_to_each_attack: per_attack,
        robust_overall,
    })
}
