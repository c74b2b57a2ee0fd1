//! Training objectives over logits and embeddings.
//!
//! Every function builds its value inside a caller-owned graph and returns
//! the scalar node, so several terms can share one backward pass.
//! `kl_div(p, q)` is KL(softmax(p/T) ‖ softmax(q/T)); the distillation
//! recipes put the reference distribution (teacher, or clean prediction)
//! in the first slot.

use serde::{Deserialize, Serialize};
use vickd_tensor::{Graph, NodeId, Real};

use crate::attacks::AttackSpec;
use crate::error::{config_err, Error, Result};

fn one_hot<T: Real>(g: &mut Graph<T>, labels: &[usize], batch: usize, classes: usize) -> Result<NodeId> {
    if labels.len() != batch {
        return Err(Error::Data(format!("{} labels for a batch of {batch}", labels.len())));
    }
    let mut data = vec![T::zero(); batch * classes];
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::Data(format!("label {y} out of range for {classes} classes")));
        }
        data[i * classes + y] = T::one();
    }
    Ok(g.constant(&[batch, classes], data)?)
}

fn logits_dims<T: Real>(g: &Graph<T>, logits: NodeId) -> Result<(usize, usize)> {
    match g.shape(logits) {
        [b, c] => Ok((*b, *c)),
        s => Err(Error::Model(format!("logits must be [batch, classes], got {s:?}"))),
    }
}

/// Mean over the batch of `-log softmax(logits)[label]`.
pub fn cross_entropy<T: Real>(g: &mut Graph<T>, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
    let (b, c) = logits_dims(g, logits)?;
    let mask = one_hot(g, labels, b, c)?;
    let lp = g.log_softmax(logits)?;
    let picked = g.mul(lp, mask)?;
    let total = g.sum_all(picked)?;
    Ok(g.mul_scalar(total, -1.0 / b as f64)?)
}

/// Mean over the batch of KL(softmax(p/T) ‖ softmax(q/T)).
pub fn kl_div<T: Real>(g: &mut Graph<T>, p_logits: NodeId, q_logits: NodeId, temperature: f64) -> Result<NodeId> {
    if !(temperature > 0.0) {
        return Err(config_err("temperature must be positive"));
    }
    let (b, _) = logits_dims(g, p_logits)?;
    if g.shape(p_logits) != g.shape(q_logits) {
        return Err(Error::Model(format!(
            "kl_div shapes differ: {:?} vs {:?}",
            g.shape(p_logits),
            g.shape(q_logits)
        )));
    }
    let (ps, qs) = if temperature == 1.0 {
        (p_logits, q_logits)
    } else {
        (
            g.mul_scalar(p_logits, 1.0 / temperature)?,
            g.mul_scalar(q_logits, 1.0 / temperature)?,
        )
    };
    let lp = g.log_softmax(ps)?;
    let lq = g.log_softmax(qs)?;
    let p = g.exp(lp)?;
    let diff = g.sub(lp, lq)?;
    let terms = g.mul(p, diff)?;
    let total = g.sum_all(terms)?;
    Ok(g.mul_scalar(total, 1.0 / b as f64)?)
}

/// `a * x + b * y`.
fn blend<T: Real>(g: &mut Graph<T>, a: f64, x: NodeId, b: f64, y: NodeId) -> Result<NodeId> {
    let sx = g.mul_scalar(x, a)?;
    let sy = g.mul_scalar(y, b)?;
    Ok(g.add(sx, sy)?)
}

/// `(1 - w) CE(student, y) + w T² KL(teacher/T ‖ student/T)`.
pub fn kd_loss<T: Real>(
    g: &mut Graph<T>,
    student_logits: NodeId,
    teacher_logits: NodeId,
    labels: &[usize],
    weight: f64,
    temperature: f64,
) -> Result<NodeId> {
    let ce = cross_entropy(g, student_logits, labels)?;
    let kl = kl_div(g, teacher_logits, student_logits, temperature)?;
    blend(g, 1.0 - weight, ce, weight * temperature * temperature, kl)
}

/// `(1 - w) CE(student(x_adv), y) + w T² KL(teacher(x)/T ‖ student(x_adv)/T)`.
pub fn ard_loss<T: Real>(
    g: &mut Graph<T>,
    student_adv_logits: NodeId,
    teacher_clean_logits: NodeId,
    labels: &[usize],
    weight: f64,
    temperature: f64,
) -> Result<NodeId> {
    kd_loss(g, student_adv_logits, teacher_clean_logits, labels, weight, temperature)
}

/// `(1 - w) KL(teacher(x) ‖ student(x)) + w KL(teacher(x) ‖ student(x_adv))`.
pub fn rslad_loss<T: Real>(
    g: &mut Graph<T>,
    student_clean_logits: NodeId,
    student_adv_logits: NodeId,
    teacher_clean_logits: NodeId,
    weight: f64,
) -> Result<NodeId> {
    let clean = kl_div(g, teacher_clean_logits, student_clean_logits, 1.0)?;
    let adv = kl_div(g, teacher_clean_logits, student_adv_logits, 1.0)?;
    blend(g, 1.0 - weight, clean, weight, adv)
}

/// `CE(model(x), y) + β KL(model(x) ‖ model(x_adv))`.
pub fn trades_loss<T: Real>(
    g: &mut Graph<T>,
    clean_logits: NodeId,
    adv_logits: NodeId,
    labels: &[usize],
    beta: f64,
) -> Result<NodeId> {
    let ce = cross_entropy(g, clean_logits, labels)?;
    let kl = kl_div(g, clean_logits, adv_logits, 1.0)?;
    blend(g, 1.0, ce, beta, kl)
}

/// Term weights and internal constants of the VICReg regulariser.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VicregWeights {
    pub lambda_var: f64,
    pub lambda_inv: f64,
    pub lambda_cov: f64,
    pub gamma: f64,
    pub eps: f64,
}

impl Default for VicregWeights {
    fn default() -> Self {
        Self {
            lambda_var: 1.0,
            lambda_inv: 1.0,
            lambda_cov: 1.0,
            gamma: 1.0,
            eps: 1e-4,
        }
    }
}

impl VicregWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_var, self.lambda_inv, self.lambda_cov, self.gamma, self.eps];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(config_err("vicreg weights must be finite and non-negative"));
        }
        Ok(())
    }
}

fn embedding_dims<T: Real>(g: &Graph<T>, z: NodeId, min_batch: usize) -> Result<(usize, usize)> {
    match g.shape(z) {
        [n, d] if *n >= min_batch => Ok((*n, *d)),
        s => Err(Error::Model(format!(
            "embedding must be [batch >= {min_batch}, dim], got {s:?}"
        ))),
    }
}

/// `(1/d) Σ_j max(0, γ - sqrt(Var(Z'[:, j]) + ε))` with unbiased variance.
pub fn vicreg_variance<T: Real>(g: &mut Graph<T>, zp: NodeId, gamma: f64, eps: f64) -> Result<NodeId> {
    embedding_dims(g, zp, 2)?;
    let var = g.variance(zp, 0, true)?;
    let var = g.add_scalar(var, eps)?;
    let std = g.sqrt(var)?;
    let neg = g.neg(std)?;
    let gap = g.add_scalar(neg, gamma)?;
    let hinge = g.relu(gap)?;
    Ok(g.mean_all(hinge)?)
}

/// `(1/n) Σ_i ‖z_i - z'_i‖²`.
pub fn vicreg_invariance<T: Real>(g: &mut Graph<T>, z: NodeId, zp: NodeId) -> Result<NodeId> {
    let (n, _) = embedding_dims(g, zp, 1)?;
    if g.shape(z) != g.shape(zp) {
        return Err(Error::Model(format!(
            "invariance shapes differ: {:?} vs {:?}",
            g.shape(z),
            g.shape(zp)
        )));
    }
    let d = g.sub(z, zp)?;
    let sq = g.square(d)?;
    let total = g.sum_all(sq)?;
    Ok(g.mul_scalar(total, 1.0 / n as f64)?)
}

/// `(1/d) Σ_{i≠j} C[i, j]²` for the unbiased batch covariance `C` of Z'.
pub fn vicreg_covariance<T: Real>(g: &mut Graph<T>, zp: NodeId) -> Result<NodeId> {
    let (n, d) = embedding_dims(g, zp, 2)?;
    let mean = g.mean(zp, 0)?;
    let centered = g.sub(zp, mean)?;
    let ct = g.transpose(centered)?;
    let gram = g.matmul(ct, centered)?;
    let cov = g.mul_scalar(gram, 1.0 / (n - 1) as f64)?;
    let sq = g.square(cov)?;
    let mask: Vec<T> = (0..d * d)
        .map(|k| if k / d == k % d { T::zero() } else { T::one() })
        .collect();
    let mask = g.constant(&[d, d], mask)?;
    let off = g.mul(sq, mask)?;
    let off = g.sum_all(off)?;
    Ok(g.mul_scalar(off, 1.0 / d as f64)?)
}

/// The three regulariser terms, unweighted, plus their weighted sum.
#[derive(Debug, Clone, Copy)]
pub struct VicregTerms {
    pub var: NodeId,
    pub inv: NodeId,
    pub cov: NodeId,
    pub total: NodeId,
}

pub fn vicreg<T: Real>(g: &mut Graph<T>, z: NodeId, zp: NodeId, w: &VicregWeights) -> Result<VicregTerms> {
    let var = vicreg_variance(g, zp, w.gamma, w.eps)?;
    let inv = vicreg_invariance(g, z, zp)?;
    let cov = vicreg_covariance(g, zp)?;
    let a = blend(g, w.lambda_var, var, w.lambda_inv, inv)?;
    let c = g.mul_scalar(cov, w.lambda_cov)?;
    let total = g.add(a, c)?;
    Ok(VicregTerms { var, inv, cov, total })
}

/// Every term of the VIC-KD objective, for logging.
#[derive(Debug, Clone, Copy)]
pub struct VicKdTerms {
    pub total: NodeId,
    pub trades: NodeId,
    pub vicreg: VicregTerms,
}

/// `α TRADES + (1 - α) (Var(Z') + Inv(Z, Z') + Cov(Z'))`.
///
/// `clean_logits` come from the student on the second view, `adv_logits`
/// and `zp` from the student on its adversarial perturbation, and `z` from
/// the teacher on the first view.
#[allow(clippy::too_many_arguments)]
pub fn vic_kd_loss<T: Real>(
    g: &mut Graph<T>,
    clean_logits: NodeId,
    adv_logits: NodeId,
    z: NodeId,
    zp: NodeId,
    labels: &[usize],
    alpha: f64,
    beta: f64,
    weights: &VicregWeights,
) -> Result<VicKdTerms> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(config_err(format!("alpha {alpha} outside [0, 1]")));
    }
    let trades = trades_loss(g, clean_logits, adv_logits, labels, beta)?;
    let vicreg = vicreg(g, z, zp, weights)?;
    let total = blend(g, alpha, trades, 1.0 - alpha, vicreg.total)?;
    Ok(VicKdTerms { total, trades, vicreg })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Recipe {
    Kd,
    Ard,
    Rslad,
    Trades,
    VicKd,
}

impl Recipe {
    pub const ALL: [Recipe; 5] = [Recipe::Kd, Recipe::Ard, Recipe::Rslad, Recipe::Trades, Recipe::VicKd];

    pub fn name(self) -> &'static str {
        match self {
            Recipe::Kd => "kd",
            Recipe::Ard => "ard",
            Recipe::Rslad => "rslad",
            Recipe::Trades => "trades",
            Recipe::VicKd => "vic-kd",
        }
    }

    pub fn uses_teacher(self) -> bool {
        self != Recipe::Trades
    }

    pub fn is_adversarial(self) -> bool {
        self != Recipe::Kd
    }

    pub fn default_temperature(self) -> f64 {
        match self {
            Recipe::Kd => 4.0,
            _ => 1.0,
        }
    }

    pub fn default_weight(self) -> f64 {
        match self {
            Recipe::Rslad => 5.0 / 6.0,
            _ => 0.5,
        }
    }
}

impl std::str::FromStr for Recipe {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Recipe::ALL
            .into_iter()
            .find(|r| r.name() == s.to_ascii_lowercase().replace('_', "-"))
            .ok_or_else(|| config_err(format!("unknown recipe {s:?}")))
    }
}

impl std::fmt::Display for Recipe {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Recipe selector and all of its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecipeConfig {
    pub recipe: Recipe,
    pub alpha: f64,
    pub beta: f64,
    /// `None` selects the recipe default.
    pub kd_temperature: Option<f64>,
    /// `None` selects the recipe default.
    pub kd_weight: Option<f64>,
    pub vicreg: VicregWeights,
    pub multi_view: bool,
    /// Perturbation generator used during training.
    pub inner: AttackSpec,
}

impl RecipeConfig {
    pub fn new(recipe: Recipe) -> Self {
        Self {
            recipe,
            alpha: 0.5,
            beta: 6.0,
            kd_temperature: None,
            kd_weight: None,
            vicreg: VicregWeights::default(),
            multi_view: recipe == Recipe::VicKd,
            inner: AttackSpec::training_pgd(),
        }
    }

    pub fn temperature(&self) -> f64 {
        self.kd_temperature.unwrap_or(self.recipe.default_temperature())
    }

    pub fn weight(&self) -> f64 {
        self.kd_weight.unwrap_or(self.recipe.default_weight())
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(config_err(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !(self.temperature() > 0.0) {
            return Err(config_err("kd.temperature must be positive"));
        }
        if !(0.0..=1.0).contains(&self.weight()) {
            return Err(config_err("kd.weight must lie in [0, 1]"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(config_err("beta must be non-negative"));
        }
        self.vicreg.validate()?;
        self.inner.validate()
    }
}
