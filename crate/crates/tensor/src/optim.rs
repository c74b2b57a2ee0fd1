use crate::error::{Result, TensorError};
use crate::params::ParamStore;
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are created lazily to match the
/// shapes of the store the optimizer is first stepped with.
#[derive(Debug, Clone)]
pub struct Adam<T: Real = f32> {
    pub config: AdamConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
}

impl<T: Real> Default for Adam<T> {
    fn default() -> Self {
        Self::new(AdamConfig::default())
    }
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            m: Vec::new(),
            v: Vec::new(),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every trainable tensor in `params` from its `grad`
    /// buffer. Tensors without a gradient are left untouched.
    pub fn step(&mut self, params: &mut ParamStore<T>, lr: f64) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.tensors().iter().map(|t| vec![T::zero(); t.numel()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(TensorError::invalid(
                "adam",
                format!("state for {} tensors, store has {}", self.m.len(), params.len()),
            ));
        }
        self.step += 1;
        for (k, t) in params.tensors_mut().iter_mut().enumerate() {
            if self.m[k].len() != t.numel() {
                return Err(TensorError::invalid("adam", format!("tensor {k} changed size")));
            }
            if !t.requires_grad() {
                continue;
            }
            let Some(g) = t.grad().map(<[T]>::to_vec) else {
                continue;
            };
            adam_update(
                t.data_mut(),
                &g,
                &mut self.m[k],
                &mut self.v[k],
                self.step,
                lr,
                &self.config,
            );
        }
        Ok(())
    }
}

/// The Adam update for one flat parameter array. `step` is 1-based.
pub fn adam_update<T: Real>(
    param: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    step: u64,
    lr: f64,
    cfg: &AdamConfig,
) {
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let one = T::one();
    let c1 = T::of(1.0 - cfg.beta1.powi(step as i32));
    let c2 = T::of(1.0 - cfg.beta2.powi(step as i32));
    let (lr, eps) = (T::of(lr), T::of(cfg.eps));
    for i in 0..param.len() {
        m[i] = b1 * m[i] + (one - b1) * grad[i];
        v[i] = b2 * v[i] + (one - b2) * grad[i] * grad[i];
        let mh = m[i] / c1;
        let vh = v[i] / c2;
        param[i] = param[i] - lr * mh / (vh.sqrt() + eps);
    }
}

/// Learning rate interpolated linearly from `start` to `end` over
/// `total_steps`, constant at `end` afterwards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearDecay {
    pub start: f64,
    pub end: f64,
    pub total_steps: u64,
}

impl LinearDecay {
    pub fn new(start: f64, end: f64, total_steps: u64) -> Self {
        Self {
            start,
            end,
            total_steps: total_steps.max(1),
        }
    }

    pub fn lr(&self, step: u64) -> f64 {
        if step >= self.total_steps {
            return self.end;
        }
        let frac = step as f64 / self.total_steps as f64;
        self.start + (self.end - self.start) * frac
    }
}
