//! The multi-view transform family and two-view sampling.
//!
//! Every transform maps a waveform of length `L` to a waveform of length `L`
//! with samples clipped to `[-1, 1]`.

use rand::{Rng, RngExt};
use rand_distr::{Distribution, StandardNormal};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransformKind {
    Clean,
    Noise,
    Reverb,
    NoiseReverb,
    ChunkDrop,
    SpeedPerturb,
}

impl TransformKind {
    pub const ALL: [TransformKind; 6] = [
        TransformKind::Clean,
        TransformKind::Noise,
        TransformKind::Reverb,
        TransformKind::NoiseReverb,
        TransformKind::ChunkDrop,
        TransformKind::SpeedPerturb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TransformKind::Clean => "clean",
            TransformKind::Noise => "noise",
            TransformKind::Reverb => "reverb",
            TransformKind::NoiseReverb => "noise-reverb",
            TransformKind::ChunkDrop => "chunk-drop",
            TransformKind::SpeedPerturb => "speed-perturb",
        }
    }
}

/// A transform with all of its random parameters drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Transform {
    Clean,
    Noise { snr_db: f64 },
    Reverb { rt60: f64 },
    NoiseReverb { snr_db: f64, rt60: f64 },
    /// Zeroes `samples[start..start + len]`.
    ChunkDrop { start: usize, len: usize },
    SpeedPerturb { factor: f64 },
}

impl Transform {
    pub fn kind(&self) -> TransformKind {
        match self {
            Transform::Clean => TransformKind::Clean,
            Transform::Noise { .. } => TransformKind::Noise,
            Transform::Reverb { .. } => TransformKind::Reverb,
            Transform::NoiseReverb { .. } => TransformKind::NoiseReverb,
            Transform::ChunkDrop { .. } => TransformKind::ChunkDrop,
            Transform::SpeedPerturb { .. } => TransformKind::SpeedPerturb,
        }
    }
}

/// Parameter ranges for each transform kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub enabled: Vec<TransformKind>,
    pub snr_db: (f64, f64),
    pub rt60: (f64, f64),
    /// Impulse responses are cut after this many seconds.
    pub ir_seconds: f64,
    /// Dropped span as a fraction of the utterance.
    pub drop_fraction: (f64, f64),
    pub speed_factors: Vec<f64>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: TransformKind::ALL.to_vec(),
            snr_db: (0.0, 15.0),
            rt60: (0.3, 0.9),
            ir_seconds: 0.25,
            drop_fraction: (0.0625, 0.25),
            speed_factors: vec![0.9, 1.0, 1.1],
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let ordered = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        if !ordered(self.snr_db) || !ordered(self.rt60) || !ordered(self.drop_fraction) {
            return Err(config_err("augment ranges must be finite with lo <= hi"));
        }
        if self.rt60.0 <= 0.0 || self.ir_seconds <= 0.0 {
            return Err(config_err("rt60 and impulse length must be positive"));
        }
        if self.drop_fraction.0 < 0.0 || self.drop_fraction.1 > 1.0 {
            return Err(config_err("drop fraction must lie in [0, 1]"));
        }
        if self.speed_factors.is_empty() || self.speed_factors.iter().any(|&f| !(f > 0.0 && f.is_finite())) {
            return Err(config_err("speed factors must be positive"));
        }
        Ok(())
    }

    /// Draws the random parameters of `kind` for an utterance of `len` samples.
    pub fn draw(&self, kind: TransformKind, len: usize, rng: &mut impl Rng) -> Transform {
        match kind {
            TransformKind::Clean => Transform::Clean,
            TransformKind::Noise => Transform::Noise {
                snr_db: uniform(rng, self.snr_db),
            },
            TransformKind::Reverb => Transform::Reverb {
                rt60: uniform(rng, self.rt60),
            },
            TransformKind::NoiseReverb => Transform::NoiseReverb {
                snr_db: uniform(rng, self.snr_db),
                rt60: uniform(rng, self.rt60),
            },
            TransformKind::ChunkDrop => {
                let frac = uniform(rng, self.drop_fraction);
                let n = ((frac * len as f64).round() as usize).clamp(1, len.max(1));
                let start = rng.random_range(0..=len.saturating_sub(n));
                Transform::ChunkDrop { start, len: n }
            }
            TransformKind::SpeedPerturb => Transform::SpeedPerturb {
                factor: self.speed_factors[rng.random_range(0..self.speed_factors.len())],
            },
        }
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Draws parameters for `kind` and applies it.
pub fn apply(kind: TransformKind, x: &[f32], sample_rate: u32, cfg: &AugmentConfig, rng: &mut impl Rng) -> Vec<f32> {
    let t = cfg.draw(kind, x.len(), rng);
    apply_transform(&t, x, sample_rate, cfg.ir_seconds, rng)
}

/// Applies a fully specified transform. `rng` supplies the noise and
/// impulse-response samples.
pub fn apply_transform(t: &Transform, x: &[f32], sample_rate: u32, ir_seconds: f64, rng: &mut impl Rng) -> Vec<f32> {
    let mut y = match *t {
        Transform::Clean => x.to_vec(),
        Transform::Noise { snr_db } => add_noise(x, snr_db, rng),
        Transform::Reverb { rt60 } => reverb(x, rt60, sample_rate, ir_seconds, rng),
        Transform::NoiseReverb { snr_db, rt60 } => {
            let r = reverb(x, rt60, sample_rate, ir_seconds, rng);
            add_noise(&r, snr_db, rng)
        }
        Transform::ChunkDrop { start, len } => {
            let mut y = x.to_vec();
            let end = (start + len).min(y.len());
            y[start.min(end)..end].fill(0.0);
            y
        }
        Transform::SpeedPerturb { factor } => speed(x, factor),
    };
    for v in &mut y {
        *v = v.clamp(-1.0, 1.0);
    }
    y
}

fn power(x: &[f32]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / x.len() as f64
}

/// White Gaussian noise scaled so the emitted noise has exactly the target
/// SNR against `x`. Silent input stays silent.
fn add_noise(x: &[f32], snr_db: f64, rng: &mut impl Rng) -> Vec<f32> {
    let noise: Vec<f64> = (0..x.len()).map(|_| StandardNormal.sample(rng)).collect();
    let ps = power(x);
    let pn = noise.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64;
    if ps == 0.0 || pn == 0.0 {
        return x.to_vec();
    }
    let scale = (ps / 10f64.powf(snr_db / 10.0) / pn).sqrt();
    x.iter()
        .zip(&noise)
        .map(|(&s, &n)| (s as f64 + scale * n) as f32)
        .collect()
}

/// Exponentially decaying Gaussian impulse response, peak-normalised.
pub fn impulse_response(rt60: f64, sample_rate: u32, ir_seconds: f64, rng: &mut impl Rng) -> Vec<f64> {
    let sr = sample_rate as f64;
    let n = ((ir_seconds * sr).round() as usize).max(1);
    let decay = 3.0 * std::f64::consts::LN_10 / (rt60 * sr);
    let mut h: Vec<f64> = (0..n)
        .map(|k| {
            let g: f64 = StandardNormal.sample(rng);
            g * (-decay * k as f64).exp()
        })
        .collect();
    let peak = h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        h.iter_mut().for_each(|v| *v /= peak);
    }
    h
}

/// Causal convolution with a synthetic room response, truncated to the input
/// length and rescaled to the input RMS.
fn reverb(x: &[f32], rt60: f64, sample_rate: u32, ir_seconds: f64, rng: &mut impl Rng) -> Vec<f32> {
    let h = impulse_response(rt60, sample_rate, ir_seconds, rng);
    let xs: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    let mut y = fft_convolve(&xs, &h);
    y.truncate(x.len());
    let (pin, pout) = (power(x), y.iter().map(|v| v * v).sum::<f64>() / y.len().max(1) as f64);
    let gain = if pout > 0.0 { (pin / pout).sqrt() } else { 0.0 };
    y.iter().map(|v| (v * gain) as f32).collect()
}

/// Full linear convolution, length `a.len() + b.len() - 1`.
pub fn fft_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let out_len = a.len() + b.len() - 1;
    let n = out_len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let pad = |v: &[f64]| {
        let mut c: Vec<Complex<f64>> = v.iter().map(|&r| Complex::new(r, 0.0)).collect();
        c.resize(n, Complex::new(0.0, 0.0));
        c
    };
    let (mut fa, mut fb) = (pad(a), pad(b));
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (p, q) in fa.iter_mut().zip(&fb) {
        *p *= q;
    }
    inv.process(&mut fa);
    fa[..out_len].iter().map(|c| c.re / n as f64).collect()
}

/// Linear-interpolation resampling by `factor`, then centre crop or
/// symmetric zero pad back to the input length.
fn speed(x: &[f32], factor: f64) -> Vec<f32> {
    let len = x.len();
    if factor == 1.0 || len == 0 {
        return x.to_vec();
    }
    let new_len = ((len as f64 / factor).floor() as usize).max(1);
    let resampled: Vec<f32> = (0..new_len)
        .map(|i| {
            let pos = i as f64 * factor;
            let j = pos.floor() as usize;
            let frac = pos - j as f64;
            match (x.get(j), x.get(j + 1)) {
                (Some(&a), Some(&b)) => (a as f64 * (1.0 - frac) + b as f64 * frac) as f32,
                (Some(&a), None) => a,
                _ => 0.0,
            }
        })
        .collect();
    let mut out = vec![0.0f32; len];
    if new_len >= len {
        let off = (new_len - len) / 2;
        out.copy_from_slice(&resampled[off..off + len]);
    } else {
        let off = (len - new_len) / 2;
        out[off..off + new_len].copy_from_slice(&resampled);
    }
    out
}

/// Two differently transformed views of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewPair {
    pub view_t: Vec<f32>,
    pub view_t_prime: Vec<f32>,
    pub kinds: (TransformKind, TransformKind),
}

/// Two distinct kinds drawn uniformly without replacement from the enabled set.
pub fn sample_kinds(cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<(TransformKind, TransformKind)> {
    let mut kinds = cfg.enabled.clone();
    kinds.sort();
    kinds.dedup();
    if kinds.len() < 2 {
        return Err(config_err("multi-view sampling needs at least two enabled transforms"));
    }
    let i = rng.random_range(0..kinds.len());
    let mut j = rng.random_range(0..kinds.len() - 1);
    if j >= i {
        j += 1;
    }
    Ok((kinds[i], kinds[j]))
}

pub fn sample_view_pair(x: &[f32], sample_rate: u32, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<ViewPair> {
    let kinds = sample_kinds(cfg, rng)?;
    let view_t = apply(kinds.0, x, sample_rate, cfg, rng);
    let view_t_prime = apply(kinds.1, x, sample_rate, cfg, rng);
    Ok(ViewPair {
        view_t,
        view_t_prime,
        kinds,
    })
}
