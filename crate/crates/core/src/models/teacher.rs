use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use vickd_tensor::{Graph, NodeId, ParamStore, Real, Tensor};

use super::layers::{channel_norm, ConvUnit, Linear};
use super::student::TEACHER_DIM;
use super::{check_input, Classifier, Representer};
use crate::error::{Error, Result};

const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherConfig {
    pub input_len: usize,
    pub num_classes: usize,
    pub stem_channels: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    /// Width d_t of every layer output and of Z.
    pub dim: usize,
    /// Number of residual layers L whose outputs are aggregated.
    pub layers: usize,
    pub bottleneck: usize,
    pub kernel: usize,
}

impl TeacherConfig {
    pub fn for_input(sample_rate: u32, input_len: usize, num_classes: usize) -> Self {
        let stem_kernel = (sample_rate as usize / 100).max(2);
        Self {
            input_len,
            num_classes,
            stem_channels: 32,
            stem_kernel,
            stem_stride: stem_kernel,
            dim: TEACHER_DIM,
            layers: 6,
            bottleneck: 32,
            kernel: 3,
        }
    }
}

#[derive(Debug, Clone)]
struct Layer {
    reduce: ConvUnit,
    expand: ConvUnit,
}

#[derive(Debug, Clone, Copy)]
pub struct TeacherOutput {
    /// Z: time-mean of the softmax-weighted sum of layer outputs, `[B, d_t]`.
    pub representation: NodeId,
    /// Logits of the teacher's own linear head, `[B, C]`.
    pub logits: NodeId,
}

/// Residual conv stack standing in for a large pretrained encoder. What it
/// keeps from one is the interface: L intermediate sequences of equal
/// width, a learned softmax weighting over them, and time aggregation.
#[derive(Debug, Clone)]
pub struct Teacher<T: Real = f32> {
    config: TeacherConfig,
    params: ParamStore<T>,
    stem: ConvUnit,
    down: ConvUnit,
    layers: Vec<Layer>,
    layer_logits: usize,
    head: Linear,
}

impl<T: Real> Teacher<T> {
    pub fn new(config: TeacherConfig, rng: &mut impl Rng) -> Result<Self> {
        if config.layers == 0 || config.num_classes < 2 {
            return Err(Error::Model("teacher needs layers and at least 2 classes".into()));
        }
        let mut params = ParamStore::new();
        let c = &config;
        let stem = ConvUnit::new(&mut params, "stem", 1, c.stem_channels, c.stem_kernel, c.stem_stride, 0, rng)?;
        let down = ConvUnit::new(&mut params, "down", c.stem_channels, c.dim, c.kernel, 2, c.kernel / 2, rng)?;
        let mut layers = Vec::new();
        for l in 0..c.layers {
            let name = format!("layer{}", l + 1);
            layers.push(Layer {
                reduce: ConvUnit::new(&mut params, &format!("{name}.reduce"), c.dim, c.bottleneck, 1, 1, 0, rng)?,
                expand: ConvUnit::new(
                    &mut params,
                    &format!("{name}.expand"),
                    c.bottleneck,
                    c.dim,
                    c.kernel,
                    1,
                    c.kernel / 2,
                    rng,
                )?,
            });
        }
        let layer_logits = params.add("aggregate.logits", Tensor::zeros(&[c.layers]))?;
        let head = Linear::new(&mut params, "head", c.dim, c.num_classes, 1.0, rng)?;
        if c.input_len < c.stem_kernel {
            return Err(Error::Model("input shorter than teacher stem".into()));
        }
        Ok(Self {
            config,
            params,
            stem,
            down,
            layers,
            layer_logits,
            head,
        })
    }

    pub fn from_params(config: TeacherConfig, params: ParamStore<T>) -> Result<Self> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut fresh = Self::new(config, &mut rng)?;
        super::adopt_params(&mut fresh.params, params)?;
        Ok(fresh)
    }

    pub fn config(&self) -> &TeacherConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Freezes or unfreezes every teacher parameter.
    pub fn set_trainable(&mut self, on: bool) {
        self.params.set_trainable(on);
    }

    /// softmax of the learned layer logits.
    pub fn layer_weights(&self) -> Vec<f64> {
        let w = self.params.tensors()[self.layer_logits].data();
        let m = w.iter().fold(f64::NEG_INFINITY, |a, v| a.max(v.as_f64()));
        let e: Vec<f64> = w.iter().map(|v| (v.as_f64() - m).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|v| v / z).collect()
    }

    /// The L intermediate sequences, each `[B, d_t, frames]` and normalised
    /// per frame over channels.
    pub fn layer_outputs(&self, g: &mut Graph<T>, x: NodeId) -> Result<Vec<NodeId>> {
        let batch = check_input(g, x, self.config.input_len)?;
        let p = g.bind(&self.params);
        let x3 = g.reshape(x, &[batch, 1, self.config.input_len])?;
        let h = self.stem.forward(g, &p, x3, true)?;
        let mut h = self.down.forward(g, &p, h, true)?;
        let mut outs = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let u = layer.reduce.forward(g, &p, h, true)?;
            let u = layer.expand.forward(g, &p, u, false)?;
            let s = g.add(h, u)?;
            let r = g.relu(s)?;
            h = channel_norm(g, r, NORM_EPS)?;
            outs.push(h);
        }
        Ok(outs)
    }

    /// Softmax-weighted sum over layers followed by the mean over time.
    pub fn aggregate(&self, g: &mut Graph<T>, layers: &[NodeId]) -> Result<NodeId> {
        let p = g.bind(&self.params);
        let weights = g.softmax(p[self.layer_logits])?;
        let mut acc: Option<NodeId> = None;
        for (l, &h) in layers.iter().enumerate() {
            let w = g.slice(weights, 0, l, 1)?;
            let term = g.mul(h, w)?;
            acc = Some(match acc {
                Some(a) => g.add(a, term)?,
                None => term,
            });
        }
        let sum = acc.ok_or_else(|| Error::Model("no layers to aggregate".into()))?;
        Ok(g.mean(sum, 2)?)
    }

    pub fn forward(&self, g: &mut Graph<T>, x: NodeId) -> Result<TeacherOutput> {
        let layers = self.layer_outputs(g, x)?;
        let representation = self.aggregate(g, &layers)?;
        let p = g.bind(&self.params);
        let logits = self.head.forward(g, &p, representation)?;
        Ok(TeacherOutput {
            representation,
            logits,
        })
    }

    pub fn cast<U: Real>(&self) -> Teacher<U> {
        Teacher {
            config: self.config.clone(),
            params: self.params.cast(),
            stem: self.stem.clone(),
            down: self.down.clone(),
            layers: self.layers.clone(),
            layer_logits: self.layer_logits,
            head: self.head.clone(),
        }
    }
}

impl<T: Real> Classifier<T> for Teacher<T> {
    fn logits(&self, g: &mut Graph<T>, x: NodeId) -> Result<NodeId> {
        Ok(self.forward(g, x)?.logits)
    }

    fn num_classes(&self) -> usize {
        self.config.num_classes
    }
}

impl<T: Real> Representer<T> for Teacher<T> {
    fn representation(&self, g: &mut Graph<T>, x: NodeId) -> Result<NodeId> {
        Ok(self.forward(g, x)?.representation)
    }

    fn representation_dim(&self) -> usize {
        self.config.dim
    }
}
