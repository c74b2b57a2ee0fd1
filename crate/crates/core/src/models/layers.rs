//! Parameterised building blocks. Each layer only remembers the indices of
//! its tensors inside the owning [`ParamStore`]; the node ids for a forward
//! pass come from binding that store into the graph.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use vickd_tensor::{Graph, NodeId, ParamStore, Real, Tensor};

use crate::error::Result;

fn normal<T: Real>(rng: &mut impl Rng, shape: &[usize], std: f64) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("positive std");
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| T::of(dist.sample(rng))).collect()).unwrap()
}

#[derive(Debug, Clone)]
pub(crate) struct Conv {
    w: usize,
    b: usize,
    stride: usize,
    pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let std = (2.0 / (cin * kernel) as f64).sqrt();
        let w = store.add(format!("{name}.w"), normal(rng, &[cout, cin, kernel], std))?;
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[cout]))?;
        Ok(Self { w, b, stride, pad })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &[NodeId], x: NodeId) -> Result<NodeId> {
        Ok(g.conv1d(x, p[self.w], Some(p[self.b]), self.stride, self.pad)?)
    }
}

/// Per-channel scale and shift, the affine half of a batch norm.
#[derive(Debug, Clone)]
pub(crate) struct Affine {
    scale: usize,
    shift: usize,
}

impl Affine {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        let scale = store.add(format!("{name}.scale"), Tensor::full(&[channels], T::one()))?;
        let shift = store.add(format!("{name}.shift"), Tensor::zeros(&[channels]))?;
        Ok(Self { scale, shift })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &[NodeId], x: NodeId) -> Result<NodeId> {
        Ok(g.scale_shift(x, p[self.scale], p[self.shift])?)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Linear {
    w: usize,
    b: usize,
}

impl Linear {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let std = (gain / fan_in as f64).sqrt();
        let w = store.add(format!("{name}.w"), normal(rng, &[fan_in, fan_out], std))?;
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[fan_out]))?;
        Ok(Self { w, b })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &[NodeId], x: NodeId) -> Result<NodeId> {
        let y = g.matmul(x, p[self.w])?;
        Ok(g.add(y, p[self.b])?)
    }
}

/// Conv -> affine -> relu.
#[derive(Debug, Clone)]
pub(crate) struct ConvUnit {
    conv: Conv,
    norm: Affine,
}

impl ConvUnit {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            conv: Conv::new(store, &format!("{name}.conv"), cin, cout, kernel, stride, pad, rng)?,
            norm: Affine::new(store, &format!("{name}.norm"), cout)?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &[NodeId], x: NodeId, relu: bool) -> Result<NodeId> {
        let y = self.conv.forward(g, p, x)?;
        let y = self.norm.forward(g, p, y)?;
        Ok(if relu { g.relu(y)? } else { y })
    }
}

/// Normalises every frame of `x [B, C, T]` to zero mean and unit variance
/// over channels, without learned parameters.
pub(crate) fn channel_norm<T: Real>(g: &mut Graph<T>, x: NodeId, eps: f64) -> Result<NodeId> {
    let (b, t) = match g.shape(x) {
        [b, _, t] => (*b, *t),
        s => return Err(crate::Error::Model(format!("channel_norm expects [B, C, T], got {s:?}"))),
    };
    let mu = g.mean(x, 1)?;
    let mu = g.reshape(mu, &[b, 1, t])?;
    let centered = g.sub(x, mu)?;
    let var = g.variance(x, 1, false)?;
    let var = g.add_scalar(var, eps)?;
    let sd = g.sqrt(var)?;
    let sd = g.reshape(sd, &[b, 1, t])?;
    Ok(g.div(centered, sd)?)
}
