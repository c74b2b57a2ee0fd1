use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use vickd_tensor::{Graph, NodeId, ParamStore, Real};

use super::layers::{ConvUnit, Linear};
use super::{check_input, Classifier, Embedder};
use crate::error::{Error, Result};

/// The two compact student shapes. Both are TC-ResNet-style stacks and
/// differ only in channel widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudentPreset {
    TcresnetMini,
    XvectorMini,
}

impl StudentPreset {
    pub fn name(self) -> &'static str {
        match self {
            StudentPreset::TcresnetMini => "tcresnet-mini",
            StudentPreset::XvectorMini => "xvector-mini",
        }
    }
}

impl std::str::FromStr for StudentPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tcresnet-mini" => Ok(StudentPreset::TcresnetMini),
            "xvector-mini" => Ok(StudentPreset::XvectorMini),
            _ => Err(Error::Config(format!("unknown student preset {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentConfig {
    pub input_len: usize,
    pub num_classes: usize,
    pub stem_channels: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    /// Output channels of each stride-2 residual block. The last entry is
    /// the embedding width of H'.
    pub widths: Vec<usize>,
    pub kernel: usize,
    /// Output width of the projection head (the teacher's Z width); `None`
    /// builds a student without one.
    pub projection_dim: Option<usize>,
    pub projection_hidden: usize,
}

/// Default teacher representation width.
pub const TEACHER_DIM: usize = 64;

impl StudentConfig {
    /// Stem window of 10 ms with 50% overlap, so the frame rate is the same
    /// for every sample rate.
    pub fn preset(preset: StudentPreset, sample_rate: u32, input_len: usize, num_classes: usize) -> Self {
        let (stem_channels, widths) = match preset {
            StudentPreset::TcresnetMini => (16, vec![16, 24, 48]),
            StudentPreset::XvectorMini => (24, vec![32, 40, 48]),
        };
        let stem_kernel = (sample_rate as usize / 100).max(2);
        Self {
            input_len,
            num_classes,
            stem_channels,
            stem_kernel,
            stem_stride: stem_kernel / 2,
            widths,
            kernel: 3,
            projection_dim: None,
            projection_hidden: 2 * TEACHER_DIM,
        }
    }

    pub fn with_projection(mut self, dim: usize) -> Self {
        self.projection_dim = Some(dim);
        self.projection_hidden = 2 * dim;
        self
    }

    pub fn embedding_dim(&self) -> usize {
        *self.widths.last().expect("at least one block")
    }
}

#[derive(Debug, Clone)]
struct ResBlock {
    conv1: ConvUnit,
    conv2: ConvUnit,
    shortcut: ConvUnit,
}

impl ResBlock {
    fn forward<T: Real>(&self, g: &mut Graph<T>, p: &[NodeId], x: NodeId) -> Result<NodeId> {
        let h = self.conv1.forward(g, p, x, true)?;
        let h = self.conv2.forward(g, p, h, false)?;
        let s = self.shortcut.forward(g, p, x, false)?;
        let y = g.add(h, s)?;
        Ok(g.relu(y)?)
    }
}

#[derive(Debug, Clone)]
struct ProjectionHead {
    hidden: Linear,
    out: Linear,
}

/// Whether a forward pass also produces the projection Z'.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Encoder and classification head only.
    Inference,
    /// Also runs the projection head when the student has one.
    Train,
}

#[derive(Debug, Clone, Copy)]
pub struct StudentOutput {
    /// H', shape `[B, d_s]`.
    pub hidden: NodeId,
    /// Y', shape `[B, C]`.
    pub logits: NodeId,
    /// Z', shape `[B, d_t]`; only in [`Mode::Train`] with a projection head.
    pub projection: Option<NodeId>,
}

/// Compact 1-D conv residual student with a classification head and an
/// optional projection head.
#[derive(Debug, Clone)]
pub struct Student<T: Real = f32> {
    config: StudentConfig,
    params: ParamStore<T>,
    stem: ConvUnit,
    blocks: Vec<ResBlock>,
    classifier: Linear,
    projection: Option<ProjectionHead>,
}

impl<T: Real> Student<T> {
    pub fn new(config: StudentConfig, rng: &mut impl Rng) -> Result<Self> {
        if config.widths.is_empty() || config.num_classes < 2 {
            return Err(Error::Model("student needs blocks and at least 2 classes".into()));
        }
        let mut params = ParamStore::new();
        let stem = ConvUnit::new(
            &mut params,
            "stem",
            1,
            config.stem_channels,
            config.stem_kernel,
            config.stem_stride,
            config.stem_stride / 2,
            rng,
        )?;
        let mut blocks = Vec::new();
        let mut cin = config.stem_channels;
        let pad = config.kernel / 2;
        for (i, &w) in config.widths.iter().enumerate() {
            let name = format!("block{}", i + 1);
            blocks.push(ResBlock {
                conv1: ConvUnit::new(&mut params, &format!("{name}.conv1"), cin, w, config.kernel, 2, pad, rng)?,
                conv2: ConvUnit::new(&mut params, &format!("{name}.conv2"), w, w, config.kernel, 1, pad, rng)?,
                shortcut: ConvUnit::new(&mut params, &format!("{name}.shortcut"), cin, w, 1, 2, 0, rng)?,
            });
            cin = w;
        }
        let d_s = config.embedding_dim();
        let classifier = Linear::new(&mut params, "classifier", d_s, config.num_classes, 1.0, rng)?;
        let projection = match config.projection_dim {
            Some(d_t) => Some(ProjectionHead {
                hidden: Linear::new(&mut params, "projection.hidden", d_s, config.projection_hidden, 2.0, rng)?,
                out: Linear::new(&mut params, "projection.out", config.projection_hidden, d_t, 1.0, rng)?,
            }),
            None => None,
        };
        let student = Self {
            config,
            params,
            stem,
            blocks,
            classifier,
            projection,
        };
        student.check_frame_count()?;
        Ok(student)
    }

    /// Rebuilds a student around stored parameters, checking that every
    /// tensor name and shape matches a fresh build of `config`.
    pub fn from_params(config: StudentConfig, params: ParamStore<T>) -> Result<Self> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut fresh = Self::new(config, &mut rng)?;
        super::adopt_params(&mut fresh.params, params)?;
        Ok(fresh)
    }

    fn check_frame_count(&self) -> Result<()> {
        let c = &self.config;
        let padded = c.input_len + 2 * (c.stem_stride / 2);
        if padded < c.stem_kernel {
            return Err(Error::Model(format!("input length {} shorter than stem", c.input_len)));
        }
        Ok(())
    }

    pub fn config(&self) -> &StudentConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn has_projection(&self) -> bool {
        self.projection.is_some()
    }

    /// Parameters used at test time (encoder and classifier).
    pub fn inference_param_count(&self) -> usize {
        self.params
            .iter()
            .filter(|(n, _)| !n.starts_with("projection."))
            .map(|(_, t)| t.numel())
            .sum()
    }

    pub fn forward(&self, g: &mut Graph<T>, x: NodeId, mode: Mode) -> Result<StudentOutput> {
        let batch = check_input(g, x, self.config.input_len)?;
        let p = g.bind(&self.params);
        let x3 = g.reshape(x, &[batch, 1, self.config.input_len])?;
        let mut h = self.stem.forward(g, &p, x3, true)?;
        for block in &self.blocks {
            h = block.forward(g, &p, h)?;
        }
        let hidden = g.mean(h, 2)?;
        let logits = self.classifier.forward(g, &p, hidden)?;
        let projection = match (&self.projection, mode) {
            (Some(head), Mode::Train) => {
                let z = head.hidden.forward(g, &p, hidden)?;
                let z = g.relu(z)?;
                Some(head.out.forward(g, &p, z)?)
            }
            _ => None,
        };
        Ok(StudentOutput {
            hidden,
            logits,
            projection,
        })
    }

    pub fn cast<U: Real>(&self) -> Student<U> {
        Student {
            config: self.config.clone(),
            params: self.params.cast(),
            stem: self.stem.clone(),
            blocks: self.blocks.clone(),
            classifier: self.classifier.clone(),
            projection: self.projection.clone(),
        }
    }
}


impl<T: Real> Classifier<T> for Student<T> {
    fn logits(&self, g: &mut Graph<T>, x: NodeId) -> Result<NodeId> {
        Ok(self.forward(g, x, Mode::Inference)?.logits)
    }

    fn num_classes(&self) -> usize {
        self.config.num_classes
    }
}

impl<T: Real> Embedder<T> for Student<T> {
    fn logits_and_projection(&self, g: &mut Graph<T>, x: NodeId) -> Result<(NodeId, NodeId)> {
        let out = self.forward(g, x, Mode::Train)?;
        let z = out
            .projection
            .ok_or_else(|| Error::Model("student has no projection head".into()))?;
        Ok((out.logits, z))
    }

    fn projection_dim(&self) -> Option<usize> {
        self.config.projection_dim
    }
}
