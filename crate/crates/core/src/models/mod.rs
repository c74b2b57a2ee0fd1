//! Teacher and student networks and their checkpoint format.

mod checkpoint;
mod layers;
mod student;
mod teacher;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, MAGIC, VERSION};
pub use student::{Mode, Student, StudentConfig, StudentOutput, StudentPreset, TEACHER_DIM};
pub use teacher::{Teacher, TeacherConfig, TeacherOutput};

use vickd_tensor::{Graph, NodeId, ParamStore, Real};

use crate::error::{Error, Result};

/// Anything that maps a waveform batch `[B, L]` to logits `[B, C]`.
pub trait Classifier<T: Real> {
    fn logits(&self, g: &mut Graph<T>, x: NodeId) -> Result<NodeId>;
    fn num_classes(&self) -> usize;
}

/// A classifier with a projection head; both outputs come from one pass.
pub trait Embedder<T: Real>: Classifier<T> {
    fn logits_and_projection(&self, g: &mut Graph<T>, x: NodeId) -> Result<(NodeId, NodeId)>;
    fn projection_dim(&self) -> Option<usize>;
}

/// A model exposing a fixed-width utterance representation.
pub trait Representer<T: Real> {
    fn representation(&self, g: &mut Graph<T>, x: NodeId) -> Result<NodeId>;
    fn representation_dim(&self) -> usize;
}

/// Validates a `[B, L]` input and returns B.
pub(crate) fn check_input<T: Real>(g: &Graph<T>, x: NodeId, len: usize) -> Result<usize> {
    match g.shape(x) {
        [b, l] if *l == len => Ok(*b),
        s => Err(Error::Model(format!("expected input [batch, {len}], got {s:?}"))),
    }
}

/// Copies `loaded` into `target` after checking names and shapes agree.
pub(crate) fn adopt_params<T: Real>(target: &mut ParamStore<T>, loaded: ParamStore<T>) -> Result<()> {
    if target.names() != loaded.names() {
        return Err(Error::Format(format!(
            "parameter names differ: expected {} tensors, found {}",
            target.len(),
            loaded.len()
        )));
    }
    for ((name, t), l) in target
        .names()
        .to_vec()
        .iter()
        .zip(target.tensors_mut().iter_mut())
        .zip(loaded.tensors())
    {
        if t.shape() != l.shape() {
            return Err(Error::Format(format!(
                "{name}: shape {:?} does not match stored {:?}",
                t.shape(),
                l.shape()
            )));
        }
        t.data_mut().copy_from_slice(l.data());
    }
    Ok(())
}
