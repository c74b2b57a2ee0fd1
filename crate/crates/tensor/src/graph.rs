use crate::error::{Result, TensorError};
use crate::params::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Conv1d {
        x: NodeId,
        w: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        pad: usize,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    AddScalar(NodeId),
    MulScalar(NodeId, f64),
    Relu(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Square(NodeId),
    Sqrt(NodeId),
    Abs(NodeId),
    Clamp(NodeId, f64, f64),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    Sum(NodeId, usize),
    Mean(NodeId, usize),
    Variance {
        x: NodeId,
        axis: usize,
        unbiased: bool,
    },
    SumAll(NodeId),
    MeanAll(NodeId),
    Concat(Vec<NodeId>, usize),
    Slice {
        x: NodeId,
        axis: usize,
        start: usize,
    },
    Transpose(NodeId),
    Reshape(NodeId),
    ScaleShift {
        x: NodeId,
        scale: NodeId,
        shift: NodeId,
    },
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Conv1d { .. } => "conv1d",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::AddScalar(..) => "add_scalar",
            Op::MulScalar(..) => "mul_scalar",
            Op::Relu(..) => "relu",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Square(..) => "square",
            Op::Sqrt(..) => "sqrt",
            Op::Abs(..) => "abs",
            Op::Clamp(..) => "clamp",
            Op::Softmax(..) => "softmax",
            Op::LogSoftmax(..) => "log_softmax",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Variance { .. } => "variance",
            Op::SumAll(..) => "sum_all",
            Op::MeanAll(..) => "mean_all",
            Op::Concat(..) => "concat",
            Op::Slice { .. } => "slice",
            Op::Transpose(..) => "transpose",
            Op::Reshape(..) => "reshape",
            Op::ScaleShift { .. } => "scale_shift",
        }
    }
}

pub(crate) struct Node<T: Real> {
    pub(crate) shape: Vec<usize>,
    pub(crate) value: Vec<T>,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

/// A tape of forward operations.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and backward is a single reverse sweep.
pub struct Graph<T: Real = f32> {
    pub(crate) nodes: Vec<Node<T>>,
    track_params: bool,
    bindings: Vec<(u64, Vec<NodeId>)>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            track_params: true,
            bindings: Vec::new(),
        }
    }

    /// A graph in which bound parameters are constants. Used for attacks,
    /// where only the input gradient is wanted.
    pub fn without_param_grads() -> Self {
        Self {
            track_params: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn push(
        &mut self,
        op: Op,
        shape: Vec<usize>,
        value: Vec<T>,
        requires_grad: bool,
    ) -> Result<NodeId> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        if !matches!(op, Op::Leaf) && value.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: op.name() });
        }
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Records a leaf holding a copy of `t`. It takes part in backward iff
    /// `t.requires_grad()`.
    pub fn tensor(&mut self, t: &Tensor<T>) -> NodeId {
        self.leaf(t.shape(), t.data().to_vec(), t.requires_grad())
            .expect("tensor invariants already checked")
    }

    /// Records a leaf from raw data.
    pub fn leaf(&mut self, shape: &[usize], data: Vec<T>, requires_grad: bool) -> Result<NodeId> {
        if shape.contains(&0) || shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::BadLength {
                shape: shape.to_vec(),
                len: data.len(),
            });
        }
        self.push(Op::Leaf, shape.to_vec(), data, requires_grad)
    }

    pub fn constant(&mut self, shape: &[usize], data: Vec<T>) -> Result<NodeId> {
        self.leaf(shape, data, false)
    }

    pub fn scalar(&mut self, v: T) -> NodeId {
        self.leaf(&[1], vec![v], false).unwrap()
    }

    /// Binds every tensor of `store` as a leaf node, once per graph. Later
    /// calls with the same store return the cached node ids.
    pub fn bind(&mut self, store: &ParamStore<T>) -> Vec<NodeId> {
        if let Some((_, ids)) = self.bindings.iter().find(|(id, _)| *id == store.id()) {
            return ids.clone();
        }
        let track = self.track_params;
        let ids: Vec<NodeId> = store
            .tensors()
            .iter()
            .map(|t| {
                self.leaf(t.shape(), t.data().to_vec(), track && t.requires_grad())
                    .expect("param tensors are well formed")
            })
            .collect();
        self.bindings.push((store.id(), ids.clone()));
        ids
    }

    pub fn value(&self, id: NodeId) -> &[T] {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Copies a node's value out as a detached tensor.
    pub fn to_tensor(&self, id: NodeId) -> Tensor<T> {
        let n = &self.nodes[id.0];
        Tensor::new(&n.shape, n.value.clone()).unwrap()
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, id: NodeId) -> T {
        self.nodes[id.0].value[0]
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(TensorError::NonScalarLoss(root.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        if root.requires_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for i in (0..=loss.0).rev() {
            let Some(gout) = grads[i].take() else {
                continue;
            };
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(gout);
                continue;
            }
            self.backprop_node(NodeId(i), &gout, &mut grads)?;
        }
        grads.resize(self.nodes.len(), None);
        Ok(Gradients {
            grads,
            bindings: self.bindings.clone(),
        })
    }

    /// Gradient buffer for `id`, created zeroed on first touch. `None` when
    /// the node does not take part in backward.
    pub(crate) fn grad_slot<'a>(
        &self,
        grads: &'a mut [Option<Vec<T>>],
        id: NodeId,
    ) -> Option<&'a mut Vec<T>> {
        let node = &self.nodes[id.0];
        if !node.requires_grad {
            return None;
        }
        Some(grads[id.0].get_or_insert_with(|| vec![T::zero(); node.value.len()]))
    }
}

/// Leaf gradients produced by [`Graph::backward`].
pub struct Gradients<T: Real> {
    grads: Vec<Option<Vec<T>>>,
    bindings: Vec<(u64, Vec<NodeId>)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss with respect to a leaf node, if it was reached.
    pub fn get(&self, id: NodeId) -> Option<&[T]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    /// Like [`Gradients::get`] but zero-filled when the node was not reached.
    pub fn get_or_zeros(&self, id: NodeId, len: usize) -> Vec<T> {
        self.get(id)
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![T::zero(); len])
    }

    /// Adds the gradients of a bound store into its tensors' `grad`
    /// buffers. Trainable tensors that received nothing get a zero buffer.
    pub fn accumulate(&self, store: &mut ParamStore<T>) -> Result<()> {
        let ids = self
            .bindings
            .iter()
            .find(|(id, _)| *id == store.id())
            .map(|(_, ids)| ids.clone());
        for (k, t) in store.tensors_mut().iter_mut().enumerate() {
            if !t.requires_grad() {
                continue;
            }
            match ids.as_ref().and_then(|ids| self.get(ids[k])) {
                Some(g) => t.accumulate_grad(g)?,
                None => {
                    if t.grad().is_none() {
                        t.zero_grad();
                    }
                }
            }
        }
        Ok(())
    }
}
