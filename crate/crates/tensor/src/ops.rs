//! Forward constructors and their backward rules.

use crate::error::{Result, TensorError};
use crate::graph::{Graph, NodeId, Op};
use crate::real::Real;
use crate::shape::{broadcast, broadcast_map, conv_out_len, split_axis, without_axis};

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

impl<T: Real> Graph<T> {
    fn any_grad(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&i| self.requires_grad(i))
    }

    fn unary(&mut self, x: NodeId, op: Op, f: impl Fn(T) -> T) -> Result<NodeId> {
        let value: Vec<T> = self.value(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.requires_grad(x);
        self.push(op, shape, value, rg)
    }

    // ---------------------------------------------------------------- linear

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::mismatch("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        matmul_acc(self.value(a), self.value(b), &mut out, m, k, n);
        let rg = self.any_grad(&[a, b]);
        self.push(Op::MatMul(a, b), vec![m, n], out, rg)
    }

    /// 1-D convolution (cross-correlation). `x: [B, Cin, T]`,
    /// `w: [Cout, Cin, K]`, optional `bias: [Cout]`.
    pub fn conv1d(
        &mut self,
        x: NodeId,
        w: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 3 || sw.len() != 3 || sx[1] != sw[1] {
            return Err(TensorError::mismatch("conv1d", &sx, &sw));
        }
        if let Some(b) = bias {
            if self.shape(b) != [sw[0]] {
                return Err(TensorError::mismatch("conv1d", self.shape(b), &sw[..1]));
            }
        }
        let (batch, cin, len) = (sx[0], sx[1], sx[2]);
        let (cout, k) = (sw[0], sw[2]);
        let out_len = conv_out_len(len, k, stride, pad).ok_or_else(|| {
            TensorError::invalid(
                "conv1d",
                format!("input length {len} too short for kernel {k} (stride {stride}, pad {pad})"),
            )
        })?;
        let geom = ConvGeom {
            batch,
            cin,
            cout,
            len,
            k,
            stride,
            pad,
            out_len,
        };
        let mut out = vec![T::zero(); batch * cout * out_len];
        if let Some(b) = bias {
            let bv = self.value(b);
            for (row, chunk) in out.chunks_mut(out_len).enumerate() {
                chunk.iter_mut().for_each(|v| *v = bv[row % cout]);
            }
        }
        conv_forward(self.value(x), self.value(w), &mut out, &geom);
        let mut ids = vec![x, w];
        ids.extend(bias);
        let rg = self.any_grad(&ids);
        self.push(
            Op::Conv1d {
                x,
                w,
                bias,
                stride,
                pad,
            },
            vec![batch, cout, out_len],
            out,
            rg,
        )
    }

    // ----------------------------------------------------------- elementwise

    fn binary(&mut self, kind: Binary, a: NodeId, b: NodeId) -> Result<NodeId> {
        let name = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        };
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let shape = broadcast(&sa, &sb).ok_or_else(|| TensorError::mismatch(name, &sa, &sb))?;
        let f = |x: T, y: T| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y,
        };
        let (va, vb) = (self.value(a), self.value(b));
        let value: Vec<T> = if sa == sb {
            va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let (ma, mb) = (broadcast_map(&shape, &sa), broadcast_map(&shape, &sb));
            ma.iter().zip(&mb).map(|(&i, &j)| f(va[i], vb[j])).collect()
        };
        let op = match kind {
            Binary::Add => Op::Add(a, b),
            Binary::Sub => Op::Sub(a, b),
            Binary::Mul => Op::Mul(a, b),
            Binary::Div => Op::Div(a, b),
        };
        let rg = self.any_grad(&[a, b]);
        self.push(op, shape, value, rg)
    }

    /// Elementwise sum with numpy-style broadcasting.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(Binary::Div, a, b)
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        let c = T::of(c);
        self.unary(x, Op::AddScalar(x), |v| v + c)
    }

    pub fn mul_scalar(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        let s = T::of(c);
        self.unary(x, Op::MulScalar(x, c), |v| v * s)
    }

    pub fn neg(&mut self, x: NodeId) -> Result<NodeId> {
        self.mul_scalar(x, -1.0)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, Op::Relu(x), |v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn exp(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, Op::Exp(x), |v| v.exp())
    }

    pub fn log(&mut self, x: NodeId) -> Result<NodeId> {
        if self.value(x).iter().any(|&v| v <= T::zero()) {
            return Err(TensorError::invalid("log", "non-positive input"));
        }
        self.unary(x, Op::Log(x), |v| v.ln())
    }

    pub fn square(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    pub fn sqrt(&mut self, x: NodeId) -> Result<NodeId> {
        if self.value(x).iter().any(|&v| v < T::zero()) {
            return Err(TensorError::invalid("sqrt", "negative input"));
        }
        self.unary(x, Op::Sqrt(x), |v| v.sqrt())
    }

    pub fn abs(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, Op::Abs(x), |v| v.abs())
    }

    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        if lo > hi {
            return Err(TensorError::invalid("clamp", format!("lo {lo} > hi {hi}")));
        }
        let (l, h) = (T::of(lo), T::of(hi));
        self.unary(x, Op::Clamp(x, lo, hi), |v| v.max(l).min(h))
    }

    // ------------------------------------------------------------ last axis

    /// Softmax over the last axis, computed with max subtraction.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        let n = *shape.last().unwrap();
        let mut value = self.value(x).to_vec();
        for row in value.chunks_mut(n) {
            softmax_row(row);
        }
        let rg = self.requires_grad(x);
        self.push(Op::Softmax(x), shape, value, rg)
    }

    pub fn log_softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        let n = *shape.last().unwrap();
        let mut value = self.value(x).to_vec();
        for row in value.chunks_mut(n) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - m).exp()).sum::<T>().ln() + m;
            row.iter_mut().for_each(|v| *v = *v - lse);
        }
        let rg = self.requires_grad(x);
        self.push(Op::LogSoftmax(x), shape, value, rg)
    }

    // ----------------------------------------------------------- reductions

    fn check_axis(&self, op: &'static str, x: NodeId, axis: usize) -> Result<()> {
        if axis >= self.shape(x).len() {
            return Err(TensorError::invalid(
                op,
                format!("axis {axis} out of range for shape {:?}", self.shape(x)),
            ));
        }
        Ok(())
    }

    fn reduce_axis(&mut self, x: NodeId, axis: usize, scale: T, op: Op) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        let (outer, n, inner) = split_axis(&shape, axis);
        let v = self.value(x);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for a in 0..n {
                let src = &v[(o * n + a) * inner..(o * n + a + 1) * inner];
                let dst = &mut out[o * inner..(o + 1) * inner];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = *d + s;
                }
            }
        }
        out.iter_mut().for_each(|d| *d = *d * scale);
        let rg = self.requires_grad(x);
        self.push(op, without_axis(&shape, axis), out, rg)
    }

    /// Sum over `axis`; the axis is removed from the output shape.
    pub fn sum(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        self.check_axis("sum", x, axis)?;
        self.reduce_axis(x, axis, T::one(), Op::Sum(x, axis))
    }

    pub fn mean(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        self.check_axis("mean", x, axis)?;
        let n = self.shape(x)[axis];
        self.reduce_axis(x, axis, T::one() / T::of(n as f64), Op::Mean(x, axis))
    }

    /// Variance over `axis` (`unbiased` divides by n - 1).
    pub fn variance(&mut self, x: NodeId, axis: usize, unbiased: bool) -> Result<NodeId> {
        self.check_axis("variance", x, axis)?;
        let shape = self.shape(x).to_vec();
        let (outer, n, inner) = split_axis(&shape, axis);
        if unbiased && n < 2 {
            return Err(TensorError::invalid("variance", "unbiased variance needs n >= 2"));
        }
        let denom = T::of(if unbiased { n - 1 } else { n } as f64);
        let v = self.value(x);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| v[(o * n + a) * inner + i];
                let mu = (0..n).map(at).sum::<T>() / T::of(n as f64);
                let ss = (0..n).map(|a| (at(a) - mu) * (at(a) - mu)).sum::<T>();
                out[o * inner + i] = ss / denom;
            }
        }
        let rg = self.requires_grad(x);
        self.push(
            Op::Variance { x, axis, unbiased },
            without_axis(&shape, axis),
            out,
            rg,
        )
    }

    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.value(x).iter().copied().sum::<T>();
        let rg = self.requires_grad(x);
        self.push(Op::SumAll(x), vec![1], vec![s], rg)
    }

    pub fn mean_all(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let s = v.iter().copied().sum::<T>() / T::of(v.len() as f64);
        let rg = self.requires_grad(x);
        self.push(Op::MeanAll(x), vec![1], vec![s], rg)
    }

    // ---------------------------------------------------------------- shape

    pub fn concat(&mut self, xs: &[NodeId], axis: usize) -> Result<NodeId> {
        let first = xs
            .first()
            .ok_or_else(|| TensorError::invalid("concat", "no inputs"))?;
        self.check_axis("concat", *first, axis)?;
        let base = self.shape(*first).to_vec();
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(TensorError::mismatch("concat", &base, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let n = self.shape(x)[axis];
                out.extend_from_slice(&self.value(x)[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = self.any_grad(xs);
        self.push(Op::Concat(xs.to_vec(), axis), shape, out, rg)
    }

    /// Elements `start..start + len` along `axis`.
    pub fn slice(&mut self, x: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        self.check_axis("slice", x, axis)?;
        let shape = self.shape(x).to_vec();
        if len == 0 || start + len > shape[axis] {
            return Err(TensorError::invalid(
                "slice",
                format!("range {start}..{} outside extent {}", start + len, shape[axis]),
            ));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let v = self.value(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&v[(o * n + start) * inner..(o * n + start + len) * inner]);
        }
        let mut oshape = shape;
        oshape[axis] = len;
        let rg = self.requires_grad(x);
        self.push(Op::Slice { x, axis, start }, oshape, out, rg)
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(TensorError::invalid("transpose", format!("need rank 2, got {s:?}")));
        }
        let out = transpose_2d(self.value(x), s[0], s[1]);
        let rg = self.requires_grad(x);
        self.push(Op::Transpose(x), vec![s[1], s[0]], out, rg)
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        if shape.contains(&0) || shape.iter().product::<usize>() != self.value(x).len() {
            return Err(TensorError::mismatch("reshape", self.shape(x), shape));
        }
        let value = self.value(x).to_vec();
        let rg = self.requires_grad(x);
        self.push(Op::Reshape(x), shape.to_vec(), value, rg)
    }

    /// Per-channel affine map over axis 1: `y[b, c, ..] = x[b, c, ..] * scale[c] + shift[c]`.
    pub fn scale_shift(&mut self, x: NodeId, scale: NodeId, shift: NodeId) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 || self.shape(scale) != [s[1]] || self.shape(shift) != [s[1]] {
            return Err(TensorError::mismatch("scale_shift", &s, self.shape(scale)));
        }
        let (outer, c, inner) = split_axis(&s, 1);
        let (sv, bv) = (self.value(scale), self.value(shift));
        let mut out = self.value(x).to_vec();
        for o in 0..outer {
            for ch in 0..c {
                let at = (o * c + ch) * inner;
                for v in &mut out[at..at + inner] {
                    *v = *v * sv[ch] + bv[ch];
                }
            }
        }
        let rg = self.any_grad(&[x, scale, shift]);
        self.push(Op::ScaleShift { x, scale, shift }, s, out, rg)
    }

    // ------------------------------------------------------------- backward

    pub(crate) fn backprop_node(
        &self,
        id: NodeId,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
    ) -> Result<()> {
        let node = &self.nodes[id.0];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if let Some(ga) = self.grad_slot(grads, *a) {
                    let bv = self.value(*b);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            ga[i * k + p] = ga[i * k + p] + dot(grow, brow);
                        }
                    }
                }
                if let Some(gb) = self.grad_slot(grads, *b) {
                    let av = self.value(*a);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            axpy(av[i * k + p], grow, &mut gb[p * n..(p + 1) * n]);
                        }
                    }
                }
            }
            Op::Conv1d {
                x,
                w,
                bias,
                stride,
                pad,
            } => {
                let (sx, sw) = (self.shape(*x), self.shape(*w));
                let geom = ConvGeom {
                    batch: sx[0],
                    cin: sx[1],
                    cout: sw[0],
                    len: sx[2],
                    k: sw[2],
                    stride: *stride,
                    pad: *pad,
                    out_len: node.shape[2],
                };
                if let Some(gx) = self.grad_slot(grads, *x) {
                    conv_backward_input(g, self.value(*w), gx, &geom);
                }
                if let Some(gw) = self.grad_slot(grads, *w) {
                    conv_backward_weight(g, self.value(*x), gw, &geom);
                }
                if let Some(b) = bias {
                    if let Some(gb) = self.grad_slot(grads, *b) {
                        for (row, chunk) in g.chunks(geom.out_len).enumerate() {
                            let c = row % geom.cout;
                            gb[c] = gb[c] + chunk.iter().copied().sum::<T>();
                        }
                    }
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => {
                self.backprop_binary(&node.op, &node.shape, *a, *b, g, grads);
            }
            Op::AddScalar(x) => {
                if let Some(gx) = self.grad_slot(grads, *x) {
                    axpy(T::one(), g, gx);
                }
            }
            Op::MulScalar(x, c) => {
                if let Some(gx) = self.grad_slot(grads, *x) {
                    axpy(T::of(*c), g, gx);
                }
            }
            Op::Relu(x) => self.backprop_unary(*x, g, grads, |xv, _| {
                if xv > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }),
            Op::Exp(x) => {
                let y = &node.value;
                if let Some(gx) = self.grad_slot(grads, *x) {
                    for ((d, &gi), &yi) in gx.iter_mut().zip(g).zip(y) {
                        *d = *d + gi * yi;
                    }
                }
            }
            Op::Log(x) => self.backprop_unary(*x, g, grads, |xv, _| T::one() / xv),
            Op::Square(x) => self.backprop_unary(*x, g, grads, |xv, _| xv + xv),
            Op::Sqrt(x) => {
                let y = &node.value;
                if let Some(gx) = self.grad_slot(grads, *x) {
                    let half = T::of(0.5);
                    for ((d, &gi), &yi) in gx.iter_mut().zip(g).zip(y) {
                        *d = *d + gi * half / yi;
                    }
                }
            }
            Op::Abs(x) => self.backprop_unary(*x, g, grads, |xv, _| {
                if xv > T::zero() {
                    T::one()
                } else if xv < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            }),
            Op::Clamp(x, lo, hi) => {
                let (lo, hi) = (T::of(*lo), T::of(*hi));
                self.backprop_unary(*x, g, grads, |xv, _| {
                    if xv >= lo && xv <= hi {
                        T::one()
                    } else {
                        T::zero()
                    }
                })
            }
            Op::Softmax(x) => {
                let n = *node.shape.last().unwrap();
                if let Some(gx) = self.grad_slot(grads, *x) {
                    for ((dx, gy), y) in gx.chunks_mut(n).zip(g.chunks(n)).zip(node.value.chunks(n)) {
                        let s = dot(gy, y);
                        for ((d, &gi), &yi) in dx.iter_mut().zip(gy).zip(y) {
                            *d = *d + yi * (gi - s);
                        }
                    }
                }
            }
            Op::LogSoftmax(x) => {
                let n = *node.shape.last().unwrap();
                if let Some(gx) = self.grad_slot(grads, *x) {
                    for ((dx, gy), y) in gx.chunks_mut(n).zip(g.chunks(n)).zip(node.value.chunks(n)) {
                        let s = gy.iter().copied().sum::<T>();
                        for ((d, &gi), &yi) in dx.iter_mut().zip(gy).zip(y) {
                            *d = *d + gi - yi.exp() * s;
                        }
                    }
                }
            }
            Op::Sum(x, axis) | Op::Mean(x, axis) => {
                let (outer, n, inner) = split_axis(self.shape(*x), *axis);
                let scale = match node.op {
                    Op::Mean(..) => T::one() / T::of(n as f64),
                    _ => T::one(),
                };
                if let Some(gx) = self.grad_slot(grads, *x) {
                    for o in 0..outer {
                        let src = &g[o * inner..(o + 1) * inner];
                        for a in 0..n {
                            let dst = &mut gx[(o * n + a) * inner..(o * n + a + 1) * inner];
                            axpy(scale, src, dst);
                        }
                    }
                }
            }
            Op::Variance { x, axis, unbiased } => {
                let (outer, n, inner) = split_axis(self.shape(*x), *axis);
                let denom = T::of(if *unbiased { n - 1 } else { n } as f64);
                let v = self.value(*x);
                if let Some(gx) = self.grad_slot(grads, *x) {
                    let two = T::of(2.0);
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |a: usize| (o * n + a) * inner + i;
                            let mu = (0..n).map(|a| v[at(a)]).sum::<T>() / T::of(n as f64);
                            let gi = g[o * inner + i];
                            for a in 0..n {
                                gx[at(a)] = gx[at(a)] + gi * two * (v[at(a)] - mu) / denom;
                            }
                        }
                    }
                }
            }
            Op::SumAll(x) => {
                if let Some(gx) = self.grad_slot(grads, *x) {
                    gx.iter_mut().for_each(|d| *d = *d + g[0]);
                }
            }
            Op::MeanAll(x) => {
                if let Some(gx) = self.grad_slot(grads, *x) {
                    let s = g[0] / T::of(gx.len() as f64);
                    gx.iter_mut().for_each(|d| *d = *d + s);
                }
            }
            Op::Concat(xs, axis) => {
                let (outer, total, inner) = split_axis(&node.shape, *axis);
                let mut offset = 0;
                for &x in xs {
                    let n = self.shape(x)[*axis];
                    if let Some(gx) = self.grad_slot(grads, x) {
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + n) * inner];
                            axpy(T::one(), src, &mut gx[o * n * inner..(o + 1) * n * inner]);
                        }
                    }
                    offset += n;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, n, inner) = split_axis(self.shape(*x), *axis);
                let len = node.shape[*axis];
                if let Some(gx) = self.grad_slot(grads, *x) {
                    for o in 0..outer {
                        let dst = &mut gx[(o * n + start) * inner..(o * n + start + len) * inner];
                        axpy(T::one(), &g[o * len * inner..(o + 1) * len * inner], dst);
                    }
                }
            }
            Op::Transpose(x) => {
                let (r, c) = (node.shape[0], node.shape[1]);
                if let Some(gx) = self.grad_slot(grads, *x) {
                    let gt = transpose_2d(g, r, c);
                    axpy(T::one(), &gt, gx);
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = self.grad_slot(grads, *x) {
                    axpy(T::one(), g, gx);
                }
            }
            Op::ScaleShift { x, scale, shift } => {
                let (outer, c, inner) = split_axis(&node.shape, 1);
                let xv = self.value(*x);
                let sv = self.value(*scale);
                if let Some(gx) = self.grad_slot(grads, *x) {
                    for o in 0..outer {
                        for ch in 0..c {
                            let at = (o * c + ch) * inner;
                            axpy(sv[ch], &g[at..at + inner], &mut gx[at..at + inner]);
                        }
                    }
                }
                if let Some(gs) = self.grad_slot(grads, *scale) {
                    for o in 0..outer {
                        for ch in 0..c {
                            let at = (o * c + ch) * inner;
                            gs[ch] = gs[ch] + dot(&g[at..at + inner], &xv[at..at + inner]);
                        }
                    }
                }
                if let Some(gb) = self.grad_slot(grads, *shift) {
                    for o in 0..outer {
                        for ch in 0..c {
                            let at = (o * c + ch) * inner;
                            gb[ch] = gb[ch] + g[at..at + inner].iter().copied().sum::<T>();
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn backprop_unary(
        &self,
        x: NodeId,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
        dfdx: impl Fn(T, T) -> T,
    ) {
        let xv = self.value(x);
        if let Some(gx) = self.grad_slot(grads, x) {
            for ((d, &gi), &xi) in gx.iter_mut().zip(g).zip(xv) {
                *d = *d + gi * dfdx(xi, gi);
            }
        }
    }

    fn backprop_binary(
        &self,
        op: &Op,
        out_shape: &[usize],
        a: NodeId,
        b: NodeId,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let same = sa == sb;
        let ma = (!same).then(|| broadcast_map(out_shape, sa));
        let mb = (!same).then(|| broadcast_map(out_shape, sb));
        let ia = |i: usize| ma.as_ref().map_or(i, |m| m[i]);
        let ib = |i: usize| mb.as_ref().map_or(i, |m| m[i]);
        let (va, vb) = (self.value(a), self.value(b));
        if let Some(ga) = self.grad_slot(grads, a) {
            for (i, &gi) in g.iter().enumerate() {
                let d = match op {
                    Op::Add(..) | Op::Sub(..) => gi,
                    Op::Mul(..) => gi * vb[ib(i)],
                    _ => gi / vb[ib(i)],
                };
                ga[ia(i)] = ga[ia(i)] + d;
            }
        }
        if let Some(gb) = self.grad_slot(grads, b) {
            for (i, &gi) in g.iter().enumerate() {
                let d = match op {
                    Op::Add(..) => gi,
                    Op::Sub(..) => -gi,
                    Op::Mul(..) => gi * va[ia(i)],
                    _ => {
                        let y = vb[ib(i)];
                        -gi * va[ia(i)] / (y * y)
                    }
                };
                gb[ib(i)] = gb[ib(i)] + d;
            }
        }
    }
}

// -------------------------------------------------------------------- kernels

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    // Eight independent partial sums in a fixed order, so the result is
    // deterministic and the loop vectorizes.
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 8];
    let (ac, bc) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ar, br) = (ac.remainder(), bc.remainder());
    for (x, y) in ac.zip(bc) {
        for l in 0..8 {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    let mut s = acc.iter().copied().fold(T::zero(), |s, v| s + v);
    for (&x, &y) in ar.iter().zip(br) {
        s = s + x * y;
    }
    s
}

#[inline]
fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (d, &s) in y.iter_mut().zip(x) {
        *d = *d + alpha * s;
    }
}

fn softmax_row<T: Real>(row: &mut [T]) {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut z = T::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        z = z + *v;
    }
    row.iter_mut().for_each(|v| *v = *v / z);
}

fn matmul_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            axpy(a[i * k + p], &b[p * n..(p + 1) * n], orow);
        }
    }
}

fn transpose_2d<T: Real>(v: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); v.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = v[r * cols + c];
        }
    }
    out
}

struct ConvGeom {
    batch: usize,
    cin: usize,
    cout: usize,
    len: usize,
    k: usize,
    stride: usize,
    pad: usize,
    out_len: usize,
}

impl ConvGeom {
    /// Output positions `t` for which input index `t * stride + tap - pad`
    /// falls inside `[0, len)`.
    #[inline]
    fn valid(&self, tap: usize) -> (usize, usize) {
        let lo = if tap >= self.pad {
            0
        } else {
            (self.pad - tap).div_ceil(self.stride)
        };
        let last_in = self.len - 1 + self.pad;
        let hi = if last_in < tap {
            0
        } else {
            ((last_in - tap) / self.stride + 1).min(self.out_len)
        };
        (lo, hi.max(lo))
    }
}

/// Unfolds `x [B, Cin, L]` into columns `[Cin*K, B*out_len]`; padded taps
/// read as zero.
fn im2col<T: Real>(x: &[T], c: &ConvGeom) -> Vec<T> {
    let n = c.batch * c.out_len;
    let mut cols = vec![T::zero(); c.cin * c.k * n];
    for ci in 0..c.cin {
        for tap in 0..c.k {
            let (lo, hi) = c.valid(tap);
            let row = &mut cols[(ci * c.k + tap) * n..(ci * c.k + tap + 1) * n];
            for b in 0..c.batch {
                let xrow = &x[(b * c.cin + ci) * c.len..(b * c.cin + ci + 1) * c.len];
                let dst = &mut row[b * c.out_len..(b + 1) * c.out_len];
                for t in lo..hi {
                    dst[t] = xrow[t * c.stride + tap - c.pad];
                }
            }
        }
    }
    cols
}

/// `[B, Cout, out_len]` to `[Cout, B*out_len]`.
fn fold_batch<T: Real>(g: &[T], c: &ConvGeom) -> Vec<T> {
    let n = c.batch * c.out_len;
    let mut out = vec![T::zero(); c.cout * n];
    for b in 0..c.batch {
        for co in 0..c.cout {
            let src = &g[(b * c.cout + co) * c.out_len..(b * c.cout + co + 1) * c.out_len];
            out[co * n + b * c.out_len..co * n + (b + 1) * c.out_len].copy_from_slice(src);
        }
    }
    out
}

fn conv_forward<T: Real>(x: &[T], w: &[T], out: &mut [T], c: &ConvGeom) {
    let n = c.batch * c.out_len;
    let cols = im2col(x, c);
    let mut tmp = vec![T::zero(); c.cout * n];
    matmul_acc(w, &cols, &mut tmp, c.cout, c.cin * c.k, n);
    for b in 0..c.batch {
        for co in 0..c.cout {
            let src = &tmp[co * n + b * c.out_len..co * n + (b + 1) * c.out_len];
            let dst = &mut out[(b * c.cout + co) * c.out_len..(b * c.cout + co + 1) * c.out_len];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = *d + s;
            }
        }
    }
}

fn conv_backward_input<T: Real>(g: &[T], w: &[T], gx: &mut [T], c: &ConvGeom) {
    let n = c.batch * c.out_len;
    let r = c.cin * c.k;
    let gf = fold_batch(g, c);
    let mut gcols = vec![T::zero(); r * n];
    for co in 0..c.cout {
        let grow = &gf[co * n..(co + 1) * n];
        for (j, &wv) in w[co * r..(co + 1) * r].iter().enumerate() {
            axpy(wv, grow, &mut gcols[j * n..(j + 1) * n]);
        }
    }
    for ci in 0..c.cin {
        for tap in 0..c.k {
            let (lo, hi) = c.valid(tap);
            let row = &gcols[(ci * c.k + tap) * n..(ci * c.k + tap + 1) * n];
            for b in 0..c.batch {
                let xrow = &mut gx[(b * c.cin + ci) * c.len..(b * c.cin + ci + 1) * c.len];
                let src = &row[b * c.out_len..(b + 1) * c.out_len];
                for t in lo..hi {
                    let i = t * c.stride + tap - c.pad;
                    xrow[i] = xrow[i] + src[t];
                }
            }
        }
    }
}

fn conv_backward_weight<T: Real>(g: &[T], x: &[T], gw: &mut [T], c: &ConvGeom) {
    let n = c.batch * c.out_len;
    let r = c.cin * c.k;
    let gf = fold_batch(g, c);
    let cols = im2col(x, c);
    for co in 0..c.cout {
        let grow = &gf[co * n..(co + 1) * n];
        for j in 0..r {
            let v = dot(grow, &cols[j * n..(j + 1) * n]);
            gw[co * r + j] = gw[co * r + j] + v;
        }
    }
}
