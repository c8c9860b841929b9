use std::cell::RefCell;
use std::ops::Range;

use super::{Real, Tensor, TensorError};

type Result<T> = std::result::Result<T, TensorError>;

const SIG_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Constant,
    MatMul(usize, usize),
    Add { a: usize, b: usize, broadcast: bool },
    Mul { a: usize, b: usize, broadcast: bool },
    Affine { x: usize, scale: T },
    Concat { inputs: Vec<usize>, axis: usize },
    SliceRows { x: usize, start: usize },
    Transpose(usize),
    Relu(usize),
    Sigmoid(usize),
    Log { x: usize, floor: T },
    Softmax { x: usize, axis: usize },
    SegmentMean { x: usize, spans: Vec<Range<usize>> },
    SegmentMax { x: usize, argmax: Vec<usize> },
    Gather { x: usize, index: Vec<usize> },
    ScatterAdd { x: usize, index: Vec<usize> },
    ScaleRows { x: usize, weights: Vec<T> },
    RepeatRows(usize),
    SumAll(usize),
    MeanAll(usize),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug)]
struct Inner<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
    signature: u64,
}

/// Records operations in execution order for a single reverse pass.
///
/// Nodes are appended as operations run, so every operation's inputs
/// precede it and [`Tape::backward`] walks the list once in reverse.
/// A tape is consumed by `backward`; record a fresh one for the next pass.
#[derive(Debug)]
pub struct Tape<T: Real> {
    inner: RefCell<Inner<T>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug)]
pub struct Var<'t, T: Real> {
    tape: &'t Tape<T>,
    id: usize,
}

/// Gradients of a scalar loss with respect to every leaf on the tape.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of `leaf`; `None` when the leaf does not reach the loss.
    pub fn get(&self, leaf: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(leaf.id).and_then(Option::as_ref)
    }

    /// Like [`get`](Self::get) but yields zeros for unreachable leaves.
    pub fn get_or_zeros(&self, leaf: Var<'_, T>, shape: [usize; 2]) -> Tensor<T> {
        self.get(leaf)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape[0], shape[1]))
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            inner: RefCell::new(Inner {
                nodes: Vec::new(),
                consumed: false,
                signature: 0xcbf2_9ce4_8422_2325,
            }),
        }
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Constant, false)
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Hash of every branch decision taken so far (ReLU signs, max-pool
    /// argmax rows, active log clamps). Two evaluations with equal
    /// signatures lie in the same smooth piece of the function.
    pub fn signature(&self) -> u64 {
        self.inner.borrow().signature
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
        let mut inner = self.inner.borrow_mut();
        assert!(!inner.consumed, "recording on a consumed tape");
        inner.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: inner.nodes.len() - 1,
        }
    }

    fn needs_grad(&self, ids: &[usize]) -> bool {
        let inner = self.inner.borrow();
        ids.iter().any(|&i| inner.nodes[i].requires_grad)
    }

    fn mix(&self, bits: impl Iterator<Item = u64>) {
        let mut inner = self.inner.borrow_mut();
        let mut s = inner.signature;
        for b in bits {
            s = (s ^ b).wrapping_mul(SIG_PRIME);
        }
        inner.signature = s;
    }

    fn record(&self, value: Tensor<T>, op: Op<T>, inputs: &[usize]) -> Var<'_, T> {
        let rg = self.needs_grad(inputs);
        self.push(value, op, rg)
    }

    fn with_value<R>(&self, id: usize, f: impl FnOnce(&Tensor<T>) -> R) -> R {
        let inner = self.inner.borrow();
        assert!(!inner.consumed, "reading from a consumed tape");
        f(&inner.nodes[id].value)
    }

    /// Propagates d`loss`/d`leaf` to every leaf and consumes the tape.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let mut inner = self.inner.borrow_mut();
        if inner.consumed {
            return Err(TensorError::TapeConsumed);
        }
        let nodes = &inner.nodes;
        let shape = nodes[loss.id].value.shape();
        if shape != [1, 1] {
            return Err(TensorError::NotScalar(shape));
        }
        if !nodes[loss.id].requires_grad {
            return Err(TensorError::DetachedLoss);
        }

        let mut grads: Vec<Option<Vec<T>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(vec![T::one()]);

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let gy = match node.op {
                Op::Leaf => continue,
                _ => match grads[id].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            backprop(nodes, id, &gy, &mut grads);
        }

        let out = grads
            .into_iter()
            .zip(nodes.iter())
            .map(|(g, n)| match (g, &n.op) {
                (Some(g), Op::Leaf) => Some(Tensor {
                    rows: n.value.rows,
                    cols: n.value.cols,
                    data: g,
                }),
                _ => None,
            })
            .collect();

        inner.nodes.clear();
        inner.consumed = true;
        Ok(Gradients { grads: out })
    }
}

fn acc<'g, T: Real>(grads: &'g mut [Option<Vec<T>>], nodes: &[Node<T>], id: usize) -> Option<&'g mut Vec<T>> {
    if !nodes[id].requires_grad {
        return None;
    }
    let len = nodes[id].value.data.len();
    Some(grads[id].get_or_insert_with(|| vec![T::zero(); len]))
}

fn backprop<T: Real>(nodes: &[Node<T>], id: usize, gy: &[T], grads: &mut [Option<Vec<T>>]) {
    let out = &nodes[id].value;
    match &nodes[id].op {
        Op::Leaf | Op::Constant => {}
        Op::MatMul(a, b) => {
            let av = &nodes[*a].value;
            let bv = &nodes[*b].value;
            let (m, k, n) = (av.rows, av.cols, bv.cols);
            if let Some(ga) = acc(grads, nodes, *a) {
                // ga = gy · bᵀ
                for i in 0..m {
                    for p in 0..k {
                        let mut s = T::zero();
                        for j in 0..n {
                            s += gy[i * n + j] * bv.data[p * n + j];
                        }
                        ga[i * k + p] += s;
                    }
                }
            }
            if let Some(gb) = acc(grads, nodes, *b) {
                // gb = aᵀ · gy
                for i in 0..m {
                    for p in 0..k {
                        let a_ip = av.data[i * k + p];
                        if a_ip == T::zero() {
                            continue;
                        }
                        let row = &gy[i * n..(i + 1) * n];
                        let dst = &mut gb[p * n..(p + 1) * n];
                        for (d, &g) in dst.iter_mut().zip(row) {
                            *d += a_ip * g;
                        }
                    }
                }
            }
        }
        Op::Add { a, b, broadcast } => {
            if let Some(ga) = acc(grads, nodes, *a) {
                for (d, &g) in ga.iter_mut().zip(gy) {
                    *d += g;
                }
            }
            if let Some(gb) = acc(grads, nodes, *b) {
                if *broadcast {
                    let n = out.cols;
                    for row in gy.chunks(n) {
                        for (d, &g) in gb.iter_mut().zip(row) {
                            *d += g;
                        }
                    }
                } else {
                    for (d, &g) in gb.iter_mut().zip(gy) {
                        *d += g;
                    }
                }
            }
        }
        Op::Mul { a, b, broadcast } => {
            let av = &nodes[*a].value;
            let bv = &nodes[*b].value;
            let n = out.cols;
            let b_at = |i: usize| if *broadcast { bv.data[i % n] } else { bv.data[i] };
            if let Some(ga) = acc(grads, nodes, *a) {
                for (i, d) in ga.iter_mut().enumerate() {
                    *d += gy[i] * b_at(i);
                }
            }
            if let Some(gb) = acc(grads, nodes, *b) {
                for (i, &g) in gy.iter().enumerate() {
                    let j = if *broadcast { i % n } else { i };
                    gb[j] += g * av.data[i];
                }
            }
        }
        Op::Affine { x, scale } => {
            if let Some(gx) = acc(grads, nodes, *x) {
                for (d, &g) in gx.iter_mut().zip(gy) {
                    *d += *scale * g;
                }
            }
        }
        Op::Concat { inputs, axis } => {
            let mut offset = 0;
            for &inp in inputs {
                let iv = &nodes[inp].value;
                let (r, c) = (iv.rows, iv.cols);
                if let Some(gx) = acc(grads, nodes, inp) {
                    if *axis == 0 {
                        let base = offset * out.cols;
                        for (d, &g) in gx.iter_mut().zip(&gy[base..base + r * c]) {
                            *d += g;
                        }
                    } else {
                        for i in 0..r {
                            let src = &gy[i * out.cols + offset..i * out.cols + offset + c];
                            for (d, &g) in gx[i * c..(i + 1) * c].iter_mut().zip(src) {
                                *d += g;
                            }
                        }
                    }
                }
                offset += if *axis == 0 { r } else { c };
            }
        }
        Op::SliceRows { x, start } => {
            let c = out.cols;
            if let Some(gx) = acc(grads, nodes, *x) {
                let base = start * c;
                for (d, &g) in gx[base..base + gy.len()].iter_mut().zip(gy) {
                    *d += g;
                }
            }
        }
        Op::Transpose(x) => {
            let (r, c) = (out.rows, out.cols);
            if let Some(gx) = acc(grads, nodes, *x) {
                for i in 0..r {
                    for j in 0..c {
                        gx[j * r + i] += gy[i * c + j];
                    }
                }
            }
        }
        Op::Relu(x) => {
            let xv = &nodes[*x].value;
            if let Some(gx) = acc(grads, nodes, *x) {
                for (i, d) in gx.iter_mut().enumerate() {
                    if xv.data[i] > T::zero() {
                        *d += gy[i];
                    }
                }
            }
        }
        Op::Sigmoid(x) => {
            if let Some(gx) = acc(grads, nodes, *x) {
                for (i, d) in gx.iter_mut().enumerate() {
                    let y = out.data[i];
                    *d += gy[i] * y * (T::one() - y);
                }
            }
        }
        Op::Log { x, floor } => {
            let xv = &nodes[*x].value;
            if let Some(gx) = acc(grads, nodes, *x) {
                for (i, d) in gx.iter_mut().enumerate() {
                    let v = xv.data[i];
                    if v > *floor {
                        *d += gy[i] / v;
                    }
                }
            }
        }
        Op::Softmax { x, axis } => {
            let (r, c) = (out.rows, out.cols);
            if let Some(gx) = acc(grads, nodes, *x) {
                let y = &out.data;
                if *axis == 1 {
                    for i in 0..r {
                        let row = i * c..(i + 1) * c;
                        let dot: T = row.clone().map(|k| gy[k] * y[k]).sum();
                        for k in row {
                            gx[k] += y[k] * (gy[k] - dot);
                        }
                    }
                } else {
                    for j in 0..c {
                        let dot: T = (0..r).map(|i| gy[i * c + j] * y[i * c + j]).sum();
                        for i in 0..r {
                            let k = i * c + j;
                            gx[k] += y[k] * (gy[k] - dot);
                        }
                    }
                }
            }
        }
        Op::SegmentMean { x, spans } => {
            let c = out.cols;
            if let Some(gx) = acc(grads, nodes, *x) {
                for (s, span) in spans.iter().enumerate() {
                    let inv = T::one() / T::of(span.len() as f64);
                    for r in span.clone() {
                        for j in 0..c {
                            gx[r * c + j] += gy[s * c + j] * inv;
                        }
                    }
                }
            }
        }
        Op::SegmentMax { x, argmax } => {
            let c = out.cols;
            if let Some(gx) = acc(grads, nodes, *x) {
                for (k, &r) in argmax.iter().enumerate() {
                    let j = k % c;
                    gx[r * c + j] += gy[k];
                }
            }
        }
        Op::Gather { x, index } => {
            let c = out.cols;
            if let Some(gx) = acc(grads, nodes, *x) {
                for (i, &src) in index.iter().enumerate() {
                    for j in 0..c {
                        gx[src * c + j] += gy[i * c + j];
                    }
                }
            }
        }
        Op::ScatterAdd { x, index } => {
            let c = out.cols;
            if let Some(gx) = acc(grads, nodes, *x) {
                for (i, &dst) in index.iter().enumerate() {
                    for j in 0..c {
                        gx[i * c + j] += gy[dst * c + j];
                    }
                }
            }
        }
        Op::ScaleRows { x, weights } => {
            let c = out.cols;
            if let Some(gx) = acc(grads, nodes, *x) {
                for (i, &w) in weights.iter().enumerate() {
                    for j in 0..c {
                        gx[i * c + j] += w * gy[i * c + j];
                    }
                }
            }
        }
        Op::RepeatRows(x) => {
            let c = out.cols;
            if let Some(gx) = acc(grads, nodes, *x) {
                for row in gy.chunks(c) {
                    for (d, &g) in gx.iter_mut().zip(row) {
                        *d += g;
                    }
                }
            }
        }
        Op::SumAll(x) => {
            if let Some(gx) = acc(grads, nodes, *x) {
                for d in gx.iter_mut() {
                    *d += gy[0];
                }
            }
        }
        Op::MeanAll(x) => {
            if let Some(gx) = acc(grads, nodes, *x) {
                let inv = T::one() / T::of(gx.len() as f64);
                for d in gx.iter_mut() {
                    *d += gy[0] * inv;
                }
            }
        }
    }
}

fn check_spans(spans: &[Range<usize>], rows: usize) -> Result<()> {
    for s in spans {
        if s.is_empty() {
            return Err(TensorError::EmptySegment(s.clone()));
        }
        if s.end > rows {
            return Err(TensorError::SegmentOutOfBounds {
                segment: s.clone(),
                rows,
            });
        }
    }
    Ok(())
}

impl<'t, T: Real> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    /// Copy of the forward value. Panics once the tape is consumed.
    pub fn value(&self) -> Tensor<T> {
        self.tape.with_value(self.id, Tensor::clone)
    }

    pub fn shape(&self) -> [usize; 2] {
        self.tape.with_value(self.id, Tensor::shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.needs_grad(&[self.id])
    }

    fn map(&self, op: Op<T>, f: impl Fn(T) -> T) -> Var<'t, T> {
        let value = self.tape.with_value(self.id, |x| Tensor {
            rows: x.rows,
            cols: x.cols,
            data: x.data.iter().map(|&v| f(v)).collect(),
        });
        self.tape.record(value, op, &[self.id])
    }

    pub fn matmul(&self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        let value = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id].value;
            let b = &inner.nodes[rhs.id].value;
            if a.cols != b.rows {
                return Err(TensorError::ShapeMismatch {
                    op: "matmul",
                    lhs: a.shape(),
                    rhs: b.shape(),
                });
            }
            let (m, k, n) = (a.rows, a.cols, b.cols);
            let mut out = vec![T::zero(); m * n];
            for i in 0..m {
                let dst = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    let a_ip = a.data[i * k + p];
                    if a_ip == T::zero() {
                        continue;
                    }
                    for (d, &bv) in dst.iter_mut().zip(&b.data[p * n..(p + 1) * n]) {
                        *d += a_ip * bv;
                    }
                }
            }
            Tensor {
                rows: m,
                cols: n,
                data: out,
            }
        };
        Ok(self.tape.record(value, Op::MatMul(self.id, rhs.id), &[self.id, rhs.id]))
    }

    fn binary(&self, rhs: Var<'t, T>, name: &'static str, f: impl Fn(T, T) -> T) -> Result<(Tensor<T>, bool)> {
        let inner = self.tape.inner.borrow();
        let a = &inner.nodes[self.id].value;
        let b = &inner.nodes[rhs.id].value;
        let broadcast = if a.shape() == b.shape() {
            false
        } else if b.rows == 1 && b.cols == a.cols {
            true
        } else {
            return Err(TensorError::ShapeMismatch {
                op: name,
                lhs: a.shape(),
                rhs: b.shape(),
            });
        };
        let n = a.cols;
        let data = a
            .data
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, if broadcast { b.data[i % n] } else { b.data[i] }))
            .collect();
        Ok((
            Tensor {
                rows: a.rows,
                cols: a.cols,
                data,
            },
            broadcast,
        ))
    }

    /// Elementwise sum. `rhs` may also be a single row broadcast over rows.
    pub fn add(&self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        let (value, broadcast) = self.binary(rhs, "add", |x, y| x + y)?;
        Ok(self.tape.record(
            value,
            Op::Add {
                a: self.id,
                b: rhs.id,
                broadcast,
            },
            &[self.id, rhs.id],
        ))
    }

    /// Elementwise product, with the same row broadcast as [`add`](Self::add).
    pub fn mul(&self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        let (value, broadcast) = self.binary(rhs, "mul", |x, y| x * y)?;
        Ok(self.tape.record(
            value,
            Op::Mul {
                a: self.id,
                b: rhs.id,
                broadcast,
            },
            &[self.id, rhs.id],
        ))
    }

    /// `scale * x + shift` elementwise.
    pub fn affine(&self, scale: T, shift: T) -> Var<'t, T> {
        self.map(Op::Affine { x: self.id, scale }, |v| scale * v + shift)
    }

    pub fn scale(&self, scale: T) -> Var<'t, T> {
        self.affine(scale, T::zero())
    }

    pub fn neg(&self) -> Var<'t, T> {
        self.affine(-T::one(), T::zero())
    }

    pub fn relu(&self) -> Var<'t, T> {
        let out = self.map(Op::Relu(self.id), |v| if v > T::zero() { v } else { T::zero() });
        let bits = self.tape.with_value(self.id, |x| {
            x.data.iter().map(|&v| (v > T::zero()) as u64).collect::<Vec<_>>()
        });
        self.tape.mix(bits.into_iter());
        out
    }

    pub fn sigmoid(&self) -> Var<'t, T> {
        self.map(Op::Sigmoid(self.id), sigmoid)
    }

    /// Natural log of `max(x, floor)`; clamped entries get zero gradient.
    pub fn log_clamped(&self, floor: T) -> Var<'t, T> {
        let bits = self.tape.with_value(self.id, |x| {
            x.data.iter().map(|&v| (v > floor) as u64).collect::<Vec<_>>()
        });
        self.tape.mix(bits.into_iter());
        self.map(Op::Log { x: self.id, floor }, |v| v.max(floor).ln())
    }

    pub fn log(&self) -> Var<'t, T> {
        self.log_clamped(T::min_positive_value())
    }

    /// Max-subtracted softmax. `axis = 1` normalizes each row, `axis = 0`
    /// each column.
    pub fn softmax(&self, axis: usize) -> Var<'t, T> {
        assert!(axis < 2, "softmax axis must be 0 or 1");
        let value = self.tape.with_value(self.id, |x| softmax_value(x, axis));
        self.tape.record(value, Op::Softmax { x: self.id, axis }, &[self.id])
    }

    pub fn concat(parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        assert!(axis < 2, "concat axis must be 0 or 1");
        let tape = parts.first().expect("concat of nothing").tape;
        let value = {
            let inner = tape.inner.borrow();
            let vals: Vec<&Tensor<T>> = parts.iter().map(|p| &inner.nodes[p.id].value).collect();
            let first = vals[0].shape();
            for v in &vals[1..] {
                let ok = if axis == 0 {
                    v.cols == first[1]
                } else {
                    v.rows == first[0]
                };
                if !ok {
                    return Err(TensorError::ShapeMismatch {
                        op: "concat",
                        lhs: first,
                        rhs: v.shape(),
                    });
                }
            }
            if axis == 0 {
                let rows = vals.iter().map(|v| v.rows).sum();
                let data = vals.iter().flat_map(|v| v.data.iter().copied()).collect();
                Tensor {
                    rows,
                    cols: first[1],
                    data,
                }
            } else {
                let cols: usize = vals.iter().map(|v| v.cols).sum();
                let mut data = Vec::with_capacity(first[0] * cols);
                for i in 0..first[0] {
                    for v in &vals {
                        data.extend_from_slice(v.row_slice(i));
                    }
                }
                Tensor {
                    rows: first[0],
                    cols,
                    data,
                }
            }
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        Ok(tape.record(
            value,
            Op::Concat {
                inputs: ids.clone(),
                axis,
            },
            &ids,
        ))
    }

    pub fn slice_rows(&self, rows: Range<usize>) -> Result<Var<'t, T>> {
        let value = self.tape.with_value(self.id, |x| {
            if rows.start > rows.end || rows.end > x.rows {
                return Err(TensorError::SegmentOutOfBounds {
                    segment: rows.clone(),
                    rows: x.rows,
                });
            }
            Ok(Tensor {
                rows: rows.len(),
                cols: x.cols,
                data: x.data[rows.start * x.cols..rows.end * x.cols].to_vec(),
            })
        })?;
        Ok(self.tape.record(
            value,
            Op::SliceRows {
                x: self.id,
                start: rows.start,
            },
            &[self.id],
        ))
    }

    pub fn transpose(&self) -> Var<'t, T> {
        let value = self.tape.with_value(self.id, |x| {
            let mut data = vec![T::zero(); x.data.len()];
            for i in 0..x.rows {
                for j in 0..x.cols {
                    data[j * x.rows + i] = x.data[i * x.cols + j];
                }
            }
            Tensor {
                rows: x.cols,
                cols: x.rows,
                data,
            }
        });
        self.tape.record(value, Op::Transpose(self.id), &[self.id])
    }

    /// Column-wise mean of each row span.
    pub fn segment_mean(&self, spans: &[Range<usize>]) -> Result<Var<'t, T>> {
        let value = self.tape.with_value(self.id, |x| {
            check_spans(spans, x.rows)?;
            let c = x.cols;
            let mut data = vec![T::zero(); spans.len() * c];
            for (s, span) in spans.iter().enumerate() {
                let inv = T::one() / T::of(span.len() as f64);
                for r in span.clone() {
                    for j in 0..c {
                        data[s * c + j] += x.data[r * c + j];
                    }
                }
                for d in &mut data[s * c..(s + 1) * c] {
                    *d = *d * inv;
                }
            }
            Ok(Tensor {
                rows: spans.len(),
                cols: c,
                data,
            })
        })?;
        Ok(self.tape.record(
            value,
            Op::SegmentMean {
                x: self.id,
                spans: spans.to_vec(),
            },
            &[self.id],
        ))
    }

    /// Column-wise max of each row span. Gradient flows to the lowest row
    /// index among the maxima.
    pub fn segment_max(&self, spans: &[Range<usize>]) -> Result<Var<'t, T>> {
        let (value, argmax) = self.tape.with_value(self.id, |x| {
            check_spans(spans, x.rows)?;
            let c = x.cols;
            let mut data = Vec::with_capacity(spans.len() * c);
            let mut argmax = Vec::with_capacity(spans.len() * c);
            for span in spans {
                for j in 0..c {
                    let mut best = span.start;
                    for r in span.clone() {
                        if x.data[r * c + j] > x.data[best * c + j] {
                            best = r;
                        }
                    }
                    data.push(x.data[best * c + j]);
                    argmax.push(best);
                }
            }
            Ok((
                Tensor {
                    rows: spans.len(),
                    cols: c,
                    data,
                },
                argmax,
            ))
        })?;
        self.tape.mix(argmax.iter().map(|&r| r as u64));
        Ok(self
            .tape
            .record(value, Op::SegmentMax { x: self.id, argmax }, &[self.id]))
    }

    /// Output row `i` is input row `index[i]`.
    pub fn gather_rows(&self, index: &[usize]) -> Result<Var<'t, T>> {
        let value = self.tape.with_value(self.id, |x| {
            let mut data = Vec::with_capacity(index.len() * x.cols);
            for &i in index {
                if i >= x.rows {
                    return Err(TensorError::IndexOutOfBounds { index: i, len: x.rows });
                }
                data.extend_from_slice(x.row_slice(i));
            }
            Ok(Tensor {
                rows: index.len(),
                cols: x.cols,
                data,
            })
        })?;
        Ok(self.tape.record(
            value,
            Op::Gather {
                x: self.id,
                index: index.to_vec(),
            },
            &[self.id],
        ))
    }

    /// Sums input row `i` into output row `index[i]` of an `out_rows`-row
    /// result.
    pub fn scatter_add(&self, index: &[usize], out_rows: usize) -> Result<Var<'t, T>> {
        let value = self.tape.with_value(self.id, |x| {
            if index.len() != x.rows {
                return Err(TensorError::ShapeMismatch {
                    op: "scatter_add",
                    lhs: x.shape(),
                    rhs: [index.len(), 1],
                });
            }
            let c = x.cols;
            let mut data = vec![T::zero(); out_rows * c];
            for (i, &dst) in index.iter().enumerate() {
                if dst >= out_rows {
                    return Err(TensorError::IndexOutOfBounds {
                        index: dst,
                        len: out_rows,
                    });
                }
                for j in 0..c {
                    data[dst * c + j] += x.data[i * c + j];
                }
            }
            Ok(Tensor {
                rows: out_rows,
                cols: c,
                data,
            })
        })?;
        Ok(self.tape.record(
            value,
            Op::ScatterAdd {
                x: self.id,
                index: index.to_vec(),
            },
            &[self.id],
        ))
    }

    /// Multiplies row `i` by the constant `weights[i]`.
    pub fn scale_rows(&self, weights: &[T]) -> Result<Var<'t, T>> {
        let value = self.tape.with_value(self.id, |x| {
            if weights.len() != x.rows {
                return Err(TensorError::ShapeMismatch {
                    op: "scale_rows",
                    lhs: x.shape(),
                    rhs: [weights.len(), 1],
                });
            }
            let c = x.cols;
            let data = x
                .data
                .iter()
                .enumerate()
                .map(|(i, &v)| v * weights[i / c.max(1)])
                .collect();
            Ok(Tensor {
                rows: x.rows,
                cols: c,
                data,
            })
        })?;
        Ok(self.tape.record(
            value,
            Op::ScaleRows {
                x: self.id,
                weights: weights.to_vec(),
            },
            &[self.id],
        ))
    }

    /// Stacks a single row `n` times.
    pub fn repeat_rows(&self, n: usize) -> Result<Var<'t, T>> {
        let value = self.tape.with_value(self.id, |x| {
            if x.rows != 1 {
                return Err(TensorError::ShapeMismatch {
                    op: "repeat_rows",
                    lhs: x.shape(),
                    rhs: [1, x.cols],
                });
            }
            Ok(Tensor {
                rows: n,
                cols: x.cols,
                data: x.data.repeat(n),
            })
        })?;
        Ok(self.tape.record(value, Op::RepeatRows(self.id), &[self.id]))
    }

    pub fn sum_all(&self) -> Var<'t, T> {
        let value = self
            .tape
            .with_value(self.id, |x| Tensor::scalar(x.data.iter().copied().sum()));
        self.tape.record(value, Op::SumAll(self.id), &[self.id])
    }

    pub fn mean_all(&self) -> Var<'t, T> {
        let value = self.tape.with_value(self.id, |x| {
            let s: T = x.data.iter().copied().sum();
            Tensor::scalar(s / T::of(x.data.len() as f64))
        });
        self.tape.record(value, Op::MeanAll(self.id), &[self.id])
    }
}

pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn softmax_value<T: Real>(x: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (r, c) = (x.rows, x.cols);
    let mut data = x.data.clone();
    let groups: Vec<Vec<usize>> = if axis == 1 {
        (0..r).map(|i| (i * c..(i + 1) * c).collect()).collect()
    } else {
        (0..c).map(|j| (0..r).map(|i| i * c + j).collect()).collect()
    };
    for g in groups {
        let max = g.iter().map(|&k| x.data[k]).fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for &k in &g {
            let e = (x.data[k] - max).exp();
            data[k] = e;
            sum += e;
        }
        for &k in &g {
            data[k] = data[k] / sum;
        }
    }
    Tensor { rows: r, cols: c, data }
}
