use ndarray::{s, Array2, Axis};

use super::params::{Gradients, ParamId, ParamStore};
use super::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Geometry of a single-channel valid 2-D cross-correlation.
///
/// The input column holds a `height x width` image in row-major order, the
/// kernel matrix is `filters x (kernel * kernel)` and the output column holds
/// `filters` feature maps of `(height - kernel + 1) x (width - kernel + 1)`,
/// also row-major, one map after the other.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub filters: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        self.height + 1 - self.kernel
    }

    pub fn out_width(&self) -> usize {
        self.width + 1 - self.kernel
    }

    pub fn out_len(&self) -> usize {
        self.filters * self.out_height() * self.out_width()
    }
}

enum Op {
    Input,
    Param(ParamId),
    Gather {
        src: NodeId,
        cols: Vec<Option<usize>>,
    },
    MatMul(NodeId, NodeId),
    /// `a^T b`
    MatMulTn(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    ConcatRows(Vec<NodeId>),
    SliceRows {
        src: NodeId,
        start: usize,
    },
    ConcatCols(Vec<NodeId>),
    SliceCols {
        src: NodeId,
        start: usize,
    },
    Blend {
        new: NodeId,
        old: NodeId,
        mask: Vec<f64>,
    },
    MulConst {
        src: NodeId,
        factor: Matrix,
    },
    ScaleCols {
        src: NodeId,
        weights: NodeId,
    },
    Sum(Vec<NodeId>),
    Scale {
        src: NodeId,
        factor: f64,
    },
    MaskedSoftmax(NodeId),
    Reshape(NodeId),
    SparseMix {
        src: NodeId,
        entries: Vec<(usize, usize, f64)>,
    },
    SegmentMax {
        src: NodeId,
        argmax: Array2<usize>,
    },
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        geom: ConvGeometry,
    },
    SoftmaxXent {
        logits: NodeId,
        labels: Vec<usize>,
        weights: Vec<f64>,
        probs: Matrix,
    },
    BceLogits {
        logits: NodeId,
        targets: Matrix,
        weights: Vec<f64>,
    },
}

struct Node {
    op: Op,
    value: Option<Matrix>,
    needs_grad: bool,
}

/// A define-by-run computation graph. Values are computed eagerly as nodes
/// are added; [`Graph::backward`] replays the tape in reverse.
pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<NodeId>>,
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::with_capacity(1024),
            param_nodes: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        let node = &self.nodes[id.0];
        match (&node.op, &node.value) {
            (Op::Param(p), _) => self.store.value(*p),
            (_, Some(v)) => v,
            (_, None) => unreachable!("non-parameter node without value"),
        }
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.value(id).dim()
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        assert_eq!(v.dim(), (1, 1), "scalar() on non-scalar node");
        v[[0, 0]]
    }

    fn push(&mut self, op: Op, value: Matrix, parents: &[NodeId]) -> NodeId {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            op,
            value: Some(value),
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Matrix) -> NodeId {
        self.nodes.push(Node {
            op: Op::Input,
            value: Some(value),
            needs_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> NodeId {
        self.input(Matrix::zeros((rows, cols)))
    }

    /// Leaf node for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(n) = self.param_nodes[id.0] {
            return n;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            needs_grad: true,
        });
        let n = NodeId(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(n);
        n
    }

    /// Select columns of `src`; `None` yields a zero column that carries no gradient.
    pub fn gather_cols(&mut self, src: NodeId, cols: &[Option<usize>]) -> NodeId {
        let v = self.value(src);
        let mut out = Matrix::zeros((v.nrows(), cols.len()));
        for (k, c) in cols.iter().enumerate() {
            if let Some(c) = *c {
                assert!(c < v.ncols(), "gather index {c} >= {}", v.ncols());
                out.column_mut(k).assign(&v.column(c));
            }
        }
        self.push(
            Op::Gather {
                src,
                cols: cols.to_vec(),
            },
            out,
            &[src],
        )
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = {
            let (av, bv) = (self.value(a), self.value(b));
            assert_eq!(av.ncols(), bv.nrows(), "matmul inner dimensions");
            av.dot(bv)
        };
        self.push(Op::MatMul(a, b), out, &[a, b])
    }

    pub fn matmul_tn(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = {
            let (av, bv) = (self.value(a), self.value(b));
            assert_eq!(av.nrows(), bv.nrows(), "matmul_tn inner dimensions");
            av.t().dot(bv)
        };
        self.push(Op::MatMulTn(a, b), out, &[a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = {
            let (av, bv) = (self.value(a), self.value(b));
            assert_eq!(av.dim(), bv.dim(), "add shapes");
            av + bv
        };
        self.push(Op::Add(a, b), out, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = {
            let (av, bv) = (self.value(a), self.value(b));
            assert_eq!(av.dim(), bv.dim(), "mul shapes");
            av * bv
        };
        self.push(Op::Mul(a, b), out, &[a, b])
    }

    /// `x + b` with the column vector `b` broadcast across columns.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        let out = {
            let (xv, bv) = (self.value(x), self.value(bias));
            assert_eq!(bv.dim(), (xv.nrows(), 1), "bias shape");
            xv + bv
        };
        self.push(Op::AddBias(x, bias), out, &[x, bias])
    }

    /// `w x + b`
    pub fn affine(&mut self, w: NodeId, x: NodeId, bias: NodeId) -> NodeId {
        let wx = self.matmul(w, x);
        self.add_bias(wx, bias)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).mapv(sigmoid);
        self.push(Op::Sigmoid(x), out, &[x])
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).mapv(f64::tanh);
        self.push(Op::Tanh(x), out, &[x])
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).mapv(|v| v.max(0.0));
        self.push(Op::Relu(x), out, &[x])
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        let out = {
            let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
            ndarray::concatenate(Axis(0), &views).expect("concat_rows column counts")
        };
        self.push(Op::ConcatRows(parts.to_vec()), out, parts)
    }

    pub fn slice_rows(&mut self, src: NodeId, start: usize, len: usize) -> NodeId {
        let out = self.value(src).slice(s![start..start + len, ..]).to_owned();
        self.push(Op::SliceRows { src, start }, out, &[src])
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let out = {
            let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
            ndarray::concatenate(Axis(1), &views).expect("concat_cols row counts")
        };
        self.push(Op::ConcatCols(parts.to_vec()), out, parts)
    }

    pub fn slice_cols(&mut self, src: NodeId, start: usize, len: usize) -> NodeId {
        let out = self.value(src).slice(s![.., start..start + len]).to_owned();
        self.push(Op::SliceCols { src, start }, out, &[src])
    }

    /// Per-column select: column `j` is `new[:, j]` where `mask[j] == 1`
    /// and `old[:, j]` where `mask[j] == 0`.
    pub fn blend(&mut self, new: NodeId, old: NodeId, mask: &[f64]) -> NodeId {
        let out = {
            let (nv, ov) = (self.value(new), self.value(old));
            assert_eq!(nv.dim(), ov.dim(), "blend shapes");
            assert_eq!(mask.len(), nv.ncols(), "blend mask length");
            let mut out = ov.clone();
            for (j, &m) in mask.iter().enumerate() {
                if m != 0.0 {
                    out.column_mut(j).assign(&nv.column(j));
                }
            }
            out
        };
        self.push(
            Op::Blend {
                new,
                old,
                mask: mask.to_vec(),
            },
            out,
            &[new, old],
        )
    }

    /// Elementwise product with a constant matrix (dropout masks).
    pub fn mul_const(&mut self, src: NodeId, factor: Matrix) -> NodeId {
        let out = {
            let v = self.value(src);
            assert_eq!(v.dim(), factor.dim(), "mul_const shapes");
            v * &factor
        };
        self.push(Op::MulConst { src, factor }, out, &[src])
    }

    /// Scale column `j` of `src` by `weights[0, j]`.
    pub fn scale_cols(&mut self, src: NodeId, weights: NodeId) -> NodeId {
        let out = {
            let (v, w) = (self.value(src), self.value(weights));
            assert_eq!(w.dim(), (1, v.ncols()), "scale_cols weight shape");
            v * w
        };
        self.push(Op::ScaleCols { src, weights }, out, &[src, weights])
    }

    pub fn sum(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "sum of nothing");
        let out = {
            let mut acc = self.value(parts[0]).clone();
            for p in &parts[1..] {
                acc += self.value(*p);
            }
            acc
        };
        self.push(Op::Sum(parts.to_vec()), out, parts)
    }

    pub fn scale(&mut self, src: NodeId, factor: f64) -> NodeId {
        let out = self.value(src) * factor;
        self.push(Op::Scale { src, factor }, out, &[src])
    }

    /// Softmax down each column over rows where `mask` is 1; masked
    /// entries get probability exactly 0. `mask` must match `src`'s shape.
    pub fn masked_softmax(&mut self, src: NodeId, mask: &Matrix) -> NodeId {
        let out = {
            let v = self.value(src);
            assert_eq!(v.dim(), mask.dim(), "masked_softmax mask shape");
            let mut out = Matrix::zeros(v.raw_dim());
            for j in 0..v.ncols() {
                let mut max = f64::NEG_INFINITY;
                for i in 0..v.nrows() {
                    if mask[[i, j]] != 0.0 {
                        max = max.max(v[[i, j]]);
                    }
                }
                if max == f64::NEG_INFINITY {
                    continue;
                }
                let mut z = 0.0;
                for i in 0..v.nrows() {
                    if mask[[i, j]] != 0.0 {
                        let e = (v[[i, j]] - max).exp();
                        out[[i, j]] = e;
                        z += e;
                    }
                }
                out.column_mut(j).mapv_inplace(|e| e / z);
            }
            out
        };
        self.push(Op::MaskedSoftmax(src), out, &[src])
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, src: NodeId, rows: usize, cols: usize) -> NodeId {
        let out = {
            let v = self.value(src);
            assert_eq!(v.len(), rows * cols, "reshape size");
            Matrix::from_shape_vec((rows, cols), v.iter().copied().collect()).unwrap()
        };
        self.push(Op::Reshape(src), out, &[src])
    }

    /// Sparse linear mixing of columns: `out[:, i] = sum w * src[:, j]` over
    /// entries `(i, j, w)`.
    pub fn sparse_mix(
        &mut self,
        src: NodeId,
        entries: Vec<(usize, usize, f64)>,
        out_cols: usize,
    ) -> NodeId {
        let out = {
            let v = self.value(src);
            let mut out = Matrix::zeros((v.nrows(), out_cols));
            for &(i, j, w) in &entries {
                out.column_mut(i).scaled_add(w, &v.column(j));
            }
            out
        };
        self.push(Op::SparseMix { src, entries }, out, &[src])
    }

    /// Elementwise max over groups of columns; one output column per group.
    /// Groups must be non-empty.
    pub fn segment_max(&mut self, src: NodeId, groups: &[Vec<usize>]) -> NodeId {
        let (out, argmax) = {
            let v = self.value(src);
            let rows = v.nrows();
            let mut out = Matrix::zeros((rows, groups.len()));
            let mut argmax = Array2::<usize>::zeros((rows, groups.len()));
            for (gi, group) in groups.iter().enumerate() {
                assert!(!group.is_empty(), "segment_max over empty group");
                for r in 0..rows {
                    let mut best = group[0];
                    for &c in &group[1..] {
                        if v[[r, c]] > v[[r, best]] {
                            best = c;
                        }
                    }
                    out[[r, gi]] = v[[r, best]];
                    argmax[[r, gi]] = best;
                }
            }
            (out, argmax)
        };
        self.push(Op::SegmentMax { src, argmax }, out, &[src])
    }

    /// Valid, stride-1 2-D cross-correlation of every input column.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        geom: ConvGeometry,
    ) -> NodeId {
        let out = {
            let x = self.value(input);
            let k = self.value(kernel);
            let b = self.value(bias);
            let ks = geom.kernel;
            assert_eq!(x.nrows(), geom.height * geom.width, "conv2d input size");
            assert_eq!(k.dim(), (geom.filters, ks * ks), "conv2d kernel shape");
            assert_eq!(b.dim(), (geom.filters, 1), "conv2d bias shape");
            assert!(ks <= geom.height && ks <= geom.width, "kernel larger than image");
            let batch = x.ncols();
            let (oh, ow) = (geom.out_height(), geom.out_width());
            let positions = oh * ow;
            let x = x.as_standard_layout();
            let src = x.as_slice().expect("standard layout");
            // Row `f * positions + pos` holds filter f at output position pos.
            let mut out = vec![0.0; geom.filters * positions * batch];
            for f in 0..geom.filters {
                for pos in 0..positions {
                    let (i, j) = (pos / ow, pos % ow);
                    let dst = &mut out[(f * positions + pos) * batch..][..batch];
                    dst.fill(b[[f, 0]]);
                    for u in 0..ks {
                        for v in 0..ks {
                            let w = k[[f, u * ks + v]];
                            let xi = (i + u) * geom.width + j + v;
                            for (d, &p) in dst.iter_mut().zip(&src[xi * batch..][..batch]) {
                                *d += w * p;
                            }
                        }
                    }
                }
            }
            Matrix::from_shape_vec((geom.filters * positions, batch), out).expect("conv output shape")
        };
        self.push(
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            },
            out,
            &[input, kernel, bias],
        )
    }

    /// `sum_j weights[j] * -log softmax(logits[:, j])[labels[j]]` as a 1x1 node.
    pub fn softmax_xent(&mut self, logits: NodeId, labels: &[usize], weights: &[f64]) -> NodeId {
        let (out, probs) = {
            let l = self.value(logits);
            assert_eq!(labels.len(), l.ncols(), "softmax_xent label count");
            assert_eq!(weights.len(), l.ncols(), "softmax_xent weight count");
            let probs = softmax_columns(l);
            let mut loss = 0.0;
            for (j, (&y, &w)) in labels.iter().zip(weights).enumerate() {
                assert!(y < l.nrows(), "label out of range");
                if w != 0.0 {
                    loss += w * -log_softmax_at(l, j, y);
                }
            }
            (Matrix::from_elem((1, 1), loss), probs)
        };
        self.push(
            Op::SoftmaxXent {
                logits,
                labels: labels.to_vec(),
                weights: weights.to_vec(),
                probs,
            },
            out,
            &[logits],
        )
    }

    /// `sum_j weights[j] * mean_p BCE(targets[p, j], sigmoid(logits[p, j]))`
    /// as a 1x1 node.
    pub fn bce_logits(&mut self, logits: NodeId, targets: &Matrix, weights: &[f64]) -> NodeId {
        let out = {
            let l = self.value(logits);
            assert_eq!(l.dim(), targets.dim(), "bce_logits target shape");
            assert_eq!(weights.len(), l.ncols(), "bce_logits weight count");
            let rows = l.nrows() as f64;
            let mut loss = 0.0;
            for (j, &w) in weights.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let mut col = 0.0;
                for p in 0..l.nrows() {
                    col += bce_with_logit(l[[p, j]], targets[[p, j]]);
                }
                loss += w * col / rows;
            }
            Matrix::from_elem((1, 1), loss)
        };
        self.push(
            Op::BceLogits {
                logits,
                targets: targets.clone(),
                weights: weights.to_vec(),
            },
            out,
            &[logits],
        )
    }

    /// Reverse pass from the scalar node `loss`.
    pub fn backward(&self, loss: NodeId) -> Gradients {
        assert_eq!(self.value(loss).dim(), (1, 1), "backward from non-scalar");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut by_param: Vec<Option<Matrix>> = vec![None; self.store.len()];
        grads[loss.0] = Some(Matrix::ones((1, 1)));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            match &node.op {
                Op::Input => {}
                Op::Param(p) => {
                    by_param[p.0] = Some(g);
                }
                Op::Gather { src, cols } => {
                    if self.wants(*src) {
                        let target = self.grad_slot(&mut grads, *src);
                        for (k, c) in cols.iter().enumerate() {
                            if let Some(c) = *c {
                                let mut dst = target.column_mut(c);
                                dst += &g.column(k);
                            }
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    if self.wants(*a) {
                        let ga = g.dot(&self.value(*b).t());
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.wants(*b) {
                        let gb = self.value(*a).t().dot(&g);
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::MatMulTn(a, b) => {
                    if self.wants(*a) {
                        let ga = self.value(*b).dot(&g.t());
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.wants(*b) {
                        let gb = self.value(*a).dot(&g);
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Add(a, b) => {
                    if self.wants(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.wants(*b) {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.wants(*a) {
                        accumulate(&mut grads, *a, &g * self.value(*b));
                    }
                    if self.wants(*b) {
                        accumulate(&mut grads, *b, &g * self.value(*a));
                    }
                }
                Op::AddBias(x, b) => {
                    if self.wants(*b) {
                        let gb = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                        accumulate(&mut grads, *b, gb);
                    }
                    if self.wants(*x) {
                        accumulate(&mut grads, *x, g);
                    }
                }
                Op::Sigmoid(x) => {
                    let y = node.value.as_ref().unwrap();
                    let mut gx = g;
                    ndarray::Zip::from(&mut gx).and(y).for_each(|g, &y| *g *= y * (1.0 - y));
                    accumulate(&mut grads, *x, gx);
                }
                Op::Tanh(x) => {
                    let y = node.value.as_ref().unwrap();
                    let mut gx = g;
                    ndarray::Zip::from(&mut gx).and(y).for_each(|g, &y| *g *= 1.0 - y * y);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let mut gx = g;
                    ndarray::Zip::from(&mut gx).and(xv).for_each(|g, &x| {
                        if x <= 0.0 {
                            *g = 0.0
                        }
                    });
                    accumulate(&mut grads, *x, gx);
                }
                Op::ConcatRows(parts) => {
                    let mut row = 0;
                    for p in parts {
                        let n = self.value(*p).nrows();
                        if self.wants(*p) {
                            accumulate(&mut grads, *p, g.slice(s![row..row + n, ..]).to_owned());
                        }
                        row += n;
                    }
                }
                Op::SliceRows { src, start } => {
                    if self.wants(*src) {
                        let n = g.nrows();
                        let target = self.grad_slot(&mut grads, *src);
                        let mut dst = target.slice_mut(s![*start..*start + n, ..]);
                        dst += &g;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut col = 0;
                    for p in parts {
                        let n = self.value(*p).ncols();
                        if self.wants(*p) {
                            accumulate(&mut grads, *p, g.slice(s![.., col..col + n]).to_owned());
                        }
                        col += n;
                    }
                }
                Op::SliceCols { src, start } => {
                    if self.wants(*src) {
                        let n = g.ncols();
                        let target = self.grad_slot(&mut grads, *src);
                        let mut dst = target.slice_mut(s![.., *start..*start + n]);
                        dst += &g;
                    }
                }
                Op::Blend { new, old, mask } => {
                    if self.wants(*new) {
                        let mut gn = g.clone();
                        for (j, &m) in mask.iter().enumerate() {
                            if m == 0.0 {
                                gn.column_mut(j).fill(0.0);
                            }
                        }
                        accumulate(&mut grads, *new, gn);
                    }
                    if self.wants(*old) {
                        let mut go = g;
                        for (j, &m) in mask.iter().enumerate() {
                            if m != 0.0 {
                                go.column_mut(j).fill(0.0);
                            }
                        }
                        accumulate(&mut grads, *old, go);
                    }
                }
                Op::MulConst { src, factor } => {
                    accumulate(&mut grads, *src, g * factor);
                }
                Op::ScaleCols { src, weights } => {
                    if self.wants(*weights) {
                        let gw = (&g * self.value(*src)).sum_axis(Axis(0)).insert_axis(Axis(0));
                        accumulate(&mut grads, *weights, gw);
                    }
                    if self.wants(*src) {
                        accumulate(&mut grads, *src, g * self.value(*weights));
                    }
                }
                Op::Sum(parts) => {
                    for p in parts {
                        if self.wants(*p) {
                            accumulate(&mut grads, *p, g.clone());
                        }
                    }
                }
                Op::Scale { src, factor } => {
                    accumulate(&mut grads, *src, g * *factor);
                }
                Op::MaskedSoftmax(src) => {
                    let y = node.value.as_ref().unwrap();
                    let mut gx = Matrix::zeros(y.raw_dim());
                    for j in 0..y.ncols() {
                        let dot: f64 = (0..y.nrows()).map(|i| g[[i, j]] * y[[i, j]]).sum();
                        for i in 0..y.nrows() {
                            gx[[i, j]] = y[[i, j]] * (g[[i, j]] - dot);
                        }
                    }
                    accumulate(&mut grads, *src, gx);
                }
                Op::Reshape(src) => {
                    let dim = self.value(*src).raw_dim();
                    let gx = Matrix::from_shape_vec(dim, g.iter().copied().collect()).unwrap();
                    accumulate(&mut grads, *src, gx);
                }
                Op::SparseMix { src, entries } => {
                    let target = self.grad_slot(&mut grads, *src);
                    for &(i, j, w) in entries {
                        target.column_mut(j).scaled_add(w, &g.column(i));
                    }
                }
                Op::SegmentMax { src, argmax } => {
                    let target = self.grad_slot(&mut grads, *src);
                    for ((r, gi), &c) in argmax.indexed_iter() {
                        target[[r, c]] += g[[r, gi]];
                    }
                }
                Op::Conv2d {
                    input,
                    kernel,
                    bias,
                    geom,
                } => {
                    self.conv2d_backward(&mut grads, &g, *input, *kernel, *bias, *geom);
                }
                Op::SoftmaxXent {
                    logits,
                    labels,
                    weights,
                    probs,
                } => {
                    let seed = g[[0, 0]];
                    let mut gl = probs.clone();
                    for (j, (&y, &w)) in labels.iter().zip(weights).enumerate() {
                        gl[[y, j]] -= 1.0;
                        gl.column_mut(j).mapv_inplace(|v| v * w * seed);
                    }
                    accumulate(&mut grads, *logits, gl);
                }
                Op::BceLogits {
                    logits,
                    targets,
                    weights,
                } => {
                    let seed = g[[0, 0]];
                    let l = self.value(*logits);
                    let rows = l.nrows() as f64;
                    let mut gl = Matrix::zeros(l.raw_dim());
                    for (j, &w) in weights.iter().enumerate() {
                        if w == 0.0 {
                            continue;
                        }
                        for p in 0..l.nrows() {
                            gl[[p, j]] = seed * w * (sigmoid(l[[p, j]]) - targets[[p, j]]) / rows;
                        }
                    }
                    accumulate(&mut grads, *logits, gl);
                }
            }
        }

        Gradients { by_param }
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn grad_slot<'g>(&self, grads: &'g mut [Option<Matrix>], id: NodeId) -> &'g mut Matrix {
        let dim = self.value(id).raw_dim();
        grads[id.0].get_or_insert_with(|| Matrix::zeros(dim))
    }

    #[allow(clippy::too_many_arguments)]
    fn conv2d_backward(
        &self,
        grads: &mut [Option<Matrix>],
        g: &Matrix,
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        geom: ConvGeometry,
    ) {
        let x = self.value(input);
        let k = self.value(kernel);
        let ks = geom.kernel;
        let batch = x.ncols();
        let (oh, ow) = (geom.out_height(), geom.out_width());
        let positions = oh * ow;
        let x = x.as_standard_layout();
        let src = x.as_slice().expect("standard layout");
        let g = g.as_standard_layout();
        let gs = g.as_slice().expect("standard layout");
        let mut gx = vec![0.0; src.len()];
        let mut gk = Matrix::zeros(k.raw_dim());
        let mut gb = Matrix::zeros((geom.filters, 1));
        for f in 0..geom.filters {
            for pos in 0..positions {
                let (i, j) = (pos / ow, pos % ow);
                let go = &gs[(f * positions + pos) * batch..][..batch];
                gb[[f, 0]] += go.iter().sum::<f64>();
                for u in 0..ks {
                    for v in 0..ks {
                        let w = k[[f, u * ks + v]];
                        let xi = (i + u) * geom.width + j + v;
                        let xs = &src[xi * batch..][..batch];
                        gk[[f, u * ks + v]] += go.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>();
                        for (d, &o) in gx[xi * batch..][..batch].iter_mut().zip(go) {
                            *d += w * o;
                        }
                    }
                }
            }
        }
        if self.wants(input) {
            let gx = Matrix::from_shape_vec(x.raw_dim(), gx).expect("input gradient shape");
            accumulate(grads, input, gx);
        }
        if self.wants(kernel) {
            accumulate(grads, kernel, gk);
        }
        if self.wants(bias) {
            accumulate(grads, bias, gb);
        }
    }
}

fn accumulate(grads: &mut [Option<Matrix>], id: NodeId, g: Matrix) {
    match &mut grads[id.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-[t log sigmoid(x) + (1 - t) log(1 - sigmoid(x))]`, stable for large |x|.
pub(crate) fn bce_with_logit(x: f64, t: f64) -> f64 {
    x.max(0.0) - x * t + (-x.abs()).exp().ln_1p()
}

pub(crate) fn log_softmax_at(logits: &Matrix, col: usize, row: usize) -> f64 {
    let c = logits.column(col);
    let max = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = c.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    c[row] - lse
}

/// Columnwise softmax of a plain matrix.
pub fn softmax_columns(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for mut col in out.columns_mut() {
        let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        col.mapv_inplace(|v| (v - max).exp());
        let z = col.sum();
        col.mapv_inplace(|v| v / z);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn fd_check(store: &mut ParamStore, build: impl Fn(&mut Graph) -> NodeId) {
        let grads = {
            let mut g = Graph::new(store);
            let loss = build(&mut g);
            g.backward(loss)
        };
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let shape = store.value(id).dim();
            for r in 0..shape.0 {
                for c in 0..shape.1 {
                    let orig = store.value(id)[[r, c]];
                    let h = 1e-5;
                    store.value_mut(id)[[r, c]] = orig + h;
                    let up = {
                        let mut g = Graph::new(store);
                        let l = build(&mut g);
                        g.scalar(l)
                    };
                    store.value_mut(id)[[r, c]] = orig - h;
                    let down = {
                        let mut g = Graph::new(store);
                        let l = build(&mut g);
                        g.scalar(l)
                    };
                    store.value_mut(id)[[r, c]] = orig;
                    let fd = (up - down) / (2.0 * h);
                    let an = grads.get(id).map(|m| m[[r, c]]).unwrap_or(0.0);
                    assert!(
                        (fd - an).abs() < 1e-6 * fd.abs().max(1.0),
                        "{} [{r},{c}]: analytic {an} vs fd {fd}",
                        store.get(id).name
                    );
                }
            }
        }
    }

    #[test]
    fn elementwise_chain_matches_finite_differences() {
        let mut store = ParamStore::new();
        let w = store.add("w", array![[0.3, -0.2], [0.1, 0.5], [-0.4, 0.2]]).unwrap();
        let b = store.add("b", array![[0.1], [-0.1], [0.05]]).unwrap();
        let x = array![[0.5, -1.0, 0.2], [1.5, 0.3, -0.7]];
        fd_check(&mut store, |g| {
            let w = g.param(w);
            let b = g.param(b);
            let xi = g.input(x.clone());
            let h = g.affine(w, xi, b);
            let t = g.tanh(h);
            let s = g.sigmoid(h);
            let m = g.mul(t, s);
            let top = g.slice_rows(m, 0, 2);
            let cat = g.concat_rows(&[top, m]);
            let sm = g.masked_softmax(
                cat,
                &array![[1., 1., 1.], [1., 0., 1.], [1., 1., 1.], [0., 1., 1.], [1., 1., 0.]],
            );
            let row = g.slice_rows(sm, 2, 1);
            let sc = g.scale_cols(m, row);
            g.softmax_xent(sc, &[0, 2, 1], &[1.0, 0.5, 2.0])
        });
    }

    #[test]
    fn structural_ops_match_finite_differences() {
        let mut store = ParamStore::new();
        let e = store
            .add("e", array![[0.3, -0.2, 0.7, 0.1], [0.1, 0.5, -0.3, 0.9]])
            .unwrap();
        let k = store.add("k", array![[0.2, -0.1, 0.3, 0.4], [0.5, 0.1, -0.2, 0.3]]).unwrap();
        let kb = store.add("kb", array![[0.01], [-0.02]]).unwrap();
        fd_check(&mut store, |g| {
            let e = g.param(e);
            let cols = g.gather_cols(e, &[Some(2), None, Some(0), Some(2), Some(1), Some(3)]);
            let left = g.slice_cols(cols, 0, 3);
            let right = g.slice_cols(cols, 3, 3);
            let bl = g.blend(left, right, &[1.0, 0.0, 1.0]);
            let both = g.concat_cols(&[bl, right]);
            let mix = g.sparse_mix(both, vec![(0, 0, 0.5), (0, 3, 0.5), (1, 1, 1.0), (2, 5, 0.7)], 3);
            let r = g.relu(mix);
            let mx = g.segment_max(both, &[vec![0, 2, 4], vec![1, 5]]);
            let s = g.scale(mx, 0.5);
            let flat = g.concat_rows(&[r, bl]);
            let img = g.slice_rows(flat, 0, 4);
            let kk = g.param(k);
            let kbias = g.param(kb);
            let conv = g.conv2d(
                img,
                kk,
                kbias,
                ConvGeometry {
                    height: 2,
                    width: 2,
                    kernel: 2,
                    filters: 2,
                },
            );
            let targets = array![[1.0, 0.0, 1.0], [0.0, 0.0, 1.0]];
            let l1 = g.bce_logits(conv, &targets, &[1.0, 0.3, 0.0]);
            let l2 = g.softmax_xent(s, &[1, 0], &[1.0, 1.0]);
            g.sum(&[l1, l2])
        });
    }

    #[test]
    fn matmul_tn_matches_finite_differences() {
        let mut store = ParamStore::new();
        let a = store.add("a", array![[0.3, -0.2], [0.1, 0.5], [0.2, 0.2]]).unwrap();
        let b = store.add("b", array![[0.7, 0.1], [-0.3, 0.4], [0.6, -0.5]]).unwrap();
        fd_check(&mut store, |g| {
            let a = g.param(a);
            let b = g.param(b);
            let p = g.matmul_tn(a, b);
            let d = g.mul_const(p, array![[1.0, 2.0], [0.0, 1.0]]);
            let d = g.reshape(d, 1, 4);
            let d = g.reshape(d, 2, 2);
            let s = g.add(d, p);
            g.softmax_xent(s, &[1, 0], &[1.0, 1.0])
        });
    }

    #[test]
    fn bce_is_stable_for_large_logits() {
        assert!(bce_with_logit(800.0, 1.0).abs() < 1e-12);
        assert!((bce_with_logit(-800.0, 1.0) - 800.0).abs() < 1e-9);
        assert!((bce_with_logit(0.0, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }
}
