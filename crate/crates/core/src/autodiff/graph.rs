use super::tensor::{axis_split, gemm_acc, Tensor};
use super::AutodiffError;

type Result<T> = std::result::Result<T, AutodiffError>;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    SliceRows { x: Var, start: usize },
    GatherRows { x: Var, rows: Vec<usize> },
    Pick { x: Var, cols: Vec<usize> },
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Softmax { x: Var, axis: usize },
    LogSoftmax(Var),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    Sum(Var),
    SumAxis { x: Var, axis: usize },
    Minimum(Var, Var),
    Maximum(Var, Var),
    Clamp { x: Var, lo: Tensor, hi: Tensor },
    StopGradient,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
///
/// Nodes are pushed in evaluation order, so the node list is already a
/// topological order and [`Graph::backward`] simply walks it in reverse.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that requires one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

fn broadcast_rows(a: &[usize], b: &[usize]) -> bool {
    a.len() == 2 && b.len() == 2 && b[0] == 1 && a[1] == b[1] && a[0] != 1
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        self.value(v).dims2().ok_or_else(|| AutodiffError::Rank {
            op,
            expected: 2,
            shape: self.value(v).shape().to_vec(),
        })
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(AutodiffError::Shape {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "transpose")?;
        let src = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::Transpose(a), rg))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        let (da, db) = (self.value(a).data(), self.value(b).data());
        if sa == sb {
            let out = da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(sa.to_vec(), out)
        } else if broadcast_rows(sa, sb) {
            let n = sa[1];
            let out = da
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, db[i % n]))
                .collect();
            Tensor::new(sa.to_vec(), out)
        } else {
            Err(AutodiffError::Shape {
                op: name,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            })
        }
    }

    /// Elementwise sum. `b` may be a `[1 × n]` row broadcast over `a`'s rows.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a).map(|x| x * c);
        let rg = self.rg(a);
        self.push(t, Op::Scale(a, c), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a).map(|x| x + c);
        let rg = self.rg(a);
        self.push(t, Op::AddScalar(a), rg)
    }

    /// Concatenates rank-2 tensors along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        if inputs.is_empty() || axis > 1 {
            return Err(AutodiffError::InvalidArgument("concat needs inputs and axis 0 or 1"));
        }
        let dims: Vec<(usize, usize)> = inputs
            .iter()
            .map(|&v| self.dims2(v, "concat"))
            .collect::<Result<_>>()?;
        let (r0, c0) = dims[0];
        let t = if axis == 0 {
            let mut data = Vec::new();
            let mut rows = 0;
            for (&v, &(r, c)) in inputs.iter().zip(&dims) {
                if c != c0 {
                    return Err(AutodiffError::Shape {
                        op: "concat",
                        lhs: vec![r0, c0],
                        rhs: vec![r, c],
                    });
                }
                data.extend_from_slice(self.value(v).data());
                rows += r;
            }
            Tensor::new(vec![rows, c0], data)?
        } else {
            let mut cols = 0;
            for &(r, c) in &dims {
                if r != r0 {
                    return Err(AutodiffError::Shape {
                        op: "concat",
                        lhs: vec![r0, c0],
                        rhs: vec![r, c],
                    });
                }
                cols += c;
            }
            let mut data = Vec::with_capacity(r0 * cols);
            for i in 0..r0 {
                for &v in inputs {
                    data.extend_from_slice(self.value(v).row_slice(i));
                }
            }
            Tensor::new(vec![r0, cols], data)?
        };
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            t,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Rows `start..start + len` of a rank-2 tensor.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims2(x, "slice_rows")?;
        if start + len > r {
            return Err(AutodiffError::Index {
                op: "slice_rows",
                index: start + len,
                bound: r,
            });
        }
        let data = self.value(x).data()[start * c..(start + len) * c].to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![len, c], data)?, Op::SliceRows { x, start }, rg))
    }

    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (r, c) = self.dims2(x, "gather_rows")?;
        let mut data = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            if i >= r {
                return Err(AutodiffError::Index {
                    op: "gather_rows",
                    index: i,
                    bound: r,
                });
            }
            data.extend_from_slice(self.value(x).row_slice(i));
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![rows.len(), c], data)?,
            Op::GatherRows {
                x,
                rows: rows.to_vec(),
            },
            rg,
        ))
    }

    /// Selects `x[i, cols[i]]` for every row, giving a `[rows × 1]` column.
    pub fn pick(&mut self, x: Var, cols: &[usize]) -> Result<Var> {
        let (r, c) = self.dims2(x, "pick")?;
        if cols.len() != r {
            return Err(AutodiffError::Shape {
                op: "pick",
                lhs: vec![r, c],
                rhs: vec![cols.len()],
            });
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(r);
        for (i, &j) in cols.iter().enumerate() {
            if j >= c {
                return Err(AutodiffError::Index {
                    op: "pick",
                    index: j,
                    bound: c,
                });
            }
            data.push(src[i * c + j]);
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![r, 1], data)?,
            Op::Pick {
                x,
                cols: cols.to_vec(),
            },
            rg,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v.max(0.0));
        let rg = self.rg(x);
        self.push(t, Op::Relu(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.value(x).map(f64::tanh);
        let rg = self.rg(x);
        self.push(t, Op::Tanh(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| {
            if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            }
        });
        let rg = self.rg(x);
        self.push(t, Op::Sigmoid(x), rg)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let t = self.value(x).map(f64::exp);
        let rg = self.rg(x);
        self.push(t, Op::Exp(x), rg)
    }

    pub fn log(&mut self, x: Var) -> Var {
        let t = self.value(x).map(f64::ln);
        let rg = self.rg(x);
        self.push(t, Op::Log(x), rg)
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.softmax_impl(x, axis, None)
    }

    /// Softmax along the last axis where entries with `mask == false` are
    /// excluded and come out exactly zero. Every slice needs at least one
    /// unmasked entry.
    pub fn masked_softmax(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let shape = self.value(x).shape();
        if mask.len() != self.value(x).len() {
            return Err(AutodiffError::Shape {
                op: "masked_softmax",
                lhs: shape.to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let axis = shape.len() - 1;
        self.softmax_impl(x, axis, Some(mask))
    }

    fn softmax_impl(&mut self, x: Var, axis: usize, mask: Option<&[bool]>) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(AutodiffError::InvalidArgument("softmax axis out of range or empty"));
        }
        let (outer, n, inner) = axis_split(&shape, axis);
        let src = self.value(x).data();
        let keep = |idx: usize| mask.is_none_or(|m| m[idx]);
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * n + j) * inner + i;
                let mut max = f64::NEG_INFINITY;
                for j in 0..n {
                    if keep(at(j)) {
                        max = max.max(src[at(j)]);
                    }
                }
                if max == f64::NEG_INFINITY {
                    return Err(AutodiffError::InvalidArgument(
                        "softmax slice has no unmasked entry",
                    ));
                }
                let mut total = 0.0;
                for j in 0..n {
                    if keep(at(j)) {
                        let e = (src[at(j)] - max).exp();
                        out[at(j)] = e;
                        total += e;
                    }
                }
                for j in 0..n {
                    out[at(j)] /= total;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax { x, axis }, rg))
    }

    /// Log-softmax along the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let n = *t.shape().last().unwrap_or(&1);
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(n.max(1)) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let t = Tensor::new(t.shape().to_vec(), out).expect("same shape");
        let rg = self.rg(x);
        self.push(t, Op::LogSoftmax(x), rg)
    }

    /// Normalizes each slice along the last axis to zero mean and unit
    /// variance (no affine part).
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Var {
        let t = self.value(x);
        let n = *t.shape().last().unwrap_or(&1);
        let mut out = t.data().to_vec();
        let mut inv_std = Vec::with_capacity(out.len() / n.max(1));
        for row in out.chunks_mut(n.max(1)) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let r = 1.0 / (var + eps).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * r);
            inv_std.push(r);
        }
        let t = Tensor::new(t.shape().to_vec(), out).expect("same shape");
        let rg = self.rg(x);
        self.push(t, Op::LayerNorm { x, inv_std }, rg)
    }

    /// Sum of all entries as a `[1 × 1]` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1);
        let s = self.sum(x);
        self.scale(s, 1.0 / n as f64)
    }

    /// Sum along `axis`, keeping the axis with size 1.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        if axis >= shape.len() {
            return Err(AutodiffError::InvalidArgument("sum_axis axis out of range"));
        }
        let (outer, n, inner) = axis_split(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                for i in 0..inner {
                    out[o * inner + i] += src[(o * n + j) * inner + i];
                }
            }
        }
        let mut oshape = shape;
        oshape[axis] = 1;
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(oshape, out)?, Op::SumAxis { x, axis }, rg))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let n = *self
            .value(x)
            .shape()
            .get(axis)
            .ok_or(AutodiffError::InvalidArgument("mean_axis axis out of range"))?;
        let s = self.sum_axis(x, axis)?;
        Ok(self.scale(s, 1.0 / n.max(1) as f64))
    }

    /// Elementwise minimum; the gradient goes to the smaller operand
    /// (to `a` on ties).
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "minimum")?;
        let t = self.binary(a, b, "minimum", f64::min)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Minimum(a, b), rg))
    }

    /// Elementwise maximum; the gradient goes to the larger operand
    /// (to `a` on ties).
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "maximum")?;
        let t = self.binary(a, b, "maximum", f64::max)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Maximum(a, b), rg))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(AutodiffError::Shape {
                op,
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Clamps every entry to `[lo, hi]`.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let shape = self.value(x).shape().to_vec();
        self.clamp_between(x, Tensor::filled(&shape, lo), Tensor::filled(&shape, hi))
            .expect("bounds built with matching shape")
    }

    /// Clamps entrywise to constant bounds of the same shape. The gradient
    /// passes only where the entry lies strictly inside its bounds.
    pub fn clamp_between(&mut self, x: Var, lo: Tensor, hi: Tensor) -> Result<Var> {
        let t = self.value(x);
        if t.shape() != lo.shape() || t.shape() != hi.shape() {
            return Err(AutodiffError::Shape {
                op: "clamp",
                lhs: t.shape().to_vec(),
                rhs: lo.shape().to_vec(),
            });
        }
        let out = t
            .data()
            .iter()
            .zip(lo.data().iter().zip(hi.data()))
            .map(|(&v, (&l, &h))| v.max(l).min(h))
            .collect();
        let t = Tensor::new(t.shape().to_vec(), out)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Clamp { x, lo, hi }, rg))
    }

    /// Identity in the forward pass; blocks gradient flow.
    pub fn stop_gradient(&mut self, x: Var) -> Var {
        let t = self.value(x).clone();
        self.push(t, Op::StopGradient, false)
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(AutodiffError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            self.propagate(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.map(|d| Tensor::new(self.nodes[i].value.shape().to_vec(), d).expect("grad shape"))
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf | Op::StopGradient => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2().unwrap();
                let n = self.value(*b).dims2().unwrap().1;
                if self.rg(*a) {
                    let mut ga = vec![0.0; m * k];
                    gemm_acc(m, n, k, g, false, self.value(*b).data(), true, &mut ga);
                    acc(grads, *a, &ga);
                }
                if self.rg(*b) {
                    let mut gb = vec![0.0; k * n];
                    gemm_acc(k, m, n, self.value(*a).data(), true, g, false, &mut gb);
                    acc(grads, *b, &gb);
                }
            }
            Op::Transpose(a) => {
                if self.rg(*a) {
                    let (m, n) = self.value(*a).dims2().unwrap();
                    let mut ga = vec![0.0; m * n];
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] = g[j * m + i];
                        }
                    }
                    acc(grads, *a, &ga);
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if self.rg(*a) {
                    acc(grads, *a, g);
                }
                if self.rg(*b) {
                    let gb = reduce_to(g, out.shape(), self.value(*b).shape(), |v, _| v * sign);
                    acc(grads, *b, &gb);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let bc = va.shape() != vb.shape();
                if self.rg(*a) {
                    let n = vb.len();
                    let ga: Vec<f64> = g
                        .iter()
                        .enumerate()
                        .map(|(i, &gi)| gi * vb.data()[if bc { i % n } else { i }])
                        .collect();
                    acc(grads, *a, &ga);
                }
                if self.rg(*b) {
                    let gb = reduce_to(g, out.shape(), vb.shape(), |v, i| v * va.data()[i]);
                    acc(grads, *b, &gb);
                }
            }
            Op::Scale(a, c) => {
                let ga: Vec<f64> = g.iter().map(|v| v * c).collect();
                acc(grads, *a, &ga);
            }
            Op::AddScalar(a) => acc(grads, *a, g),
            Op::Concat { inputs, axis } => {
                let (rows, cols) = out.dims2().unwrap();
                let mut offset = 0;
                for &v in inputs {
                    let (r, c) = self.value(v).dims2().unwrap();
                    if self.rg(v) {
                        let gv: Vec<f64> = if *axis == 0 {
                            g[offset * cols..(offset + r) * cols].to_vec()
                        } else {
                            (0..rows)
                                .flat_map(|i| g[i * cols + offset..i * cols + offset + c].iter().copied())
                                .collect()
                        };
                        acc(grads, v, &gv);
                    }
                    offset += if *axis == 0 { r } else { c };
                }
            }
            Op::SliceRows { x, start } => {
                let (r, c) = self.value(*x).dims2().unwrap();
                let mut gx = vec![0.0; r * c];
                gx[start * c..start * c + g.len()].copy_from_slice(g);
                acc(grads, *x, &gx);
            }
            Op::GatherRows { x, rows } => {
                let (r, c) = self.value(*x).dims2().unwrap();
                let mut gx = vec![0.0; r * c];
                for (k, &i) in rows.iter().enumerate() {
                    for j in 0..c {
                        gx[i * c + j] += g[k * c + j];
                    }
                }
                acc(grads, *x, &gx);
            }
            Op::Pick { x, cols } => {
                let (r, c) = self.value(*x).dims2().unwrap();
                let mut gx = vec![0.0; r * c];
                for (i, &j) in cols.iter().enumerate() {
                    gx[i * c + j] = g[i];
                }
                acc(grads, *x, &gx);
            }
            Op::Relu(x) => {
                let vx = self.value(*x).data();
                let gx: Vec<f64> = g
                    .iter()
                    .zip(vx)
                    .map(|(&gi, &v)| if v > 0.0 { gi } else { 0.0 })
                    .collect();
                acc(grads, *x, &gx);
            }
            Op::Tanh(x) => {
                let gx: Vec<f64> = g.iter().zip(out.data()).map(|(&gi, &y)| gi * (1.0 - y * y)).collect();
                acc(grads, *x, &gx);
            }
            Op::Sigmoid(x) => {
                let gx: Vec<f64> = g.iter().zip(out.data()).map(|(&gi, &y)| gi * y * (1.0 - y)).collect();
                acc(grads, *x, &gx);
            }
            Op::Exp(x) => {
                let gx: Vec<f64> = g.iter().zip(out.data()).map(|(&gi, &y)| gi * y).collect();
                acc(grads, *x, &gx);
            }
            Op::Log(x) => {
                let vx = self.value(*x).data();
                let gx: Vec<f64> = g.iter().zip(vx).map(|(&gi, &v)| gi / v).collect();
                acc(grads, *x, &gx);
            }
            Op::Softmax { x, axis } => {
                let (outer, n, inner) = axis_split(out.shape(), *axis);
                let y = out.data();
                let mut gx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * n + j) * inner + i;
                        let dot: f64 = (0..n).map(|j| g[at(j)] * y[at(j)]).sum();
                        for j in 0..n {
                            gx[at(j)] = y[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
                acc(grads, *x, &gx);
            }
            Op::LogSoftmax(x) => {
                let n = *out.shape().last().unwrap();
                let mut gx = vec![0.0; g.len()];
                for ((gr, yr), xr) in g.chunks(n).zip(out.data().chunks(n)).zip(gx.chunks_mut(n)) {
                    let total: f64 = gr.iter().sum();
                    for j in 0..n {
                        xr[j] = gr[j] - yr[j].exp() * total;
                    }
                }
                acc(grads, *x, &gx);
            }
            Op::LayerNorm { x, inv_std } => {
                let n = *out.shape().last().unwrap();
                let mut gx = vec![0.0; g.len()];
                for (row, ((gr, yr), xr)) in
                    g.chunks(n).zip(out.data().chunks(n)).zip(gx.chunks_mut(n)).enumerate()
                {
                    let mg = gr.iter().sum::<f64>() / n as f64;
                    let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                    for j in 0..n {
                        xr[j] = inv_std[row] * (gr[j] - mg - yr[j] * mgy);
                    }
                }
                acc(grads, *x, &gx);
            }
            Op::Sum(x) => {
                let gx = vec![g[0]; self.value(*x).len()];
                acc(grads, *x, &gx);
            }
            Op::SumAxis { x, axis } => {
                let shape = self.value(*x).shape();
                let (outer, n, inner) = axis_split(shape, *axis);
                let mut gx = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    for j in 0..n {
                        for i in 0..inner {
                            gx[(o * n + j) * inner + i] = g[o * inner + i];
                        }
                    }
                }
                acc(grads, *x, &gx);
            }
            Op::Minimum(a, b) | Op::Maximum(a, b) => {
                let is_min = matches!(node.op, Op::Minimum(..));
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let pick_a: Vec<bool> = va
                    .iter()
                    .zip(vb)
                    .map(|(&x, &y)| if is_min { x <= y } else { x >= y })
                    .collect();
                if self.rg(*a) {
                    let ga: Vec<f64> = g.iter().zip(&pick_a).map(|(&gi, &p)| if p { gi } else { 0.0 }).collect();
                    acc(grads, *a, &ga);
                }
                if self.rg(*b) {
                    let gb: Vec<f64> = g.iter().zip(&pick_a).map(|(&gi, &p)| if p { 0.0 } else { gi }).collect();
                    acc(grads, *b, &gb);
                }
            }
            Op::Clamp { x, lo, hi } => {
                let vx = self.value(*x).data();
                let gx: Vec<f64> = g
                    .iter()
                    .enumerate()
                    .map(|(i, &gi)| {
                        if vx[i] > lo.data()[i] && vx[i] < hi.data()[i] {
                            gi
                        } else {
                            0.0
                        }
                    })
                    .collect();
                acc(grads, *x, &gx);
            }
        }
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    match &mut grads[v.0] {
        Some(existing) => existing.iter_mut().zip(g).for_each(|(e, x)| *e += x),
        slot @ None => *slot = Some(g.to_vec()),
    }
}

/// Maps an output gradient back onto an operand that was either the same
/// shape or row-broadcast, applying `f(g_i, i)` per output element.
fn reduce_to(g: &[f64], out: &[usize], target: &[usize], f: impl Fn(f64, usize) -> f64) -> Vec<f64> {
    if out == target {
        return g.iter().enumerate().map(|(i, &v)| f(v, i)).collect();
    }
    let n = target.iter().product::<usize>();
    let mut r = vec![0.0; n];
    for (i, &v) in g.iter().enumerate() {
        r[i % n] += f(v, i);
    }
    r
}
