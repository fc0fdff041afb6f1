use super::lstm::{lstm_backward, lstm_sequence, LstmCache};
use super::Tensor;
use crate::error::{Error, Result};
use crate::linalg::{gemm, Matrix, Strided};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    ConcatRows(Vec<Var>),
    Transpose(Var),
    RowSoftmax(Var),
    RowL2Normalize {
        input: Var,
        denoms: Vec<f64>,
        clamped: Vec<bool>,
    },
    FrobeniusSq(Var),
    Sum(Var),
    SliceRows {
        input: Var,
        start: usize,
    },
    SliceCols {
        input: Var,
        start: usize,
    },
    Lstm {
        x: Var,
        w: Var,
        b: Var,
        cache: Box<LstmCache>,
    },
}

struct Node {
    value: Matrix,
    tracked: bool,
    op: Op,
    /// Accumulated gradient, kept for leaves only.
    grad: Option<Vec<f64>>,
}

/// Define-by-run operation record.
///
/// Nodes are appended in evaluation order, so the node list is always a
/// topological order of the computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of recorded (differentiable) operations, excluding leaves and
    /// untracked results.
    pub fn recorded_ops(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| !matches!(n.op, Op::Leaf | Op::Constant))
            .count()
    }

    fn push(&mut self, value: Matrix, tracked: bool, op: Op) -> Var {
        let op = if tracked { op } else { Op::Constant };
        self.nodes.push(Node {
            value,
            tracked,
            op,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Places a tensor on the tape; it is tracked iff `requires_grad` is set.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let tracked = t.requires_grad();
        self.nodes.push(Node {
            value: t.value().clone(),
            tracked,
            op: if tracked { Op::Leaf } else { Op::Constant },
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// A tracked leaf holding `m`.
    pub fn variable(&mut self, m: Matrix) -> Var {
        self.nodes.push(Node {
            value: m,
            tracked: true,
            op: Op::Leaf,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, false, Op::Constant)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Accumulated gradient of a leaf (`None` before any backward pass
    /// reached it).
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    fn same_shape(&self, primitive: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::dim(primitive, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let src = &self.nodes[a.0].value;
        let data = src.data().iter().map(|&x| f(x)).collect();
        let m = Matrix::new(src.rows(), src.cols(), data).expect("shape preserved");
        let tracked = self.is_tracked(a);
        self.push(m, tracked, op)
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let m = Matrix::new(va.rows(), va.cols(), data).expect("shape preserved");
        let tracked = self.is_tracked(a) || self.is_tracked(b);
        self.push(m, tracked, op)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b)).map_err(|_| {
            Error::dim(
                "matmul",
                format!("{:?} . {:?}", self.shape(a), self.shape(b)),
            )
        })?;
        let tracked = self.is_tracked(a) || self.is_tracked(b);
        Ok(self.push(out, tracked, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    /// Adds a `1 x cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let [r, c] = self.shape(a);
        if self.shape(row) != [1, c] {
            return Err(Error::dim(
                "add_row",
                format!("{:?} + row {:?}", [r, c], self.shape(row)),
            ));
        }
        let bias = self.value(row).data();
        let mut out = self.value(a).clone();
        for i in 0..r {
            for (o, b) in out.row_mut(i).iter_mut().zip(bias) {
                *o += b;
            }
        }
        let tracked = self.is_tracked(a) || self.is_tracked(row);
        Ok(self.push(out, tracked, Op::AddRow(a, row)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.map(a, |x| s * x, Op::Scale(a, s))
    }

    /// Adds a constant to every element.
    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |x| x + c, Op::Offset(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, f64::exp, Op::Exp(a))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::dim("concat_rows", "no inputs"));
        };
        let cols = self.shape(first)[1];
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(Error::dim(
                    "concat_rows",
                    format!("column count {} vs {}", v.cols(), cols),
                ));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let tracked = parts.iter().any(|&p| self.is_tracked(p));
        let m = Matrix::new(rows, cols, data)?;
        Ok(self.push(m, tracked, Op::ConcatRows(parts.to_vec())))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let m = self.value(a).transpose();
        let tracked = self.is_tracked(a);
        self.push(m, tracked, Op::Transpose(a))
    }

    /// Numerically stable softmax over each row.
    pub fn row_softmax(&mut self, a: Var) -> Var {
        let mut m = self.value(a).clone();
        for r in 0..m.rows() {
            softmax_in_place(m.row_mut(r));
        }
        let tracked = self.is_tracked(a);
        self.push(m, tracked, Op::RowSoftmax(a))
    }

    /// Divides each row by `max(||row||, eps)`.
    pub fn row_l2_normalize(&mut self, a: Var, eps: f64) -> Var {
        let mut m = self.value(a).clone();
        let mut denoms = Vec::with_capacity(m.rows());
        let mut clamped = Vec::with_capacity(m.rows());
        for r in 0..m.rows() {
            let row = m.row_mut(r);
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            let d = norm.max(eps);
            for x in row.iter_mut() {
                *x /= d;
            }
            denoms.push(d);
            clamped.push(norm <= eps);
        }
        let tracked = self.is_tracked(a);
        self.push(
            m,
            tracked,
            Op::RowL2Normalize {
                input: a,
                denoms,
                clamped,
            },
        )
    }

    /// Sum of squared entries, as a 1x1 value.
    pub fn frobenius_sq(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().map(|x| x * x).sum();
        let tracked = self.is_tracked(a);
        self.push(
            Matrix::new(1, 1, vec![s]).expect("1x1"),
            tracked,
            Op::FrobeniusSq(a),
        )
    }

    /// Sum of all entries, as a 1x1 value.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let tracked = self.is_tracked(a);
        self.push(Matrix::new(1, 1, vec![s]).expect("1x1"), tracked, Op::Sum(a))
    }

    pub fn slice_row(&mut self, a: Var, r: usize) -> Result<Var> {
        self.slice_rows(a, r, r + 1)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let rows = self.shape(a)[0];
        if start >= end || end > rows {
            return Err(Error::dim(
                "slice_rows",
                format!("range {start}..{end} of {rows} rows"),
            ));
        }
        let m = self.value(a).slice_rows(start, end);
        let tracked = self.is_tracked(a);
        Ok(self.push(m, tracked, Op::SliceRows { input: a, start }))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let [rows, cols] = self.shape(a);
        if start >= end || end > cols {
            return Err(Error::dim(
                "slice_cols",
                format!("range {start}..{end} of {cols} columns"),
            ));
        }
        let src = self.value(a);
        let m = Matrix::from_fn(rows, end - start, |r, c| src.get(r, start + c));
        let tracked = self.is_tracked(a);
        Ok(self.push(m, tracked, Op::SliceCols { input: a, start }))
    }

    /// Fused LSTM over a whole sequence.
    ///
    /// `x` is `N x D`, `w` is `4H x (D + H)` with gate blocks ordered
    /// input, forget, output, candidate, and `b` is `1 x 4H`. Returns all
    /// hidden states as an `N x H` matrix. With `tbptt = Some(k)`, gradients
    /// do not flow through the recurrent state across multiples of `k`.
    pub fn lstm(&mut self, x: Var, w: Var, b: Var, tbptt: Option<usize>) -> Result<Var> {
        let tracked = self.is_tracked(x) || self.is_tracked(w) || self.is_tracked(b);
        let (h, cache) = lstm_sequence(self.value(x), self.value(w), self.value(b), tbptt)?;
        if !tracked {
            return Ok(self.push(h, false, Op::Constant));
        }
        Ok(self.push(
            h,
            true,
            Op::Lstm {
                x,
                w,
                b,
                cache: Box::new(cache),
            },
        ))
    }

    /// Backpropagates from a scalar output, accumulating into leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss) != [1, 1] {
            return Err(Error::dim(
                "backward",
                format!("loss must be scalar, got {:?}", self.shape(loss)),
            ));
        }
        self.backward_from(loss, &[1.0])
    }

    /// Backpropagates an explicit upstream gradient `seed` for `out`.
    pub fn backward_from(&mut self, out: Var, seed: &[f64]) -> Result<()> {
        if seed.len() != self.value(out).data().len() {
            return Err(Error::dim(
                "backward",
                format!("seed of length {} for shape {:?}", seed.len(), self.shape(out)),
            ));
        }
        if !self.is_tracked(out) {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; out.0 + 1];
        grads[out.0] = Some(seed.to_vec());
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        for (i, g) in grads.into_iter().enumerate() {
            if let Some(g) = g {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, v)| *a += v),
                    None => node.grad = Some(g),
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                if let Some(ga) = self.slot(*a, grads) {
                    // dA += dC B^T
                    gemm(
                        m,
                        n,
                        k,
                        1.0,
                        Strided::row_major(g, n),
                        Strided::transposed(vb.data(), n),
                        1.0,
                        ga,
                        k,
                    );
                }
                if let Some(gb) = self.slot(*b, grads) {
                    // dB += A^T dC
                    gemm(
                        k,
                        m,
                        n,
                        1.0,
                        Strided::transposed(va.data(), k),
                        Strided::row_major(g, n),
                        1.0,
                        gb,
                        n,
                    );
                }
            }
            Op::Add(a, b) => {
                self.acc(*a, grads, |s| add_into(s, g, 1.0));
                self.acc(*b, grads, |s| add_into(s, g, 1.0));
            }
            Op::AddRow(a, row) => {
                self.acc(*a, grads, |s| add_into(s, g, 1.0));
                let cols = node.value.cols();
                self.acc(*row, grads, |s| {
                    for chunk in g.chunks(cols) {
                        add_into(s, chunk, 1.0);
                    }
                });
            }
            Op::Sub(a, b) => {
                self.acc(*a, grads, |s| add_into(s, g, 1.0));
                self.acc(*b, grads, |s| add_into(s, g, -1.0));
            }
            Op::Mul(a, b) => {
                let vb = self.value(*b).data();
                self.acc(*a, grads, |s| {
                    for ((s, g), v) in s.iter_mut().zip(g).zip(vb) {
                        *s += g * v;
                    }
                });
                let va = self.value(*a).data();
                self.acc(*b, grads, |s| {
                    for ((s, g), v) in s.iter_mut().zip(g).zip(va) {
                        *s += g * v;
                    }
                });
            }
            Op::Scale(a, c) => self.acc(*a, grads, |s| add_into(s, g, *c)),
            Op::Offset(a) => self.acc(*a, grads, |s| add_into(s, g, 1.0)),
            Op::Tanh(a) => self.acc(*a, grads, |s| {
                for ((s, g), y) in s.iter_mut().zip(g).zip(y) {
                    *s += g * (1.0 - y * y);
                }
            }),
            Op::Sigmoid(a) => self.acc(*a, grads, |s| {
                for ((s, g), y) in s.iter_mut().zip(g).zip(y) {
                    *s += g * y * (1.0 - y);
                }
            }),
            Op::Exp(a) => self.acc(*a, grads, |s| {
                for ((s, g), y) in s.iter_mut().zip(g).zip(y) {
                    *s += g * y;
                }
            }),
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).data().len();
                    self.acc(*p, grads, |s| add_into(s, &g[offset..offset + len], 1.0));
                    offset += len;
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (node.value.rows(), node.value.cols());
                self.acc(*a, grads, |s| {
                    // input is c x r
                    for i in 0..r {
                        for j in 0..c {
                            s[j * r + i] += g[i * c + j];
                        }
                    }
                });
            }
            Op::RowSoftmax(a) => {
                let cols = node.value.cols();
                self.acc(*a, grads, |s| {
                    for ((s, g), y) in s
                        .chunks_mut(cols)
                        .zip(g.chunks(cols))
                        .zip(y.chunks(cols))
                    {
                        let gy: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                        for ((s, g), y) in s.iter_mut().zip(g).zip(y) {
                            *s += y * (g - gy);
                        }
                    }
                });
            }
            Op::RowL2Normalize {
                input,
                denoms,
                clamped,
            } => {
                let cols = node.value.cols();
                self.acc(*input, grads, |s| {
                    for (r, ((s, g), y)) in s
                        .chunks_mut(cols)
                        .zip(g.chunks(cols))
                        .zip(y.chunks(cols))
                        .enumerate()
                    {
                        let d = denoms[r];
                        if clamped[r] {
                            add_into(s, g, 1.0 / d);
                        } else {
                            let gy: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                            for ((s, g), y) in s.iter_mut().zip(g).zip(y) {
                                *s += (g - y * gy) / d;
                            }
                        }
                    }
                });
            }
            Op::FrobeniusSq(a) => {
                let x = self.value(*a).data();
                self.acc(*a, grads, |s| add_into(s, x, 2.0 * g[0]));
            }
            Op::Sum(a) => self.acc(*a, grads, |s| s.iter_mut().for_each(|v| *v += g[0])),
            Op::SliceRows { input, start } => {
                let cols = node.value.cols();
                self.acc(*input, grads, |s| {
                    add_into(&mut s[start * cols..start * cols + g.len()], g, 1.0)
                });
            }
            Op::SliceCols { input, start } => {
                let (rows, cols) = (node.value.rows(), node.value.cols());
                let src_cols = self.value(*input).cols();
                self.acc(*input, grads, |s| {
                    for r in 0..rows {
                        let dst = &mut s[r * src_cols + start..r * src_cols + start + cols];
                        add_into(dst, &g[r * cols..(r + 1) * cols], 1.0);
                    }
                });
            }
            Op::Lstm { x, w, b, cache } => {
                let want_x = self.is_tracked(*x);
                let grads_lstm = lstm_backward(
                    cache,
                    self.value(*x),
                    self.value(*w),
                    &node.value,
                    g,
                    want_x,
                );
                if let Some(dx) = grads_lstm.dx {
                    self.acc(*x, grads, |s| add_into(s, &dx, 1.0));
                }
                self.acc(*w, grads, |s| add_into(s, &grads_lstm.dw, 1.0));
                self.acc(*b, grads, |s| add_into(s, &grads_lstm.db, 1.0));
            }
        }
    }

    /// Mutable gradient slot for `v`, allocated on demand; `None` when `v`
    /// is not tracked.
    fn slot<'g>(&self, v: Var, grads: &'g mut [Option<Vec<f64>>]) -> Option<&'g mut [f64]> {
        if !self.is_tracked(v) {
            return None;
        }
        let len = self.value(v).data().len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]).as_mut_slice())
    }

    fn acc(&self, v: Var, grads: &mut [Option<Vec<f64>>], f: impl FnOnce(&mut [f64])) {
        if let Some(s) = self.slot(v, grads) {
            f(s);
        }
    }
}

#[inline]
fn add_into(dst: &mut [f64], src: &[f64], scale: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}
