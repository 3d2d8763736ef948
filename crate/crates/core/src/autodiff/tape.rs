use std::cell::RefCell;
use std::sync::Arc;

use nalgebra::DMatrixView;

use super::{AutodiffError, Gradients, Matrix, ParamId, ParamStore, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Constant sparse matrix stored as `(row, col, value)` triples.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<(usize, usize, f64)>) -> Self {
        for &(r, c, _) in &entries {
            assert!(r < rows && c < cols, "sparse entry out of bounds");
        }
        Self {
            rows,
            cols,
            entries,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn mul(&self, x: &Matrix) -> Matrix {
        assert_eq!(x.rows(), self.cols);
        let b = x.cols();
        let mut out = Matrix::zeros(self.rows, b);
        let xd = x.data();
        let od = out.data_mut();
        for &(r, c, v) in &self.entries {
            for j in 0..b {
                od[r * b + j] += v * xd[c * b + j];
            }
        }
        out
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.rows, self.cols);
        for &(r, c, v) in &self.entries {
            m.set(r, c, m.get(r, c) + v);
        }
        m
    }
}

/// Shape bookkeeping for a batched 2-D cross-correlation.
///
/// Inputs are `(in_channels·height·width) × batch`, channel-major per column;
/// kernels are `out_channels × (in_channels·kernel·kernel)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub padding: usize,
    pub stride: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn input_len(&self) -> usize {
        self.in_channels * self.height * self.width
    }

    pub fn output_len(&self) -> usize {
        self.out_channels * self.out_height() * self.out_width()
    }

    pub fn kernel_cols(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn is_valid(&self) -> bool {
        self.kernel >= 1
            && self.stride >= 1
            && self.height + 2 * self.padding >= self.kernel
            && self.width + 2 * self.padding >= self.kernel
    }

    /// Whether the sampled output centers form a grid symmetric about the
    /// input center, which is what makes the convolution commute with grid
    /// rotations and flips.
    pub fn is_symmetric(&self) -> bool {
        let axis = |len: usize, out: usize| {
            let first = self.kernel as isize / 2 - self.padding as isize;
            let last = first + ((out - 1) * self.stride) as isize;
            self.kernel % 2 == 1 && first + last == len as isize - 1
        };
        self.is_valid()
            && axis(self.height, self.out_height())
            && axis(self.width, self.out_width())
    }

    /// Input index feeding output position `(oy, ox)` at kernel offset
    /// `(ky, kx)` of channel `ch`, or `None` when it falls in the padding.
    fn input_index(&self, ch: usize, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<usize> {
        let y = (oy * self.stride + ky) as isize - self.padding as isize;
        let x = (ox * self.stride + kx) as isize - self.padding as isize;
        if y < 0 || x < 0 || y >= self.height as isize || x >= self.width as isize {
            return None;
        }
        Some((ch * self.height + y as usize) * self.width + x as usize)
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Hadamard(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    LogSoftmax(Var),
    Gather(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    SparseLinear(Arc<SparseMatrix>, Var),
    Conv2d(Var, Var, ConvGeometry),
}

struct Node {
    value: Matrix,
    op: Op,
}

/// Define-by-run computation record. Single-threaded by construction.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<Vec<(Var, ParamId)>>,
}

fn shape_err(op: &'static str, a: &Matrix, b: &Matrix) -> AutodiffError {
    AutodiffError::Shape {
        op,
        lhs: a.shape(),
        rhs: b.shape(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Matrix, op: Op) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var(nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> Matrix {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes.borrow()[v.0].value.shape()
    }

    pub fn constant(&self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var {
        let v = self.push(store.matrix(id), Op::Leaf);
        self.params.borrow_mut().push((v, id));
        v
    }

    fn unary(&self, a: Var, f: impl Fn(&Matrix) -> Matrix, op: Op) -> Var {
        let value = f(&self.nodes.borrow()[a.0].value);
        self.push(value, op)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
            if x.cols() != y.rows() {
                return Err(shape_err("matmul", x, y));
            }
            x.matmul(y)
        };
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    fn elementwise(
        &self,
        name: &'static str,
        a: Var,
        b: Var,
        broadcast: bool,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Matrix> {
        let nodes = self.nodes.borrow();
        let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
        if x.shape() == y.shape() {
            let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
            return Ok(Matrix::new(x.rows(), x.cols(), data));
        }
        if broadcast && y.cols() == 1 && y.rows() == x.rows() {
            let mut out = x.clone();
            let cols = x.cols();
            for (i, o) in out.data_mut().iter_mut().enumerate() {
                *o = f(*o, y.data()[i / cols]);
            }
            return Ok(out);
        }
        Err(shape_err(name, x, y))
    }

    /// `a + b`; `b` may be a column broadcast across the columns of `a`.
    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let value = self.elementwise("add", a, b, true, |p, q| p + q)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    /// `a - b`; `b` may be a column broadcast across the columns of `a`.
    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let value = self.elementwise("sub", a, b, true, |p, q| p - q)?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn hadamard(&self, a: Var, b: Var) -> Result<Var> {
        let value = self.elementwise("hadamard", a, b, false, |p, q| p * q)?;
        Ok(self.push(value, Op::Hadamard(a, b)))
    }

    pub fn scale(&self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x.map(|v| v * s), Op::Scale(a, s))
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(a, |x| x.map(sigmoid), Op::Sigmoid(a))
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(a, |x| x.map(f64::tanh), Op::Tanh(a))
    }

    pub fn relu(&self, a: Var) -> Var {
        self.unary(a, |x| x.map(|v| v.max(0.0)), Op::Relu(a))
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, |x| x.map(f64::exp), Op::Exp(a))
    }

    /// Column-wise log-softmax.
    pub fn log_softmax(&self, a: Var) -> Var {
        self.unary(
            a,
            |x| {
                let mut out = x.clone();
                for c in 0..x.cols() {
                    let col = x.col(c);
                    let m = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let lse = m + col.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                    for r in 0..x.rows() {
                        out.set(r, c, x.get(r, c) - lse);
                    }
                }
                out
            },
            Op::LogSoftmax(a),
        )
    }

    /// Picks row `rows[c]` from every column `c`, giving a `1 × cols` result.
    pub fn gather(&self, a: Var, rows: &[usize]) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let x = &nodes[a.0].value;
            if rows.len() != x.cols() || rows.iter().any(|&r| r >= x.rows()) {
                return Err(AutodiffError::Shape {
                    op: "gather",
                    lhs: x.shape(),
                    rhs: (rows.len(), 1),
                });
            }
            Matrix::new(1, x.cols(), rows.iter().enumerate().map(|(c, &r)| x.get(r, c)).collect())
        };
        Ok(self.push(value, Op::Gather(a, rows.to_vec())))
    }

    /// Vertical concatenation; all parts must have the same column count.
    pub fn concat(&self, parts: &[Var]) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let first = &nodes[parts.first().expect("concat of nothing").0].value;
            let cols = first.cols();
            let mut data = Vec::new();
            let mut rows = 0;
            for p in parts {
                let m = &nodes[p.0].value;
                if m.cols() != cols {
                    return Err(shape_err("concat", first, m));
                }
                rows += m.rows();
                data.extend_from_slice(m.data());
            }
            Matrix::new(rows, cols, data)
        };
        Ok(self.push(value, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_rows(&self, a: Var, start: usize, len: usize) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let x = &nodes[a.0].value;
            if start + len > x.rows() {
                return Err(AutodiffError::Shape {
                    op: "slice_rows",
                    lhs: x.shape(),
                    rhs: (start, len),
                });
            }
            let c = x.cols();
            Matrix::new(len, c, x.data()[start * c..(start + len) * c].to_vec())
        };
        Ok(self.push(value, Op::SliceRows(a, start)))
    }

    pub fn sum(&self, a: Var) -> Var {
        self.unary(a, |x| Matrix::scalar(x.data().iter().sum()), Op::Sum(a))
    }

    pub fn mean(&self, a: Var) -> Var {
        self.unary(
            a,
            |x| Matrix::scalar(x.data().iter().sum::<f64>() / x.len() as f64),
            Op::Mean(a),
        )
    }

    pub fn reshape(&self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let x = &nodes[a.0].value;
            if x.len() != rows * cols {
                return Err(AutodiffError::Shape {
                    op: "reshape",
                    lhs: x.shape(),
                    rhs: (rows, cols),
                });
            }
            Matrix::new(rows, cols, x.data().to_vec())
        };
        Ok(self.push(value, Op::Reshape(a)))
    }

    /// `S · x` for a constant sparse `S`.
    pub fn sparse_linear(&self, s: &Arc<SparseMatrix>, x: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let xm = &nodes[x.0].value;
            if xm.rows() != s.cols() {
                return Err(AutodiffError::Shape {
                    op: "sparse_linear",
                    lhs: (s.rows(), s.cols()),
                    rhs: xm.shape(),
                });
            }
            s.mul(xm)
        };
        Ok(self.push(value, Op::SparseLinear(Arc::clone(s), x)))
    }

    /// Batched cross-correlation of `input` with `kernel` (see [`ConvGeometry`]).
    pub fn conv2d(&self, input: Var, kernel: Var, geom: ConvGeometry) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (x, k) = (&nodes[input.0].value, &nodes[kernel.0].value);
            if !geom.is_valid() || x.rows() != geom.input_len() {
                return Err(AutodiffError::Shape {
                    op: "conv2d input",
                    lhs: x.shape(),
                    rhs: (geom.input_len(), x.cols()),
                });
            }
            if k.shape() != (geom.out_channels, geom.kernel_cols()) {
                return Err(AutodiffError::Shape {
                    op: "conv2d kernel",
                    lhs: k.shape(),
                    rhs: (geom.out_channels, geom.kernel_cols()),
                });
            }
            conv_forward(x, k, &geom)
        };
        Ok(self.push(value, Op::Conv2d(input, kernel, geom)))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        let nodes = self.nodes.borrow();
        let shape = nodes[loss.0].value.shape();
        if shape != (1, 1) {
            return Err(AutodiffError::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::scalar(1.0));

        fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
            match &mut grads[v.0] {
                Some(existing) => {
                    for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                        *e += x;
                    }
                }
                slot => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &nodes[i];
            let y = &node.value;
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(dy);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    acc(&mut grads, *a, dy.matmul(&bv.transpose()));
                    acc(&mut grads, *b, av.transpose().matmul(&dy));
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                    let bshape = nodes[b.0].value.shape();
                    let db = if bshape == dy.shape() {
                        dy.map(|v| sign * v)
                    } else {
                        let cols = dy.cols();
                        let mut m = Matrix::zeros(bshape.0, 1);
                        for (k, v) in dy.data().iter().enumerate() {
                            m.data_mut()[k / cols] += sign * v;
                        }
                        m
                    };
                    acc(&mut grads, *a, dy);
                    acc(&mut grads, *b, db);
                }
                Op::Scale(a, s) => acc(&mut grads, *a, dy.map(|v| v * s)),
                Op::Hadamard(a, b) => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    acc(&mut grads, *a, zip(&dy, bv, |g, x| g * x));
                    acc(&mut grads, *b, zip(&dy, av, |g, x| g * x));
                }
                Op::Sigmoid(a) => acc(&mut grads, *a, zip(&dy, y, |g, s| g * s * (1.0 - s))),
                Op::Tanh(a) => acc(&mut grads, *a, zip(&dy, y, |g, t| g * (1.0 - t * t))),
                Op::Exp(a) => acc(&mut grads, *a, zip(&dy, y, |g, e| g * e)),
                Op::Relu(a) => {
                    let x = &nodes[a.0].value;
                    acc(&mut grads, *a, zip(&dy, x, |g, v| if v > 0.0 { g } else { 0.0 }));
                }
                Op::LogSoftmax(a) => {
                    let mut dx = dy.clone();
                    for c in 0..y.cols() {
                        let s: f64 = (0..y.rows()).map(|r| dy.get(r, c)).sum();
                        for r in 0..y.rows() {
                            dx.set(r, c, dy.get(r, c) - y.get(r, c).exp() * s);
                        }
                    }
                    acc(&mut grads, *a, dx);
                }
                Op::Gather(a, rows) => {
                    let (r, c) = nodes[a.0].value.shape();
                    let mut dx = Matrix::zeros(r, c);
                    for (col, &row) in rows.iter().enumerate() {
                        dx.set(row, col, dy.get(0, col));
                    }
                    acc(&mut grads, *a, dx);
                }
                Op::ConcatRows(parts) => {
                    let cols = dy.cols();
                    let mut off = 0;
                    for p in parts {
                        let rows = nodes[p.0].value.rows();
                        let data = dy.data()[off * cols..(off + rows) * cols].to_vec();
                        acc(&mut grads, *p, Matrix::new(rows, cols, data));
                        off += rows;
                    }
                }
                Op::SliceRows(a, start) => {
                    let (r, c) = nodes[a.0].value.shape();
                    let mut dx = Matrix::zeros(r, c);
                    dx.data_mut()[start * c..start * c + dy.len()].copy_from_slice(dy.data());
                    acc(&mut grads, *a, dx);
                }
                Op::Sum(a) => {
                    let (r, c) = nodes[a.0].value.shape();
                    acc(&mut grads, *a, Matrix::filled(r, c, dy.item()));
                }
                Op::Mean(a) => {
                    let (r, c) = nodes[a.0].value.shape();
                    acc(&mut grads, *a, Matrix::filled(r, c, dy.item() / (r * c) as f64));
                }
                Op::Reshape(a) => {
                    let (r, c) = nodes[a.0].value.shape();
                    acc(&mut grads, *a, Matrix::new(r, c, dy.into_data()));
                }
                Op::SparseLinear(s, x) => {
                    let b = dy.cols();
                    let mut dx = Matrix::zeros(s.cols(), b);
                    let d = dx.data_mut();
                    for &(r, c, v) in s.entries() {
                        for j in 0..b {
                            d[c * b + j] += v * dy.data()[r * b + j];
                        }
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::Conv2d(input, kernel, geom) => {
                    let (x, k) = (&nodes[input.0].value, &nodes[kernel.0].value);
                    let (dx, dk) = conv_backward(x, k, &dy, geom);
                    acc(&mut grads, *input, dx);
                    acc(&mut grads, *kernel, dk);
                }
            }
        }
        Ok(Grads {
            grads,
            params: self.params.borrow().clone(),
        })
    }
}

fn zip(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    Matrix::new(
        a.rows(),
        a.cols(),
        a.data().iter().zip(b.data()).map(|(&p, &q)| f(p, q)).collect(),
    )
}

fn conv_forward(x: &Matrix, k: &Matrix, g: &ConvGeometry) -> Matrix {
    let (oh, ow, b) = (g.out_height(), g.out_width(), x.cols());
    let kc = g.kernel_cols();
    let n = oh * ow * b;
    // im2col: row `col` holds the input patch entry for every (pixel, batch)
    let mut patches = vec![0.0; kc * n];
    let xd = x.data();
    for ci in 0..g.in_channels {
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let col = (ci * g.kernel + ky) * g.kernel + kx;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let Some(src) = g.input_index(ci, oy, ox, ky, kx) else { continue };
                        let dst = col * n + (oy * ow + ox) * b;
                        patches[dst..dst + b].copy_from_slice(&xd[src * b..(src + 1) * b]);
                    }
                }
            }
        }
    }
    // row-major buffers read as column-major are transposes: out^T = patches^T · k^T
    let pt = DMatrixView::from_slice(&patches, n, kc);
    let kt = DMatrixView::from_slice(k.data(), kc, g.out_channels);
    let out = pt * kt;
    Matrix::new(g.output_len(), b, out.as_slice().to_vec())
}

fn conv_backward(x: &Matrix, k: &Matrix, dy: &Matrix, g: &ConvGeometry) -> (Matrix, Matrix) {
    let (oh, ow, b) = (g.out_height(), g.out_width(), x.cols());
    let mut dx = Matrix::zeros(x.rows(), b);
    let mut dk = Matrix::zeros(k.rows(), k.cols());
    let kc = g.kernel_cols();
    let (xd, kd, gd) = (x.data(), k.data(), dy.data());
    for oy in 0..oh {
        for ox in 0..ow {
            for ci in 0..g.in_channels {
                for ky in 0..g.kernel {
                    for kx in 0..g.kernel {
                        let Some(src) = g.input_index(ci, oy, ox, ky, kx) else { continue };
                        let col = (ci * g.kernel + ky) * g.kernel + kx;
                        for co in 0..g.out_channels {
                            let dst = ((co * oh + oy) * ow + ox) * b;
                            let w = kd[co * kc + col];
                            let mut dw = 0.0;
                            for j in 0..b {
                                let gy = gd[dst + j];
                                dw += gy * xd[src * b + j];
                                dx.data_mut()[src * b + j] += w * gy;
                            }
                            dk.data_mut()[co * kc + col] += dw;
                        }
                    }
                }
            }
        }
    }
    (dx, dk)
}

/// Result of a reverse sweep.
pub struct Grads {
    grads: Vec<Option<Matrix>>,
    params: Vec<(Var, ParamId)>,
}

impl Grads {
    /// Gradient of the loss with respect to `v`; `None` if `v` does not reach the loss.
    pub fn wrt(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Per-parameter gradients, summed over every use of a parameter on the tape.
    pub fn params(&self, store: &ParamStore) -> Gradients {
        let mut out = Gradients::zeros(store);
        for &(v, id) in &self.params {
            if let Some(g) = self.wrt(v) {
                for (o, x) in out.get_mut(id).iter_mut().zip(g.data()) {
                    *o += x;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hadamard_by_hand() {
        let t = Tape::new();
        let a = t.constant(Matrix::column(vec![1.0, 2.0]));
        let b = t.constant(Matrix::column(vec![3.0, 4.0]));
        let c = t.hadamard(a, b).unwrap();
        assert_eq!(t.value(c).data(), &[3.0, 8.0]);
    }

    #[test]
    fn sigmoid_at_zero() {
        let t = Tape::new();
        let x = t.constant(Matrix::scalar(0.0));
        assert_eq!(t.value(t.sigmoid(x)).item(), 0.5);
    }

    #[test]
    fn tanh_gradient_at_zero_is_one() {
        let t = Tape::new();
        let x = t.constant(Matrix::zeros(3, 2));
        let y = t.sum(t.tanh(x));
        let g = t.backward(y).unwrap();
        assert!(g.wrt(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn square_gradient() {
        let t = Tape::new();
        let x = t.constant(Matrix::scalar(3.0));
        let y = t.hadamard(x, x).unwrap();
        assert_eq!(t.backward(y).unwrap().wrt(x).unwrap().item(), 6.0);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let t = Tape::new();
        let x = t.constant(Matrix::zeros(2, 1));
        assert_eq!(
            t.backward(x).err(),
            Some(AutodiffError::NonScalarLoss((2, 1)))
        );
    }

    #[test]
    fn disconnected_parameter_gets_zero() {
        let mut store = ParamStore::new();
        let used = store.add("used", 1, 1, vec![2.0]).unwrap();
        let unused = store.add("unused", 2, 1, vec![1.0, 1.0]).unwrap();
        let t = Tape::new();
        let a = t.param(&store, used);
        let _b = t.param(&store, unused);
        let loss = t.hadamard(a, a).unwrap();
        let g = t.backward(loss).unwrap().params(&store);
        assert_eq!(g.get(used), &[4.0]);
        assert_eq!(g.get(unused), &[0.0, 0.0]);
    }

    #[test]
    fn shape_errors() {
        let t = Tape::new();
        let a = t.constant(Matrix::zeros(2, 3));
        let b = t.constant(Matrix::zeros(2, 3));
        assert!(matches!(t.matmul(a, b), Err(AutodiffError::Shape { op: "matmul", .. })));
        let c = t.constant(Matrix::zeros(3, 1));
        assert!(t.add(a, c).is_err());
        assert!(t.hadamard(a, c).is_err());
        assert!(t.gather(a, &[0, 1]).is_err());
        assert!(t.reshape(a, 4, 2).is_err());
    }

    #[test]
    fn primitive_gradients_match_finite_differences() {
        for (name, err) in crate::autodiff::primitive_gradient_errors().unwrap() {
            assert!(err < 1e-4, "{name}: relative error {err}");
        }
    }

    #[test]
    fn conv2d_constant_interior() {
        let geom = ConvGeometry {
            in_channels: 1,
            out_channels: 1,
            height: 5,
            width: 5,
            kernel: 3,
            padding: 1,
            stride: 1,
        };
        let t = Tape::new();
        let x = t.constant(Matrix::filled(25, 1, 2.0));
        let k = t.constant(super::super::gradcheck::sample_matrix(1, 9, 3));
        let ksum: f64 = t.value(k).data().iter().sum();
        let y = t.value(t.conv2d(x, k, geom).unwrap());
        for r in 1..4 {
            for c in 1..4 {
                assert!((y.get(r * 5 + c, 0) - 2.0 * ksum).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_geometry_symmetry() {
        let g = |height, kernel, padding, stride| ConvGeometry {
            in_channels: 1,
            out_channels: 1,
            height,
            width: height,
            kernel,
            padding,
            stride,
        };
        assert!(g(7, 3, 1, 1).is_symmetric());
        assert!(g(7, 3, 1, 2).is_symmetric());
        assert!(!g(6, 3, 1, 2).is_symmetric());
        assert!(g(7, 7, 0, 1).is_symmetric());
        assert!(!g(5, 2, 0, 1).is_symmetric());
    }
}
