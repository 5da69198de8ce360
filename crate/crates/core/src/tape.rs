//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A `Tape` records an eager computation graph; `backward` walks it once in
//! reverse and accumulates gradients. The op set is exactly what the encoder
//! stack and loss need: matrix products, gate nonlinearities, row/column
//! surgery, and the Frobenius reduction.

use crate::mat::Mat;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    /// `a * b^T`
    MatMulBT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, S),
    /// Row vector broadcast-added to every row of `a`.
    AddRow(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    ConcatCols(Var, Var),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    StackRows(Vec<Var>),
    PadCols(Var),
    /// `(1 - gate) .* a + gate .* b`
    Lerp {
        gate: Var,
        a: Var,
        b: Var,
    },
    /// Per-column affine on the first `scale.len()` columns; identity beyond.
    AffineCols {
        src: Var,
        scale: Vec<S>,
    },
    /// Elementwise product with a constant mask.
    Dropout(Var, Vec<S>),
    SumSquares(Var),
    SqrtScalar(Var),
}

struct Node<S> {
    op: Op<S>,
    value: Mat<S>,
    needs_grad: bool,
}

pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat<S> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op<S>, value: Mat<S>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Data leaf: no gradient flows into it.
    pub fn constant(&mut self, value: Mat<S>) -> Var {
        self.push(Op::Leaf, value, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Mat<S>) -> Var {
        self.push(Op::Leaf, value, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::MatMul(a, b), value, ng)
    }

    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul_bt(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::MatMulBT(a, b), value, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).add(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Add(a, b), value, ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).sub(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Sub(a, b), value, ng)
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "hadamard shape mismatch");
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Mat::from_vec(av.rows(), av.cols(), data);
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Hadamard(a, b), value, ng)
    }

    pub fn scale(&mut self, a: Var, c: S) -> Var {
        let value = self.value(a).scale(c);
        let ng = self.needs(a);
        self.push(Op::Scale(a, c), value, ng)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(row));
        assert_eq!(rv.rows(), 1, "bias must be a row vector");
        assert_eq!(av.cols(), rv.cols(), "bias width mismatch");
        let mut value = av.clone();
        for i in 0..value.rows() {
            for (x, &b) in value.row_mut(i).iter_mut().zip(rv.row(0)) {
                *x += b;
            }
        }
        let ng = self.needs(a) || self.needs(row);
        self.push(Op::AddRow(a, row), value, ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| S::one() / (S::one() + (-x).exp()));
        let ng = self.needs(a);
        self.push(Op::Sigmoid(a), value, ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.tanh());
        let ng = self.needs(a);
        self.push(Op::Tanh(a), value, ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(S::zero()));
        let ng = self.needs(a);
        self.push(Op::Relu(a), value, ng)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).concat_cols(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::ConcatCols(a, b), value, ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice_cols(start, len);
        let ng = self.needs(a);
        self.push(Op::SliceCols(a, start), value, ng)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice_rows(start, len);
        let ng = self.needs(a);
        self.push(Op::SliceRows(a, start), value, ng)
    }

    pub fn stack_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "stack_rows needs at least one input");
        let cols = self.value(parts[0]).cols();
        let rows: usize = parts.iter().map(|&p| self.value(p).rows()).sum();
        let mut value = Mat::zeros(rows, cols);
        let mut at = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols(), cols, "stack_rows width mismatch");
            for i in 0..pv.rows() {
                value.row_mut(at + i).copy_from_slice(pv.row(i));
            }
            at += pv.rows();
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(Op::StackRows(parts.to_vec()), value, ng)
    }

    /// Append `extra` zero columns.
    pub fn pad_cols(&mut self, a: Var, extra: usize) -> Var {
        let av = self.value(a);
        let mut value = Mat::zeros(av.rows(), av.cols() + extra);
        for i in 0..av.rows() {
            value.row_mut(i)[..av.cols()].copy_from_slice(av.row(i));
        }
        let ng = self.needs(a);
        self.push(Op::PadCols(a), value, ng)
    }

    pub fn lerp(&mut self, gate: Var, a: Var, b: Var) -> Var {
        let (gv, av, bv) = (self.value(gate), self.value(a), self.value(b));
        assert_eq!(gv.shape(), av.shape());
        assert_eq!(gv.shape(), bv.shape());
        let data = gv
            .data()
            .iter()
            .zip(av.data())
            .zip(bv.data())
            .map(|((&g, &x), &y)| (S::one() - g) * x + g * y)
            .collect();
        let value = Mat::from_vec(gv.rows(), gv.cols(), data);
        let ng = self.needs(gate) || self.needs(a) || self.needs(b);
        self.push(Op::Lerp { gate, a, b }, value, ng)
    }

    /// `out[:, j] = src[:, j] * scale[j] + shift[j]` for `j < scale.len()`,
    /// identity on the remaining columns. Scale and shift are constants.
    pub fn affine_cols(&mut self, src: Var, scale: Vec<S>, shift: Vec<S>) -> Var {
        assert_eq!(scale.len(), shift.len());
        let sv = self.value(src);
        assert!(scale.len() <= sv.cols(), "affine wider than matrix");
        let mut value = sv.clone();
        for i in 0..value.rows() {
            let row = value.row_mut(i);
            for (j, (&sc, &sh)) in scale.iter().zip(&shift).enumerate() {
                row[j] = row[j] * sc + sh;
            }
        }
        let ng = self.needs(src);
        self.push(Op::AffineCols { src, scale }, value, ng)
    }

    /// Elementwise multiply by a fixed mask (inverted-dropout convention:
    /// entries are 0 or 1/(1-p)).
    pub fn dropout(&mut self, a: Var, mask: Vec<S>) -> Var {
        let av = self.value(a);
        assert_eq!(mask.len(), av.data().len(), "mask length mismatch");
        let data = av.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let value = Mat::from_vec(av.rows(), av.cols(), data);
        let ng = self.needs(a);
        self.push(Op::Dropout(a, mask), value, ng)
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let value = Mat::from_vec(1, 1, vec![self.value(a).sum_squares()]);
        let ng = self.needs(a);
        self.push(Op::SumSquares(a), value, ng)
    }

    pub fn sqrt_scalar(&mut self, a: Var) -> Var {
        let av = self.value(a);
        assert_eq!(av.shape(), (1, 1), "sqrt_scalar expects a 1x1 input");
        let value = Mat::from_vec(1, 1, vec![av.get(0, 0).sqrt()]);
        let ng = self.needs(a);
        self.push(Op::SqrtScalar(a), value, ng)
    }

    /// Frobenius norm as a 1x1 node.
    pub fn frobenius(&mut self, a: Var) -> Var {
        let ss = self.sum_squares(a);
        self.sqrt_scalar(ss)
    }

    /// Reverse pass from a 1x1 loss node.
    pub fn backward(&self, loss: Var) -> GradStore<S> {
        assert_eq!(self.value(loss).shape(), (1, 1), "loss must be scalar");
        let mut grads: Vec<Option<Mat<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::from_vec(1, 1, vec![S::one()]));

        for id in (0..self.nodes.len()).rev() {
            if grads[id].is_none() || !self.nodes[id].needs_grad {
                continue;
            }
            let g = grads[id].take().unwrap();
            match &self.nodes[id].op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        let da = g.matmul_bt(self.value(*b));
                        accumulate(&mut grads, *a, da);
                    }
                    if self.needs(*b) {
                        let db = self.value(*a).matmul_at(&g);
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::MatMulBT(a, b) => {
                    if self.needs(*a) {
                        let da = g.matmul(self.value(*b));
                        accumulate(&mut grads, *a, da);
                    }
                    if self.needs(*b) {
                        let db = g.matmul_at(self.value(*a));
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g.clone());
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g.scale(-S::one()));
                    }
                }
                Op::Hadamard(a, b) => {
                    if self.needs(*a) {
                        let da = elementwise(&g, self.value(*b), |x, y| x * y);
                        accumulate(&mut grads, *a, da);
                    }
                    if self.needs(*b) {
                        let db = elementwise(&g, self.value(*a), |x, y| x * y);
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::Scale(a, c) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.scale(*c));
                    }
                }
                Op::AddRow(a, row) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.needs(*row) {
                        let mut db = Mat::zeros(1, g.cols());
                        for i in 0..g.rows() {
                            for (o, &v) in db.row_mut(0).iter_mut().zip(g.row(i)) {
                                *o += v;
                            }
                        }
                        accumulate(&mut grads, *row, db);
                    }
                }
                Op::Sigmoid(a) => {
                    if self.needs(*a) {
                        let y = &self.nodes[id].value;
                        let da = elementwise(&g, y, |gu, yv| gu * yv * (S::one() - yv));
                        accumulate(&mut grads, *a, da);
                    }
                }
                Op::Tanh(a) => {
                    if self.needs(*a) {
                        let y = &self.nodes[id].value;
                        let da = elementwise(&g, y, |gu, yv| gu * (S::one() - yv * yv));
                        accumulate(&mut grads, *a, da);
                    }
                }
                Op::Relu(a) => {
                    if self.needs(*a) {
                        let y = &self.nodes[id].value;
                        let da = elementwise(
                            &g,
                            y,
                            |gu, yv| {
                                if yv > S::zero() {
                                    gu
                                } else {
                                    S::zero()
                                }
                            },
                        );
                        accumulate(&mut grads, *a, da);
                    }
                }
                Op::ConcatCols(a, b) => {
                    let ac = self.value(*a).cols();
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.slice_cols(0, ac));
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g.slice_cols(ac, g.cols() - ac));
                    }
                }
                Op::SliceCols(a, start) => {
                    if self.needs(*a) {
                        let av = self.value(*a);
                        let mut da = Mat::zeros(av.rows(), av.cols());
                        for i in 0..g.rows() {
                            da.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                        }
                        accumulate(&mut grads, *a, da);
                    }
                }
                Op::SliceRows(a, start) => {
                    if self.needs(*a) {
                        let av = self.value(*a);
                        let mut da = Mat::zeros(av.rows(), av.cols());
                        for i in 0..g.rows() {
                            da.row_mut(start + i).copy_from_slice(g.row(i));
                        }
                        accumulate(&mut grads, *a, da);
                    }
                }
                Op::StackRows(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let rows = self.value(p).rows();
                        if self.needs(p) {
                            accumulate(&mut grads, p, g.slice_rows(at, rows));
                        }
                        at += rows;
                    }
                }
                Op::PadCols(a) => {
                    if self.needs(*a) {
                        let ac = self.value(*a).cols();
                        accumulate(&mut grads, *a, g.slice_cols(0, ac));
                    }
                }
                Op::Lerp { gate, a, b } => {
                    let (gv, av, bv) = (self.value(*gate), self.value(*a), self.value(*b));
                    if self.needs(*gate) {
                        let mut dg = Mat::zeros(g.rows(), g.cols());
                        for ((o, &gu), (&x, &y)) in dg
                            .data_mut()
                            .iter_mut()
                            .zip(g.data())
                            .zip(av.data().iter().zip(bv.data()))
                        {
                            *o = gu * (y - x);
                        }
                        accumulate(&mut grads, *gate, dg);
                    }
                    if self.needs(*a) {
                        let da = elementwise(&g, gv, |gu, gz| gu * (S::one() - gz));
                        accumulate(&mut grads, *a, da);
                    }
                    if self.needs(*b) {
                        let db = elementwise(&g, gv, |gu, gz| gu * gz);
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::AffineCols { src, scale } => {
                    if self.needs(*src) {
                        let mut da = g.clone();
                        for i in 0..da.rows() {
                            let row = da.row_mut(i);
                            for (j, &sc) in scale.iter().enumerate() {
                                row[j] *= sc;
                            }
                        }
                        accumulate(&mut grads, *src, da);
                    }
                }
                Op::Dropout(a, mask) => {
                    if self.needs(*a) {
                        let mut da = g.clone();
                        for (x, &m) in da.data_mut().iter_mut().zip(mask) {
                            *x *= m;
                        }
                        accumulate(&mut grads, *a, da);
                    }
                }
                Op::SumSquares(a) => {
                    if self.needs(*a) {
                        let gu = g.get(0, 0);
                        let da = self.value(*a).scale(S::of(2.0) * gu);
                        accumulate(&mut grads, *a, da);
                    }
                }
                Op::SqrtScalar(a) => {
                    if self.needs(*a) {
                        let y = self.nodes[id].value.get(0, 0);
                        // Subgradient 0 at the origin.
                        let d = if y > S::zero() {
                            g.get(0, 0) / (S::of(2.0) * y)
                        } else {
                            S::zero()
                        };
                        accumulate(&mut grads, *a, Mat::from_vec(1, 1, vec![d]));
                    }
                }
            }
            grads[id] = Some(g);
        }
        GradStore { grads }
    }
}

fn accumulate<S: Scalar>(grads: &mut [Option<Mat<S>>], v: Var, delta: Mat<S>) {
    match &mut grads[v.0] {
        Some(g) => g.add_assign(&delta),
        slot => *slot = Some(delta),
    }
}

fn elementwise<S: Scalar>(a: &Mat<S>, b: &Mat<S>, f: impl Fn(S, S) -> S) -> Mat<S> {
    debug_assert_eq!(a.shape(), b.shape());
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Mat::from_vec(a.rows(), a.cols(), data)
}

pub struct GradStore<S> {
    grads: Vec<Option<Mat<S>>>,
}

impl<S: Scalar> GradStore<S> {
    pub fn get(&self, v: Var) -> Option<&Mat<S>> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, zero-filled when no path reached it.
    pub fn get_or_zeros(&self, v: Var, rows: usize, cols: usize) -> Mat<S> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Mat::zeros(rows, cols),
        }
    }
}
