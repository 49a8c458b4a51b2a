//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Every operation appends a node holding its forward value; [`Tape::backward`]
//! walks the nodes in reverse and accumulates adjoints into parents. Binary
//! elementwise operations broadcast along any dimension of size 1, and the
//! backward pass sums adjoints back over the broadcast dimensions.
//!
//! The operation set is deliberately small: it covers the LSTM policy with its
//! wealth recursion and utility, and the jump-diffusion log-likelihood.

use super::matrix::{matmul_at_acc, matmul_bt_acc, Matrix};
use crate::special::{box_cox, box_cox_partials, d_ln_norm_cdf, ln_norm_cdf, sigmoid};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    Offset(usize),
    MatMul(usize, usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Exp(usize),
    Ln(usize),
    Square(usize),
    Cube(usize),
    LnNormCdf(usize),
    LogAddExp(usize, usize),
    BoxCox(usize, usize),
    Sum(usize),
    SliceCols(usize, usize),
    ConcatCols(usize, usize),
    FloorAt(usize, f64),
    Clamp(usize, f64, f64),
}

struct Node {
    value: Matrix,
    op: Op,
}

/// Recording of a forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> (usize, usize) {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            x
        } else if x == 1 {
            y
        } else {
            panic!("incompatible broadcast shapes {a:?} and {b:?}")
        }
    };
    (dim(a.0, b.0), dim(a.1, b.1))
}

#[inline]
fn bidx(m: &Matrix, r: usize, c: usize) -> usize {
    let rr = if m.rows() == 1 { 0 } else { r };
    let cc = if m.cols() == 1 { 0 } else { c };
    rr * m.cols() + cc
}

fn zip_with(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Matrix::from_vec(a.rows(), a.cols(), data);
    }
    let (rows, cols) = broadcast_shape(a.shape(), b.shape());
    let (ad, bd) = (a.data(), b.data());
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            data.push(f(ad[bidx(a, r, c)], bd[bidx(b, r, c)]));
        }
    }
    Matrix::from_vec(rows, cols, data)
}

/// Sum `grad` down to `shape`, undoing broadcasting.
fn reduce_to(grad: Matrix, shape: (usize, usize)) -> Matrix {
    if grad.shape() == shape {
        return grad;
    }
    let mut out = Matrix::zeros(shape.0, shape.1);
    let od = out.data_mut();
    for r in 0..grad.rows() {
        for c in 0..grad.cols() {
            let rr = if shape.0 == 1 { 0 } else { r };
            let cc = if shape.1 == 1 { 0 } else { c };
            od[rr * shape.1 + cc] += grad.get(r, c);
        }
    }
    out
}

fn accumulate(slot: &mut Option<Matrix>, g: Matrix) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
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

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: usize) -> &Matrix {
        &self.nodes[v].value
    }

    /// Input node: a parameter or a constant. Adjoints are available for both.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.leaf(Matrix::scalar(value))
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = zip_with(self.val(a.0), self.val(b.0), |x, y| x + y);
        self.push(out, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = zip_with(self.val(a.0), self.val(b.0), |x, y| x - y);
        self.push(out, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = zip_with(self.val(a.0), self.val(b.0), |x, y| x * y);
        self.push(out, Op::Mul(a.0, b.0))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let out = zip_with(self.val(a.0), self.val(b.0), |x, y| x / y);
        self.push(out, Op::Div(a.0, b.0))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let out = self.val(a.0).map(|x| -x);
        self.push(out, Op::Neg(a.0))
    }

    /// `k * a` for a constant `k`.
    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.val(a.0).map(|x| k * x);
        self.push(out, Op::Scale(a.0, k))
    }

    /// `a + k` for a constant `k`.
    pub fn offset(&mut self, a: Var, k: f64) -> Var {
        let out = self.val(a.0).map(|x| x + k);
        self.push(out, Op::Offset(a.0))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.val(a.0).matmul(self.val(b.0));
        self.push(out, Op::MatMul(a.0, b.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.val(a.0).map(sigmoid);
        self.push(out, Op::Sigmoid(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.val(a.0).map(f64::tanh);
        self.push(out, Op::Tanh(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.val(a.0).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(out, Op::Relu(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.val(a.0).map(f64::exp);
        self.push(out, Op::Exp(a.0))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let out = self.val(a.0).map(f64::ln);
        self.push(out, Op::Ln(a.0))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.val(a.0).map(|x| x * x);
        self.push(out, Op::Square(a.0))
    }

    pub fn cube(&mut self, a: Var) -> Var {
        let out = self.val(a.0).map(|x| x * x * x);
        self.push(out, Op::Cube(a.0))
    }

    /// Elementwise `ln Phi(a)` for the standard normal CDF.
    pub fn ln_norm_cdf(&mut self, a: Var) -> Var {
        let out = self.val(a.0).map(ln_norm_cdf);
        self.push(out, Op::LnNormCdf(a.0))
    }

    /// Elementwise `ln(e^a + e^b)`.
    pub fn log_add_exp(&mut self, a: Var, b: Var) -> Var {
        let out = zip_with(self.val(a.0), self.val(b.0), crate::special::log_add_exp);
        self.push(out, Op::LogAddExp(a.0, b.0))
    }

    /// Elementwise Box-Cox power transform `(x^e - 1)/e` (log limit at `e = 0`).
    pub fn box_cox(&mut self, x: Var, exponent: Var) -> Var {
        let out = zip_with(self.val(x.0), self.val(exponent.0), box_cox);
        self.push(out, Op::BoxCox(x.0, exponent.0))
    }

    /// Sum of all entries, as a 1x1 node.
    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.val(a.0).data().iter().sum();
        self.push(Matrix::scalar(s), Op::Sum(a.0))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.val(a.0).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let src = self.val(a.0);
        assert!(start < end && end <= src.cols(), "column slice out of range");
        let width = end - start;
        let mut data = Vec::with_capacity(src.rows() * width);
        for r in 0..src.rows() {
            data.extend_from_slice(&src.row_slice(r)[start..end]);
        }
        let out = Matrix::from_vec(src.rows(), width, data);
        self.push(out, Op::SliceCols(a.0, start))
    }

    /// Horizontal concatenation `[a | b]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (ma, mb) = (self.val(a.0), self.val(b.0));
        assert_eq!(ma.rows(), mb.rows(), "concat row mismatch");
        let mut data = Vec::with_capacity(ma.len() + mb.len());
        for r in 0..ma.rows() {
            data.extend_from_slice(ma.row_slice(r));
            data.extend_from_slice(mb.row_slice(r));
        }
        let out = Matrix::from_vec(ma.rows(), ma.cols() + mb.cols(), data);
        self.push(out, Op::ConcatCols(a.0, b.0))
    }

    /// `max(floor, a)`; the adjoint is zero wherever the floor binds.
    pub fn floor_at(&mut self, a: Var, floor: f64) -> Var {
        let out = self.val(a.0).map(|x| if x > floor { x } else { floor });
        self.push(out, Op::FloorAt(a.0, floor))
    }

    /// Clamp into `[lo, hi]`; the adjoint is zero outside the open interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.val(a.0).map(|x| x.clamp(lo, hi));
        self.push(out, Op::Clamp(a.0, lo, hi))
    }

    /// Adjoints of the scalar node `output` with respect to every node.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(
            self.val(output.0).shape(),
            (1, 1),
            "backward requires a scalar output"
        );
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Matrix::scalar(1.0));

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let shape_of = |v: usize| self.nodes[v].value.shape();
            match node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[b], reduce_to(g.clone(), shape_of(b)));
                    accumulate(&mut grads[a], reduce_to(g, shape_of(a)));
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[b], reduce_to(g.map(|x| -x), shape_of(b)));
                    accumulate(&mut grads[a], reduce_to(g, shape_of(a)));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.val(a), self.val(b));
                    let ga = zip_with(&g, vb, |gg, y| gg * y);
                    let gb = zip_with(&g, va, |gg, x| gg * x);
                    accumulate(&mut grads[a], reduce_to(ga, va.shape()));
                    accumulate(&mut grads[b], reduce_to(gb, vb.shape()));
                }
                Op::Div(a, b) => {
                    let (va, vb) = (self.val(a), self.val(b));
                    let ga = zip_with(&g, vb, |gg, y| gg / y);
                    let q = &node.value;
                    let gb = zip_with(&zip_with(&g, q, |gg, qq| -gg * qq), vb, |x, y| x / y);
                    accumulate(&mut grads[a], reduce_to(ga, va.shape()));
                    accumulate(&mut grads[b], reduce_to(gb, vb.shape()));
                }
                Op::Neg(a) => accumulate(&mut grads[a], g.map(|x| -x)),
                Op::Scale(a, k) => accumulate(&mut grads[a], g.map(|x| k * x)),
                Op::Offset(a) => accumulate(&mut grads[a], g),
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.val(a), self.val(b));
                    let mut ga = Matrix::zeros(va.rows(), va.cols());
                    matmul_bt_acc(&g, vb, &mut ga);
                    let mut gb = Matrix::zeros(vb.rows(), vb.cols());
                    matmul_at_acc(va, &g, &mut gb);
                    accumulate(&mut grads[a], ga);
                    accumulate(&mut grads[b], gb);
                }
                Op::Sigmoid(a) => {
                    let ga = zip_with(&g, &node.value, |gg, y| gg * y * (1.0 - y));
                    accumulate(&mut grads[a], ga);
                }
                Op::Tanh(a) => {
                    let ga = zip_with(&g, &node.value, |gg, y| gg * (1.0 - y * y));
                    accumulate(&mut grads[a], ga);
                }
                Op::Relu(a) => {
                    let ga = zip_with(&g, self.val(a), |gg, x| if x > 0.0 { gg } else { 0.0 });
                    accumulate(&mut grads[a], ga);
                }
                Op::Exp(a) => {
                    let ga = zip_with(&g, &node.value, |gg, y| gg * y);
                    accumulate(&mut grads[a], ga);
                }
                Op::Ln(a) => {
                    let ga = zip_with(&g, self.val(a), |gg, x| gg / x);
                    accumulate(&mut grads[a], ga);
                }
                Op::Square(a) => {
                    let ga = zip_with(&g, self.val(a), |gg, x| 2.0 * gg * x);
                    accumulate(&mut grads[a], ga);
                }
                Op::Cube(a) => {
                    let ga = zip_with(&g, self.val(a), |gg, x| 3.0 * gg * x * x);
                    accumulate(&mut grads[a], ga);
                }
                Op::LnNormCdf(a) => {
                    let ga = zip_with(&g, self.val(a), |gg, x| gg * d_ln_norm_cdf(x));
                    accumulate(&mut grads[a], ga);
                }
                Op::LogAddExp(a, b) => {
                    let (va, vb) = (self.val(a), self.val(b));
                    let out = &node.value;
                    let wa = zip_with(va, out, |x, o| if o == f64::NEG_INFINITY { 0.0 } else { (x - o).exp() });
                    let wb = zip_with(vb, out, |x, o| if o == f64::NEG_INFINITY { 0.0 } else { (x - o).exp() });
                    let ga = zip_with(&g, &wa, |gg, w| gg * w);
                    let gb = zip_with(&g, &wb, |gg, w| gg * w);
                    accumulate(&mut grads[a], reduce_to(ga, va.shape()));
                    accumulate(&mut grads[b], reduce_to(gb, vb.shape()));
                }
                Op::BoxCox(x, e) => {
                    let (vx, ve) = (self.val(x), self.val(e));
                    let (rows, cols) = g.shape();
                    let mut gx = Matrix::zeros(rows, cols);
                    let mut ge = Matrix::zeros(rows, cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            let xv = vx.data()[bidx(vx, r, c)];
                            let ev = ve.data()[bidx(ve, r, c)];
                            let (dx, de) = box_cox_partials(xv, ev);
                            let gg = g.get(r, c);
                            gx.set(r, c, gg * dx);
                            ge.set(r, c, gg * de);
                        }
                    }
                    accumulate(&mut grads[x], reduce_to(gx, vx.shape()));
                    accumulate(&mut grads[e], reduce_to(ge, ve.shape()));
                }
                Op::Sum(a) => {
                    let (r, c) = shape_of(a);
                    accumulate(&mut grads[a], Matrix::filled(r, c, g.item()));
                }
                Op::SliceCols(a, start) => {
                    let (r, c) = shape_of(a);
                    let mut ga = Matrix::zeros(r, c);
                    let width = g.cols();
                    for row in 0..r {
                        ga.data_mut()[row * c + start..row * c + start + width]
                            .copy_from_slice(g.row_slice(row));
                    }
                    accumulate(&mut grads[a], ga);
                }
                Op::ConcatCols(a, b) => {
                    let (ca, cb) = (shape_of(a).1, shape_of(b).1);
                    let rows = g.rows();
                    let mut ga = Vec::with_capacity(rows * ca);
                    let mut gb = Vec::with_capacity(rows * cb);
                    for row in 0..rows {
                        let src = g.row_slice(row);
                        ga.extend_from_slice(&src[..ca]);
                        gb.extend_from_slice(&src[ca..]);
                    }
                    accumulate(&mut grads[a], Matrix::from_vec(rows, ca, ga));
                    accumulate(&mut grads[b], Matrix::from_vec(rows, cb, gb));
                }
                Op::FloorAt(a, floor) => {
                    let ga = zip_with(&g, self.val(a), |gg, x| if x > floor { gg } else { 0.0 });
                    accumulate(&mut grads[a], ga);
                }
                Op::Clamp(a, lo, hi) => {
                    let ga = zip_with(&g, self.val(a), |gg, x| {
                        if x > lo && x < hi {
                            gg
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut grads[a], ga);
                }
            }
        }
        Gradients { grads }
    }
}

/// Adjoints produced by [`Tape::backward`]. Only leaf adjoints are retained.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Adjoint of a leaf, or `None` if the output does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Adjoint of a leaf, zero-filled to the leaf's shape when absent.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Matrix {
        match self.get(v) {
            Some(m) => m.clone(),
            None => {
                let (r, c) = tape.value(v).shape();
                Matrix::zeros(r, c)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(build: impl Fn(&mut Tape, Var) -> Var, x0: Matrix) {
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let y = build(&mut tape, x);
        let g = tape.backward(y).wrt(&tape, x);
        let eval = |m: Matrix| {
            let mut t = Tape::new();
            let v = t.leaf(m);
            let out = build(&mut t, v);
            t.value(out).item()
        };
        for i in 0..x0.len() {
            let h = 1e-6 * x0.data()[i].abs().max(1.0);
            let mut up = x0.clone();
            up.data_mut()[i] += h;
            let mut dn = x0.clone();
            dn.data_mut()[i] -= h;
            let fd = (eval(up) - eval(dn)) / (2.0 * h);
            let an = g.data()[i];
            assert!(
                (an - fd).abs() <= 1e-6 * an.abs().max(fd.abs()).max(1e-3),
                "component {i}: analytic {an} vs fd {fd}"
            );
        }
    }

    #[test]
    fn scalar_chain() {
        let mut tape = Tape::new();
        let x = tape.scalar(3.0);
        let y = tape.mul(x, x);
        let g = tape.backward(y);
        assert_eq!(tape.value(y).item(), 9.0);
        assert_eq!(g.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn elementwise_ops_match_fd() {
        let x0 = Matrix::from_vec(2, 3, vec![0.3, -0.7, 1.2, 0.05, -1.5, 0.8]);
        fd_check(
            |t, x| {
                let a = t.sigmoid(x);
                let b = t.tanh(x);
                let c = t.mul(a, b);
                let d = t.exp(c);
                let e = t.square(x);
                let f = t.offset(e, 1.0);
                let l = t.ln(f);
                let cu = t.cube(x);
                let s1 = t.add(d, l);
                let s2 = t.sub(s1, cu);
                let q = t.div(s2, f);
                let n = t.ln_norm_cdf(x);
                let m = t.log_add_exp(q, n);
                t.sum(m)
            },
            x0,
        );
    }

    #[test]
    fn broadcast_and_matmul_match_fd() {
        let x0 = Matrix::from_vec(3, 2, vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6]);
        fd_check(
            |t, x| {
                let w = t.leaf(Matrix::from_vec(2, 4, vec![0.5, -0.2, 0.1, 0.9, 0.3, 0.3, -0.7, 0.2]));
                let b = t.leaf(Matrix::row(vec![0.1, 0.0, -0.1, 0.2]));
                let z = t.matmul(x, w);
                let zb = t.add(z, b);
                let left = t.slice_cols(zb, 0, 2);
                let right = t.slice_cols(zb, 2, 4);
                let joined = t.concat_cols(right, left);
                let s = t.scalar(0.7);
                let k = t.mul(joined, s);
                let r = t.relu(k);
                let cl = t.clamp(zb, -0.2, 0.3);
                let tot = t.concat_cols(r, cl);
                let sc = t.scale(tot, 2.5);
                t.mean(sc)
            },
            x0,
        );
    }

    #[test]
    fn box_cox_matches_fd_in_both_arguments() {
        let x0 = Matrix::from_vec(1, 4, vec![0.5, 1.5, 2.0, 0.8]);
        fd_check(
            |t, x| {
                let e = t.leaf(Matrix::row(vec![-2.0, -0.5, 0.3, 1.0]));
                let u = t.box_cox(x, e);
                t.sum(u)
            },
            x0,
        );
        let e0 = Matrix::from_vec(1, 3, vec![-2.0, 0.4, -0.01]);
        fd_check(
            |t, e| {
                let x = t.leaf(Matrix::row(vec![0.5, 1.5, 3.0]));
                let u = t.box_cox(x, e);
                t.sum(u)
            },
            e0,
        );
    }

    #[test]
    fn floor_has_zero_subgradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Matrix::row(vec![-1.0, 2.0]));
        let y = tape.floor_at(x, 0.5);
        let s = tape.sum(y);
        assert_eq!(tape.value(y).data(), &[0.5, 2.0]);
        let g = tape.backward(s);
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn scalar_broadcast_gradient_is_reduced() {
        let mut tape = Tape::new();
        let k = tape.scalar(2.0);
        let v = tape.leaf(Matrix::column(vec![1.0, 2.0, 3.0]));
        let p = tape.mul(k, v);
        let s = tape.sum(p);
        let g = tape.backward(s);
        assert_eq!(g.get(k).unwrap().shape(), (1, 1));
        assert_eq!(g.get(k).unwrap().item(), 6.0);
    }
}
