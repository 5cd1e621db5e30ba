//! Define-by-run tape.
//!
//! Every op appends a node holding its output value; [`Graph::backward`]
//! walks the tape in reverse. Node ids are assigned in creation order, so
//! the tape is already topologically sorted and visited exactly once.

use std::cell::{Ref, RefCell};
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{gemm_nn, gemm_nt, gemm_tn};
use crate::{Element, ParamId, ParamStore, Result, SparseMatrix, Tensor, TensorError};

/// Lower clamp applied to probabilities before taking logs.
pub const PROB_EPS: f64 = 1e-7;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Affine(Var, T),
    MulConst(Var, Rc<Vec<T>>),
    ScaleRows(Var, Rc<Vec<T>>),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Ln(Var),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    GatherRows(Var, Rc<Vec<usize>>),
    Softmax(Var),
    WhereRows(Rc<Vec<bool>>, Var, Var),
    Sparse(Rc<SparseMatrix<T>>, Var),
    Reshape(Var),
    Bce(Var, Rc<Vec<T>>, T),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients produced by one backward pass, indexed by node.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
    params: Vec<(usize, ParamId)>,
}

impl<T: Element> Gradients<T> {
    /// Gradient with respect to any node; zeros when the loss does not
    /// depend on it.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        let shape = &self.shapes[v.0];
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape.clone(), g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    /// Adds parameter gradients into the store. Parameters reached through
    /// the graph but with no path to the loss receive zeros.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) {
        for &(node, id) in &self.params {
            let g = self.wrt(Var(node));
            store.accumulate_grad(id, &g);
        }
    }
}

pub struct Graph<T = f32> {
    nodes: RefCell<Vec<Node<T>>>,
    training: bool,
    rng: RefCell<ChaCha8Rng>,
}

impl<T: Element> Graph<T> {
    /// Inference graph: dropout is the identity.
    pub fn new() -> Self {
        Self::with_mode(false, 0)
    }

    /// Training graph whose dropout masks come from `seed`.
    pub fn training(seed: u64) -> Self {
        Self::with_mode(true, seed)
    }

    fn with_mode(training: bool, seed: u64) -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            training,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let n = self.nodes.borrow();
        (n[v.0].value.rows(), n[v.0].value.cols())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].needs_grad
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(nodes.len() - 1)
    }

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> TensorError {
        TensorError::Shape {
            op,
            left: self.shape(a),
            right: self.shape(b),
        }
    }

    /// Every node value is finite.
    pub fn all_finite(&self) -> bool {
        self.nodes.borrow().iter().all(|n| n.value.is_finite())
    }

    /// Smallest `|x|` fed to any relu node, `None` without relus. Finite
    /// differences are only meaningful when this exceeds the step size.
    pub fn relu_margin(&self) -> Option<T> {
        let nodes = self.nodes.borrow();
        nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(a) => nodes[a.0].value.data().iter().map(|x| x.abs()).reduce(T::min),
                _ => None,
            })
            .reduce(T::min)
    }

    // ---- leaves -------------------------------------------------------

    pub fn constant(&self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf whose gradient is tracked; read it back with [`Gradients::wrt`].
    pub fn variable(&self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    // ---- linear algebra ----------------------------------------------

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let ((m, k), (k2, n)) = (self.dims(a), self.dims(b));
        if k != k2 {
            return Err(self.shape_err("matmul", a, b));
        }
        let mut out = vec![T::zero(); m * n];
        {
            let nodes = self.nodes.borrow();
            gemm_nn(nodes[a.0].value.data(), nodes[b.0].value.data(), &mut out, m, k, n);
        }
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), ng))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&self, a: Var, b: Var) -> Result<Var> {
        let ((m, k), (n, k2)) = (self.dims(a), self.dims(b));
        if k != k2 {
            return Err(self.shape_err("matmul_nt", a, b));
        }
        let mut out = vec![T::zero(); m * n];
        {
            let nodes = self.nodes.borrow();
            gemm_nt(nodes[a.0].value.data(), nodes[b.0].value.data(), &mut out, m, k, n);
        }
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMulNT(a, b), ng))
    }

    /// Multiplies a constant sparse matrix into `x`.
    pub fn sparse_matmul(&self, s: Rc<SparseMatrix<T>>, x: Var) -> Result<Var> {
        let (k, n) = self.dims(x);
        if s.cols() != k {
            return Err(TensorError::Shape {
                op: "sparse_matmul",
                left: vec![s.rows(), s.cols()],
                right: self.shape(x),
            });
        }
        let out = s.mul_dense(self.value(x).data(), n);
        let rows = s.rows();
        let ng = self.needs(x);
        Ok(self.push(Tensor::new(vec![rows, n], out)?, Op::Sparse(s, x), ng))
    }

    // ---- elementwise --------------------------------------------------

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        if self.shape(a) != self.shape(b) {
            return Err(self.shape_err(op, a, b));
        }
        let nodes = self.nodes.borrow();
        let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape().to_vec(), data)
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), self.needs(a) || self.needs(b)))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), self.needs(a) || self.needs(b)))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), self.needs(a) || self.needs(b)))
    }

    /// Adds a `[1, n]` row to every row of `a`.
    pub fn add_row(&self, a: Var, row: Var) -> Result<Var> {
        let ((m, n), (r, n2)) = (self.dims(a), self.dims(row));
        if r != 1 || n != n2 {
            return Err(self.shape_err("add_row", a, row));
        }
        let t = {
            let nodes = self.nodes.borrow();
            let b = nodes[row.0].value.data();
            let data = nodes[a.0]
                .value
                .data()
                .chunks(n.max(1))
                .flat_map(|c| c.iter().zip(b).map(|(&x, &y)| x + y))
                .collect();
            Tensor::new(vec![m, n], data)?
        };
        Ok(self.push(t, Op::AddRow(a, row), self.needs(a) || self.needs(row)))
    }

    /// `a * scale`
    pub fn scale(&self, a: Var, scale: T) -> Var {
        let t = self.value(a).map(|x| x * scale);
        self.push(t, Op::Affine(a, scale), self.needs(a))
    }

    /// Elementwise product with a constant of the same size.
    pub fn mul_const(&self, a: Var, c: Rc<Vec<T>>) -> Result<Var> {
        if c.len() != self.value(a).len() {
            return Err(TensorError::Shape {
                op: "mul_const",
                left: self.shape(a),
                right: vec![c.len()],
            });
        }
        let t = {
            let v = self.value(a);
            let data = v.data().iter().zip(c.iter()).map(|(&x, &y)| x * y).collect();
            Tensor::new(v.shape().to_vec(), data)?
        };
        Ok(self.push(t, Op::MulConst(a, c), self.needs(a)))
    }

    /// Multiplies row `i` by `factors[i]`.
    pub fn scale_rows(&self, a: Var, factors: Rc<Vec<T>>) -> Result<Var> {
        let (m, n) = self.dims(a);
        if factors.len() != m {
            return Err(TensorError::Shape {
                op: "scale_rows",
                left: self.shape(a),
                right: vec![factors.len()],
            });
        }
        let t = {
            let v = self.value(a);
            let mut data = v.data().to_vec();
            for (i, &f) in factors.iter().enumerate() {
                for x in &mut data[i * n..(i + 1) * n] {
                    *x = *x * f;
                }
            }
            Tensor::new(vec![m, n], data)?
        };
        Ok(self.push(t, Op::ScaleRows(a, factors), self.needs(a)))
    }

    /// Row `i` of the result is `a[i]` where `mask[i]`, else `b[i]`.
    pub fn where_rows(&self, mask: Rc<Vec<bool>>, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        if self.shape(a) != self.shape(b) || mask.len() != m {
            return Err(self.shape_err("where_rows", a, b));
        }
        let t = {
            let nodes = self.nodes.borrow();
            let (x, y) = (nodes[a.0].value.data(), nodes[b.0].value.data());
            let mut data = Vec::with_capacity(m * n);
            for (i, &keep) in mask.iter().enumerate() {
                let src = if keep { x } else { y };
                data.extend_from_slice(&src[i * n..(i + 1) * n]);
            }
            Tensor::new(vec![m, n], data)?
        };
        Ok(self.push(t, Op::WhereRows(mask, a, b), self.needs(a) || self.needs(b)))
    }

    fn unary(&self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let t = self.value(a).map(f);
        self.push(t, op, self.needs(a))
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn relu(&self, a: Var) -> Var {
        self.unary(a, |x| if x > T::zero() { x } else { T::zero() }, Op::Relu(a))
    }

    pub fn ln(&self, a: Var) -> Var {
        self.unary(a, |x| x.ln(), Op::Ln(a))
    }

    /// Inverted dropout. Identity (the same node) outside training.
    pub fn dropout(&self, a: Var, rate: f64) -> Var {
        if !self.training || rate <= 0.0 {
            return a;
        }
        let keep = 1.0 - rate;
        let scale = T::num(1.0 / keep);
        let n = self.value(a).len();
        let mask: Vec<T> = {
            let mut rng = self.rng.borrow_mut();
            (0..n)
                .map(|_| if rng.random::<f64>() < keep { scale } else { T::zero() })
                .collect()
        };
        self.mul_const(a, Rc::new(mask)).expect("mask sized from input")
    }

    // ---- reductions ---------------------------------------------------

    pub fn sum(&self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().map(|x| x.as_f64()).sum();
        self.push(Tensor::scalar(T::num(s)), Op::Sum(a), self.needs(a))
    }

    pub fn mean(&self, a: Var) -> Var {
        let v = self.value(a);
        let s: f64 = v.data().iter().map(|x| x.as_f64()).sum();
        let m = s / v.len().max(1) as f64;
        drop(v);
        self.push(Tensor::scalar(T::num(m)), Op::Mean(a), self.needs(a))
    }

    /// Column means, `[m, n] -> [1, n]`.
    pub fn mean_rows(&self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let mut acc = vec![0f64; n];
        for row in self.value(a).data().chunks(n.max(1)) {
            for (s, &x) in acc.iter_mut().zip(row) {
                *s += x.as_f64();
            }
        }
        let data = acc.into_iter().map(|s| T::num(s / m.max(1) as f64)).collect();
        let t = Tensor::new(vec![1, n], data).expect("row");
        self.push(t, Op::MeanRows(a), self.needs(a))
    }

    // ---- structural ---------------------------------------------------

    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var> {
        let m = self.dims(parts[0]).0;
        let widths: Vec<usize> = parts.iter().map(|&p| self.dims(p).1).collect();
        for &p in parts {
            if self.dims(p).0 != m {
                return Err(self.shape_err("concat_cols", parts[0], p));
            }
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        {
            let nodes = self.nodes.borrow();
            for i in 0..m {
                for (&p, &w) in parts.iter().zip(&widths) {
                    data.extend_from_slice(&nodes[p.0].value.data()[i * w..(i + 1) * w]);
                }
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::new(vec![m, total], data)?, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn concat_rows(&self, parts: &[Var]) -> Result<Var> {
        let n = self.dims(parts[0]).1;
        let mut data = Vec::new();
        let mut m = 0;
        {
            let nodes = self.nodes.borrow();
            for &p in parts {
                let v = &nodes[p.0].value;
                if v.cols() != n {
                    drop(nodes);
                    return Err(self.shape_err("concat_rows", parts[0], p));
                }
                m += v.rows();
                data.extend_from_slice(v.data());
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn slice_cols(&self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        if start > end || end > n {
            return Err(TensorError::Index {
                op: "slice_cols",
                index: end,
                len: n,
            });
        }
        let w = end - start;
        let mut data = Vec::with_capacity(m * w);
        for row in self.value(a).data().chunks(n.max(1)) {
            data.extend_from_slice(&row[start..end]);
        }
        Ok(self.push(Tensor::new(vec![m, w], data)?, Op::SliceCols(a, start), self.needs(a)))
    }

    pub fn slice_rows(&self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        if start > end || end > m {
            return Err(TensorError::Index {
                op: "slice_rows",
                index: end,
                len: m,
            });
        }
        let data = self.value(a).data()[start * n..end * n].to_vec();
        Ok(self.push(Tensor::new(vec![end - start, n], data)?, Op::SliceRows(a, start), self.needs(a)))
    }

    /// Row gather; repeated indices are allowed and their gradients add up.
    pub fn gather_rows(&self, a: Var, idx: Rc<Vec<usize>>) -> Result<Var> {
        let (m, n) = self.dims(a);
        let mut data = Vec::with_capacity(idx.len() * n);
        {
            let v = self.value(a);
            for &i in idx.iter() {
                if i >= m {
                    return Err(TensorError::Index {
                        op: "gather_rows",
                        index: i,
                        len: m,
                    });
                }
                data.extend_from_slice(v.row_slice(i));
            }
        }
        let t = Tensor::new(vec![idx.len(), n], data)?;
        Ok(self.push(t, Op::GatherRows(a, idx), self.needs(a)))
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape(a), self.needs(a)))
    }

    // ---- softmax / loss -----------------------------------------------

    /// Row softmax, stabilised by subtracting the row max.
    pub fn softmax_rows(&self, a: Var) -> Result<Var> {
        self.softmax_impl(a, None)
    }

    /// Row softmax restricted to entries where `keep` is true; other
    /// entries get weight exactly zero. `keep` has the shape of `a`.
    pub fn masked_softmax_rows(&self, a: Var, keep: &[bool]) -> Result<Var> {
        if keep.len() != self.value(a).len() {
            return Err(TensorError::Shape {
                op: "masked_softmax_rows",
                left: self.shape(a),
                right: vec![keep.len()],
            });
        }
        self.softmax_impl(a, Some(keep))
    }

    fn softmax_impl(&self, a: Var, keep: Option<&[bool]>) -> Result<Var> {
        let (m, n) = self.dims(a);
        let mut out = vec![T::zero(); m * n];
        {
            let v = self.value(a);
            for i in 0..m {
                let row = v.row_slice(i);
                let on = |j: usize| keep.is_none_or(|k| k[i * n + j]);
                let max = (0..n)
                    .filter(|&j| on(j))
                    .map(|j| row[j])
                    .fold(None, |acc: Option<T>, x| Some(acc.map_or(x, |a| a.max(x))));
                let Some(max) = max else {
                    return Err(TensorError::Contract(format!(
                        "softmax row {i} has no unmasked entries"
                    )));
                };
                let mut z = 0f64;
                for j in (0..n).filter(|&j| on(j)) {
                    let e = (row[j] - max).exp();
                    out[i * n + j] = e;
                    z += e.as_f64();
                }
                let inv = T::num(1.0 / z);
                for o in &mut out[i * n..(i + 1) * n] {
                    *o = *o * inv;
                }
            }
        }
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::Softmax(a), self.needs(a)))
    }

    /// Binary cross-entropy on probabilities, clamped to
    /// `[PROB_EPS, 1 - PROB_EPS]`. `Mean` divides by the row count.
    pub fn bce(&self, probs: Var, targets: &Tensor<T>, reduction: Reduction) -> Result<Var> {
        if self.shape(probs) != targets.shape() {
            return Err(TensorError::Shape {
                op: "bce",
                left: self.shape(probs),
                right: targets.shape().to_vec(),
            });
        }
        let lo = T::num(PROB_EPS);
        let hi = T::one() - lo;
        let mut total = 0f64;
        let rows = self.dims(probs).0;
        {
            let p = self.value(probs);
            for (&pi, &yi) in p.data().iter().zip(targets.data()) {
                let q = pi.max(lo).min(hi);
                total -= (yi * q.ln() + (T::one() - yi) * (T::one() - q).ln()).as_f64();
            }
        }
        let norm = match reduction {
            Reduction::Sum => 1.0,
            Reduction::Mean => 1.0 / rows.max(1) as f64,
        };
        let t = Tensor::scalar(T::num(total * norm));
        let op = Op::Bce(probs, Rc::new(targets.data().to_vec()), T::num(norm));
        Ok(self.push(t, op, self.needs(probs)))
    }

    // ---- backward -----------------------------------------------------

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        if nodes[loss.0].value.len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if node.needs_grad {
                backprop(&nodes, node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }

        let params = nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => Some((i, id)),
                _ => None,
            })
            .collect();
        Ok(Gradients {
            shapes: nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            grads,
            params,
        })
    }
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

pub fn sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn acc<T: Element>(grads: &mut [Option<Vec<T>>], nodes: &[Node<T>], v: Var, f: impl FnOnce(&mut [T])) {
    if !nodes[v.0].needs_grad {
        return;
    }
    let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.len()]);
    f(slot);
}

fn backprop<T: Element>(nodes: &[Node<T>], node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
    let out = &node.value;
    let val = |v: Var| &nodes[v.0].value;
    match &node.op {
        Op::Leaf | Op::Param(_) => {}
        Op::MatMul(a, b) => {
            let (m, k) = (val(*a).rows(), val(*a).cols());
            let n = val(*b).cols();
            acc(grads, nodes, *a, |ga| gemm_nt(g, val(*b).data(), ga, m, n, k));
            acc(grads, nodes, *b, |gb| gemm_tn(val(*a).data(), g, gb, m, k, n));
        }
        Op::MatMulNT(a, b) => {
            // C = A Bᵀ: dA = dC B, dB = dCᵀ A
            let (m, k) = (val(*a).rows(), val(*a).cols());
            let n = val(*b).rows();
            acc(grads, nodes, *a, |ga| gemm_nn(g, val(*b).data(), ga, m, n, k));
            acc(grads, nodes, *b, |gb| gemm_tn(g, val(*a).data(), gb, m, n, k));
        }
        Op::Sparse(s, x) => {
            let n = out.cols();
            acc(grads, nodes, *x, |gx| s.tmul_dense_acc(g, n, gx));
        }
        Op::Add(a, b) => {
            acc(grads, nodes, *a, |ga| add_into(ga, g));
            acc(grads, nodes, *b, |gb| add_into(gb, g));
        }
        Op::Sub(a, b) => {
            acc(grads, nodes, *a, |ga| add_into(ga, g));
            acc(grads, nodes, *b, |gb| {
                for (x, &y) in gb.iter_mut().zip(g) {
                    *x = *x - y;
                }
            });
        }
        Op::Mul(a, b) => {
            acc(grads, nodes, *a, |ga| {
                for ((x, &y), &w) in ga.iter_mut().zip(g).zip(val(*b).data()) {
                    *x = *x + y * w;
                }
            });
            acc(grads, nodes, *b, |gb| {
                for ((x, &y), &w) in gb.iter_mut().zip(g).zip(val(*a).data()) {
                    *x = *x + y * w;
                }
            });
        }
        Op::AddRow(a, row) => {
            let n = out.cols();
            acc(grads, nodes, *a, |ga| add_into(ga, g));
            acc(grads, nodes, *row, |gr| {
                for chunk in g.chunks(n.max(1)) {
                    add_into(gr, chunk);
                }
            });
        }
        Op::Affine(a, s) => acc(grads, nodes, *a, |ga| {
            for (x, &y) in ga.iter_mut().zip(g) {
                *x = *x + y * *s;
            }
        }),
        Op::MulConst(a, c) => acc(grads, nodes, *a, |ga| {
            for ((x, &y), &w) in ga.iter_mut().zip(g).zip(c.iter()) {
                *x = *x + y * w;
            }
        }),
        Op::ScaleRows(a, f) => {
            let n = out.cols();
            acc(grads, nodes, *a, |ga| {
                for (i, &fi) in f.iter().enumerate() {
                    for (x, &y) in ga[i * n..(i + 1) * n].iter_mut().zip(&g[i * n..(i + 1) * n]) {
                        *x = *x + y * fi;
                    }
                }
            });
        }
        Op::WhereRows(mask, a, b) => {
            let n = out.cols();
            for (v, want) in [(*a, true), (*b, false)] {
                acc(grads, nodes, v, |gv| {
                    for (i, &keep) in mask.iter().enumerate() {
                        if keep == want {
                            add_into(&mut gv[i * n..(i + 1) * n], &g[i * n..(i + 1) * n]);
                        }
                    }
                });
            }
        }
        Op::Sigmoid(a) => acc(grads, nodes, *a, |ga| {
            for ((x, &y), &s) in ga.iter_mut().zip(g).zip(out.data()) {
                *x = *x + y * s * (T::one() - s);
            }
        }),
        Op::Tanh(a) => acc(grads, nodes, *a, |ga| {
            for ((x, &y), &t) in ga.iter_mut().zip(g).zip(out.data()) {
                *x = *x + y * (T::one() - t * t);
            }
        }),
        Op::Relu(a) => acc(grads, nodes, *a, |ga| {
            for ((x, &y), &o) in ga.iter_mut().zip(g).zip(out.data()) {
                if o > T::zero() {
                    *x = *x + y;
                }
            }
        }),
        Op::Ln(a) => acc(grads, nodes, *a, |ga| {
            for ((x, &y), &i) in ga.iter_mut().zip(g).zip(val(*a).data()) {
                *x = *x + y / i;
            }
        }),
        Op::Sum(a) => acc(grads, nodes, *a, |ga| {
            for x in ga.iter_mut() {
                *x = *x + g[0];
            }
        }),
        Op::Mean(a) => {
            let n = T::num(val(*a).len().max(1) as f64);
            acc(grads, nodes, *a, |ga| {
                for x in ga.iter_mut() {
                    *x = *x + g[0] / n;
                }
            });
        }
        Op::MeanRows(a) => {
            let (m, n) = (val(*a).rows(), val(*a).cols());
            let inv = T::num(1.0 / m.max(1) as f64);
            acc(grads, nodes, *a, |ga| {
                for row in ga.chunks_mut(n.max(1)) {
                    for (x, &y) in row.iter_mut().zip(g) {
                        *x = *x + y * inv;
                    }
                }
            });
        }
        Op::ConcatCols(parts) => {
            let total = out.cols();
            let mut offset = 0;
            for &p in parts {
                let w = val(p).cols();
                acc(grads, nodes, p, |gp| {
                    for (i, row) in gp.chunks_mut(w.max(1)).enumerate() {
                        add_into(row, &g[i * total + offset..i * total + offset + w]);
                    }
                });
                offset += w;
            }
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let len = val(p).len();
                acc(grads, nodes, p, |gp| add_into(gp, &g[offset..offset + len]));
                offset += len;
            }
        }
        Op::SliceCols(a, start) => {
            let (n, w) = (val(*a).cols(), out.cols());
            acc(grads, nodes, *a, |ga| {
                for (i, row) in g.chunks(w.max(1)).enumerate() {
                    add_into(&mut ga[i * n + start..i * n + start + w], row);
                }
            });
        }
        Op::SliceRows(a, start) => {
            let n = out.cols();
            acc(grads, nodes, *a, |ga| add_into(&mut ga[start * n..start * n + g.len()], g));
        }
        Op::GatherRows(a, idx) => {
            let n = out.cols();
            acc(grads, nodes, *a, |ga| {
                for (r, &i) in idx.iter().enumerate() {
                    add_into(&mut ga[i * n..(i + 1) * n], &g[r * n..(r + 1) * n]);
                }
            });
        }
        Op::Reshape(a) => acc(grads, nodes, *a, |ga| add_into(ga, g)),
        Op::Softmax(a) => {
            let n = out.cols();
            acc(grads, nodes, *a, |ga| {
                for (i, (grow, yrow)) in g.chunks(n.max(1)).zip(out.data().chunks(n.max(1))).enumerate() {
                    let dot: f64 = grow.iter().zip(yrow).map(|(&d, &y)| (d * y).as_f64()).sum();
                    let dot = T::num(dot);
                    for ((x, &d), &y) in ga[i * n..(i + 1) * n].iter_mut().zip(grow).zip(yrow) {
                        *x = *x + y * (d - dot);
                    }
                }
            });
        }
        Op::Bce(p, y, norm) => {
            let lo = T::num(PROB_EPS);
            let hi = T::one() - lo;
            acc(grads, nodes, *p, |gp| {
                for ((x, &pi), &yi) in gp.iter_mut().zip(val(*p).data()).zip(y.iter()) {
                    if pi > lo && pi < hi {
                        *x = *x + g[0] * *norm * (pi - yi) / (pi * (T::one() - pi));
                    }
                }
            });
        }
    }
}

fn add_into<T: Element>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}
