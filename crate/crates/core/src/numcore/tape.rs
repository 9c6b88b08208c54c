use std::borrow::Cow;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numcore::params::{Gradients, ParamId, ParamStore};
use crate::numcore::tensor::{sigmoid, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// A primitive whose backward rule lives outside the tape.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;

    /// Gradient contribution for each input, given the upstream gradient
    /// `grad` of the output.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &[f64]) -> Vec<Vec<f64>>;
}

enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    OneMinus(Var),
    Sigmoid(Var),
    Tanh(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Dot(Var, Var),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    Mean(Var),
    Sum(Var),
    SelectSum(Var, Vec<(usize, usize)>, f64),
    Custom(Vec<Var>, Box<dyn CustomOp>),
}

struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Records primitive operations in execution order for reverse-mode
/// differentiation. Parameters are borrowed from the store, never copied.
pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node<'p>>,
    param_nodes: Vec<Option<Var>>,
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}

fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
            param_nodes: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
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

    fn push(&mut self, value: Tensor, op: Op, operands: &[Var]) -> Var {
        let needs_grad = operands.iter().any(|o| self.nodes[o.0].needs_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.index()] {
            return v;
        }
        self.nodes.push(Node {
            value: Cow::Borrowed(self.store.value(id)),
            op: Op::Param(id),
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.index()] = Some(v);
        v
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(t),
            op: Op::Constant,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.value(a).dims2();
        let (k2, m) = self.value(b).dims2();
        if k != k2 {
            return Err(shape_err(
                "matmul",
                format!("{:?} x {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), n, k, m);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (r, c) = self.value(a).dims2();
        let out = transpose_raw(self.value(a).data(), r, c);
        let t = Tensor::new(vec![c, r], out).expect("transpose shape");
        self.push(t, Op::Transpose(a), &[a])
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        Tensor::new(va.shape().to_vec(), data).expect("same shape")
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let va = self.value(a);
        let data = va.data().iter().map(|x| f(*x)).collect();
        Tensor::new(va.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let t = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let t = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(t, Op::Sub(a, b), &[a, b]))
    }

    /// Adds vector `b` to every row of matrix `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.value(a).dims2();
        if self.value(b).len() != c {
            return Err(shape_err(
                "add_row",
                format!("{:?} + row {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let mut t = self.value(a).clone();
        let bv = self.value(b).data();
        for i in 0..r {
            for (x, y) in t.row_mut(i).iter_mut().zip(bv) {
                *x += y;
            }
        }
        Ok(self.push(t, Op::AddRow(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let t = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.map(a, |x| x * s);
        self.push(t, Op::Scale(a, s), &[a])
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let t = self.map(a, |x| 1.0 - x);
        self.push(t, Op::OneMinus(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.map(a, sigmoid);
        self.push(t, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.map(a, f64::tanh);
        self.push(t, Op::Tanh(a), &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut t = self.value(a).clone();
        for i in 0..t.rows() {
            let row = t.row_mut(i);
            let p = crate::numcore::tensor::softmax(row);
            row.copy_from_slice(&p);
        }
        self.push(t, Op::SoftmaxRows(a), &[a])
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let mut t = self.value(a).clone();
        for i in 0..t.rows() {
            let row = t.row_mut(i);
            let lse = crate::numcore::tensor::log_sum_exp(row);
            row.iter_mut().for_each(|x| *x -= lse);
        }
        self.push(t, Op::LogSoftmaxRows(a), &[a])
    }

    /// Inner product over all elements.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("dot", a, b)?;
        let s = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .sum();
        Ok(self.push(Tensor::scalar(s), Op::Dot(a, b), &[a, b]))
    }

    /// Stacks matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(shape_err("concat_rows", "no operands".into()));
        };
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let v = self.value(*p);
            if v.cols() != cols {
                return Err(shape_err(
                    "concat_rows",
                    format!("column mismatch {} vs {}", v.cols(), cols),
                ));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let t = Tensor::new(vec![rows, cols], data)?;
        Ok(self.push(t, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.value(a).dims2();
        if start >= end || end > r {
            return Err(shape_err("slice_rows", format!("{start}..{end} of {r} rows")));
        }
        let data = self.value(a).data()[start * c..end * c].to_vec();
        let t = Tensor::new(vec![end - start, c], data)?;
        Ok(self.push(t, Op::SliceRows(a, start), &[a]))
    }

    /// Row lookup, e.g. embedding rows by token id.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (r, c) = self.value(table).dims2();
        if ids.is_empty() {
            return Err(shape_err("gather_rows", "empty index list".into()));
        }
        let mut data = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            if id >= r {
                return Err(shape_err("gather_rows", format!("row {id} of {r}")));
            }
            data.extend_from_slice(self.value(table).row(id));
        }
        let t = Tensor::new(vec![ids.len(), c], data)?;
        Ok(self.push(t, Op::GatherRows(table, ids.to_vec()), &[table]))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let m = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push(Tensor::scalar(m), Op::Mean(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// `scale * Σ a[r, c]` over the listed coordinates.
    pub fn select_sum(&mut self, a: Var, coords: &[(usize, usize)], scale: f64) -> Result<Var> {
        let (r, c) = self.value(a).dims2();
        let mut s = 0.0;
        for &(i, j) in coords {
            if i >= r || j >= c {
                return Err(shape_err("select_sum", format!("({i}, {j}) outside {r}x{c}")));
            }
            s += self.value(a).get(i, j);
        }
        let t = Tensor::scalar(scale * s);
        Ok(self.push(t, Op::SelectSum(a, coords.to_vec(), scale), &[a]))
    }

    /// Records an externally computed value with its own backward rule.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, op: Box<dyn CustomOp>) -> Var {
        self.push(value, Op::Custom(inputs.to_vec(), op), inputs)
    }

    /// Inverted dropout: zero with probability `rate`, scale survivors by
    /// `1 / (1 - rate)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
        }
        if rate == 0.0 {
            return Ok(a);
        }
        let mask = dropout_mask(self.value(a).shape(), rate, rng);
        let m = self.constant(mask);
        self.mul(a, m)
    }

    /// Reverse pass from a scalar `loss`; returns gradients for every
    /// parameter the loss depends on.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::empty(self.store.len());

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.backward_node(node, &g, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn backward_node(
        &self,
        node: &Node<'_>,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        out: &mut Gradients,
    ) {
        let nodes = &self.nodes;
        let mut acc = |v: Var, contrib: Vec<f64>| {
            if !nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(buf) => buf.iter_mut().zip(&contrib).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(contrib),
            }
        };
        let val = |v: Var| -> &Tensor { &nodes[v.0].value };
        let y = &node.value;

        match &node.op {
            Op::Constant => {}
            Op::Param(id) => out.add(*id, g, self.store.value(*id).shape()),
            Op::MatMul(a, b) => {
                let (n, k) = val(*a).dims2();
                let m = val(*b).cols();
                if nodes[a.0].needs_grad {
                    // dA = G * B^T
                    let bd = val(*b).data();
                    let mut da = vec![0.0; n * k];
                    for i in 0..n {
                        let grow = &g[i * m..(i + 1) * m];
                        for p in 0..k {
                            let brow = &bd[p * m..(p + 1) * m];
                            da[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                    acc(*a, da);
                }
                if nodes[b.0].needs_grad {
                    // dB = A^T * G
                    let ad = val(*a).data();
                    let mut db = vec![0.0; k * m];
                    for i in 0..n {
                        let grow = &g[i * m..(i + 1) * m];
                        for p in 0..k {
                            let aip = ad[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for (d, x) in db[p * m..(p + 1) * m].iter_mut().zip(grow) {
                                *d += aip * x;
                            }
                        }
                    }
                    acc(*b, db);
                }
            }
            Op::Transpose(a) => {
                let (r, c) = val(*a).dims2();
                // g has shape (c, r)
                acc(*a, transpose_raw(g, c, r));
            }
            Op::Add(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.iter().map(|x| -x).collect());
            }
            Op::AddRow(a, b) => {
                acc(*a, g.to_vec());
                let c = val(*b).len();
                let mut db = vec![0.0; c];
                for row in g.chunks(c) {
                    db.iter_mut().zip(row).for_each(|(d, x)| *d += x);
                }
                acc(*b, db);
            }
            Op::Mul(a, b) => {
                let ad = val(*a).data();
                let bd = val(*b).data();
                acc(*a, g.iter().zip(bd).map(|(x, y)| x * y).collect());
                acc(*b, g.iter().zip(ad).map(|(x, y)| x * y).collect());
            }
            Op::Scale(a, s) => acc(*a, g.iter().map(|x| x * s).collect()),
            Op::OneMinus(a) => acc(*a, g.iter().map(|x| -x).collect()),
            Op::Sigmoid(a) => acc(
                *a,
                g.iter()
                    .zip(y.data())
                    .map(|(x, s)| x * s * (1.0 - s))
                    .collect(),
            ),
            Op::Tanh(a) => acc(
                *a,
                g.iter()
                    .zip(y.data())
                    .map(|(x, t)| x * (1.0 - t * t))
                    .collect(),
            ),
            Op::SoftmaxRows(a) => {
                let c = y.cols();
                let mut da = vec![0.0; g.len()];
                for ((grow, yrow), drow) in g.chunks(c).zip(y.data().chunks(c)).zip(da.chunks_mut(c)) {
                    let inner: f64 = grow.iter().zip(yrow).map(|(x, p)| x * p).sum();
                    for ((d, x), p) in drow.iter_mut().zip(grow).zip(yrow) {
                        *d = p * (x - inner);
                    }
                }
                acc(*a, da);
            }
            Op::LogSoftmaxRows(a) => {
                let c = y.cols();
                let mut da = vec![0.0; g.len()];
                for ((grow, yrow), drow) in g.chunks(c).zip(y.data().chunks(c)).zip(da.chunks_mut(c)) {
                    let total: f64 = grow.iter().sum();
                    for ((d, x), ly) in drow.iter_mut().zip(grow).zip(yrow) {
                        *d = x - ly.exp() * total;
                    }
                }
                acc(*a, da);
            }
            Op::Dot(a, b) => {
                let s = g[0];
                acc(*a, val(*b).data().iter().map(|x| s * x).collect());
                acc(*b, val(*a).data().iter().map(|x| s * x).collect());
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = val(*p).len();
                    acc(*p, g[offset..offset + len].to_vec());
                    offset += len;
                }
            }
            Op::SliceRows(a, start) => {
                let src = val(*a);
                let c = src.cols();
                let mut da = vec![0.0; src.len()];
                da[start * c..start * c + g.len()].copy_from_slice(g);
                acc(*a, da);
            }
            Op::GatherRows(table, ids) => {
                let t = val(*table);
                let c = t.cols();
                let mut dt = vec![0.0; t.len()];
                for (k, &id) in ids.iter().enumerate() {
                    for (d, x) in dt[id * c..(id + 1) * c].iter_mut().zip(&g[k * c..(k + 1) * c]) {
                        *d += x;
                    }
                }
                acc(*table, dt);
            }
            Op::Mean(a) => {
                let n = val(*a).len();
                acc(*a, vec![g[0] / n as f64; n]);
            }
            Op::Sum(a) => {
                let n = val(*a).len();
                acc(*a, vec![g[0]; n]);
            }
            Op::SelectSum(a, coords, scale) => {
                let src = val(*a);
                let c = src.cols();
                let mut da = vec![0.0; src.len()];
                for &(i, j) in coords {
                    da[i * c + j] += scale * g[0];
                }
                acc(*a, da);
            }
            Op::Custom(inputs, op) => {
                let vals: Vec<&Tensor> = inputs.iter().map(|v| val(*v)).collect();
                let contribs = op.backward(&vals, y, g);
                for (v, c) in inputs.iter().zip(contribs) {
                    acc(*v, c);
                }
            }
        }
    }
}

pub(crate) fn dropout_mask<R: Rng + ?Sized>(shape: &[usize], rate: f64, rng: &mut R) -> Tensor {
    let keep = 1.0 / (1.0 - rate);
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("mask shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: &[(&str, Tensor)]) -> (ParamStore, Vec<ParamId>) {
        let mut s = ParamStore::new();
        let ids = values
            .iter()
            .map(|(n, t)| s.add(*n, t.clone()).unwrap())
            .collect();
        (s, ids)
    }

    #[test]
    fn sum_gives_ones() {
        let (store, ids) = store_with(&[("p", Tensor::vector(vec![1.0, -2.0, 3.0]))]);
        let mut tape = Tape::new(&store);
        let p = tape.param(ids[0]);
        let l = tape.sum(p);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(ids[0]).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn self_dot_gives_twice() {
        let (store, ids) = store_with(&[("p", Tensor::vector(vec![1.0, -2.0, 3.0]))]);
        let mut tape = Tape::new(&store);
        let p = tape.param(ids[0]);
        let l = tape.dot(p, p).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(ids[0]).unwrap().data(), &[2.0, -4.0, 6.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let (store, ids) = store_with(&[("p", Tensor::vector(vec![1.0, 2.0]))]);
        let mut tape = Tape::new(&store);
        let p = tape.param(ids[0]);
        assert!(tape.backward(p).is_err());
    }

    #[test]
    fn primitive_values() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let z = tape.constant(Tensor::scalar(0.0));
        let s = tape.sigmoid(z);
        assert_eq!(tape.value(s).item(), 0.5);
        let x = tape.constant(Tensor::matrix(1, 3, vec![0.7, 0.7, 0.7]).unwrap());
        let s = tape.softmax_rows(x);
        for v in tape.value(s).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let a = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let i = tape.constant(Tensor::identity(2));
        let av = tape.constant(a.clone());
        let prod = tape.matmul(i, av).unwrap();
        assert_eq!(tape.value(prod), &a);
    }

    #[test]
    fn shape_errors_name_the_op() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul"), "{err}");
        let c = tape.constant(Tensor::zeros(&[3, 2]));
        assert!(tape.add(a, c).unwrap_err().to_string().contains("add"));
    }

    #[test]
    fn constants_receive_no_gradient_work() {
        let (store, ids) = store_with(&[("w", Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap())]);
        let mut tape = Tape::new(&store);
        let x = tape.constant(Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap());
        let w = tape.param(ids[0]);
        let y = tape.matmul(x, w).unwrap();
        let l = tape.sum(y);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(ids[0]).unwrap().data(), &[1.0, 1.0, 1.0, 1.0]);
    }
}
