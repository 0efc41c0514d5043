//! Reverse-mode differentiation over 2-D `f64` arrays.
//!
//! A [`Tape`] records operations as they are applied; [`Tape::backward`] walks
//! the record in reverse and returns gradients for every parameter touched.
//! Parameters are read in place from a [`ParamStore`] rather than copied.

use std::rc::Rc;

use ndarray::{s, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named trainable matrices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Uniform Glorot initialisation for a `rows x cols` weight.
    pub fn add_glorot<R: Rng + ?Sized>(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut R) -> ParamId {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let value = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit));
        self.add(name, value)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name, Array2::zeros((rows, cols)))
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Array2::len).sum()
    }
}

/// Per-parameter gradients; `None` for parameters not on the tape.
#[derive(Debug, Clone)]
pub struct Gradients(pub Vec<Option<Array2<f64>>>);

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Array2<f64>> {
        self.0.get(id.0).and_then(Option::as_ref)
    }

    /// Scalar gradient entry, zero when the parameter was not used.
    pub fn entry(&self, id: ParamId, r: usize, c: usize) -> f64 {
        self.get(id).map_or(0.0, |g| g[[r, c]])
    }

    pub fn global_norm(&self) -> f64 {
        self.0.iter().flatten().map(|g| g.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Param(ParamId),
    Const,
    MatMul(Var, Var),
    /// `[B,N] + [1,N]`
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// Elementwise product with a constant of the same shape.
    MulConst(Var, Array2<f64>),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    SliceCols(Var, usize, usize),
    Concat(Vec<Var>),
    /// Row `b` of the output is the sum of the parameter rows listed for `b`.
    SparseRows(ParamId, Rc<Vec<Vec<usize>>>),
    LogSoftmax(Var),
    Square(Var),
    /// `[B,N] -> [B,1]`
    SumCols(Var),
    /// `[B,N] -> [1,1]`
    Sum(Var),
}

struct Node {
    op: Op,
    value: Option<Array2<f64>>,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self { params, nodes: Vec::with_capacity(256) }
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        let node = &self.nodes[v.0];
        match (&node.op, &node.value) {
            (_, Some(value)) => value,
            (Op::Param(id), None) => self.params.get(*id),
            _ => unreachable!("non-parameter node without a value"),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    fn push(&mut self, op: Op, value: Option<Array2<f64>>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.push(Op::Param(id), None)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(Op::Const, Some(value))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(Op::MatMul(a, b), Some(v))
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let v = self.value(x) + self.value(bias);
        self.push(Op::AddBias(x, bias), Some(v))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(Op::Add(a, b), Some(v))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(Op::Sub(a, b), Some(v))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(Op::Mul(a, b), Some(v))
    }

    pub fn mul_const(&mut self, x: Var, c: Array2<f64>) -> Var {
        let v = self.value(x) * &c;
        self.push(Op::MulConst(x, c), Some(v))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let v = self.value(x) * k;
        self.push(Op::Scale(x, k), Some(v))
    }

    pub fn add_scalar(&mut self, x: Var, k: f64) -> Var {
        let v = self.value(x) + k;
        self.push(Op::AddScalar(x), Some(v))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(|a| a.max(0.0));
        self.push(Op::Relu(x), Some(v))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(f64::tanh);
        self.push(Op::Tanh(x), Some(v))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(|a| 1.0 / (1.0 + (-a).exp()));
        self.push(Op::Sigmoid(x), Some(v))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(f64::exp);
        self.push(Op::Exp(x), Some(v))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let v = self.value(x).slice(s![.., start..end]).to_owned();
        self.push(Op::SliceCols(x, start, end), Some(v))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("row counts must agree");
        self.push(Op::Concat(parts.to_vec()), Some(v))
    }

    pub fn sparse_rows(&mut self, id: ParamId, rows: Rc<Vec<Vec<usize>>>) -> Var {
        let w = self.params.get(id);
        let mut v = Array2::zeros((rows.len(), w.ncols()));
        for (b, active) in rows.iter().enumerate() {
            let mut out = v.row_mut(b);
            for &i in active {
                out += &w.row(i);
            }
        }
        self.push(Op::SparseRows(id, rows), Some(v))
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let mut v = self.value(x).clone();
        for mut row in v.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, a| m.max(*a));
            let lse = max + row.iter().map(|a| (a - max).exp()).sum::<f64>().ln();
            row.mapv_inplace(|a| a - lse);
        }
        self.push(Op::LogSoftmax(x), Some(v))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(|a| a * a);
        self.push(Op::Square(x), Some(v))
    }

    pub fn sum_cols(&mut self, x: Var) -> Var {
        let v = self.value(x).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(Op::SumCols(x), Some(v))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(x).sum());
        self.push(Op::Sum(x), Some(v))
    }

    /// Gradients of the scalar `root` with respect to every parameter.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).dim(), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut out: Vec<Option<Array2<f64>>> = (0..self.params.len()).map(|_| None).collect();
        grads[root.0] = Some(Array2::ones((1, 1)));

        fn acc(grads: &mut [Option<Array2<f64>>], v: Var, delta: Array2<f64>) {
            match &mut grads[v.0] {
                Some(g) => *g += &delta,
                slot @ None => *slot = Some(delta),
            }
        }

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            match &node.op {
                Op::Param(id) => match &mut out[id.0] {
                    Some(p) => *p += &g,
                    slot @ None => *slot = Some(g),
                },
                Op::Const => {}
                Op::MatMul(a, b) => {
                    acc(&mut grads, *a, g.dot(&self.value(*b).t()));
                    acc(&mut grads, *b, self.value(*a).t().dot(&g));
                }
                Op::AddBias(x, b) => {
                    acc(&mut grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads, *x, g);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, -&g);
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    acc(&mut grads, *a, &g * self.value(*b));
                    acc(&mut grads, *b, &g * self.value(*a));
                }
                Op::MulConst(x, c) => acc(&mut grads, *x, &g * c),
                Op::Scale(x, k) => acc(&mut grads, *x, g * *k),
                Op::AddScalar(x) => acc(&mut grads, *x, g),
                Op::Relu(x) => {
                    let mut d = g;
                    ndarray::Zip::from(&mut d).and(self.value(*x)).for_each(|d, &a| {
                        if a <= 0.0 {
                            *d = 0.0;
                        }
                    });
                    acc(&mut grads, *x, d);
                }
                Op::Tanh(x) => {
                    let y = node.value.as_ref().expect("tanh value");
                    acc(&mut grads, *x, &g * &y.mapv(|t| 1.0 - t * t));
                }
                Op::Sigmoid(x) => {
                    let y = node.value.as_ref().expect("sigmoid value");
                    acc(&mut grads, *x, &g * &y.mapv(|t| t * (1.0 - t)));
                }
                Op::Exp(x) => {
                    let y = node.value.as_ref().expect("exp value");
                    acc(&mut grads, *x, &g * y);
                }
                Op::SliceCols(x, start, end) => {
                    let mut d = Array2::zeros(self.value(*x).dim());
                    d.slice_mut(s![.., *start..*end]).assign(&g);
                    acc(&mut grads, *x, d);
                }
                Op::Concat(parts) => {
                    let mut col = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        acc(&mut grads, *p, g.slice(s![.., col..col + w]).to_owned());
                        col += w;
                    }
                }
                Op::SparseRows(id, rows) => {
                    let slot = out[id.0].get_or_insert_with(|| Array2::zeros(self.params.get(*id).dim()));
                    for (b, active) in rows.iter().enumerate() {
                        for &r in active {
                            let mut dst = slot.row_mut(r);
                            dst += &g.row(b);
                        }
                    }
                }
                Op::LogSoftmax(x) => {
                    let y = node.value.as_ref().expect("log-softmax value");
                    let total = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                    let d = &g - &(y.mapv(f64::exp) * &total);
                    acc(&mut grads, *x, d);
                }
                Op::Square(x) => acc(&mut grads, *x, &g * &(self.value(*x) * 2.0)),
                Op::SumCols(x) => {
                    let d = g.broadcast(self.value(*x).dim()).expect("column broadcast").to_owned();
                    acc(&mut grads, *x, d);
                }
                Op::Sum(x) => acc(&mut grads, *x, Array2::from_elem(self.value(*x).dim(), g[[0, 0]])),
            }
        }
        Gradients(out)
    }
}

/// One-hot rows as a dense `[len(indices), width]` matrix.
pub fn one_hot_rows(indices: &[usize], width: usize) -> Array2<f64> {
    let mut m = Array2::zeros((indices.len(), width));
    for (r, &i) in indices.iter().enumerate() {
        m[[r, i]] = 1.0;
    }
    m
}

/// A column vector `[n, 1]`.
pub fn column(values: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((values.len(), 1), values.to_vec()).expect("shape matches length")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn matmul_gradient_by_hand() {
        let mut store = ParamStore::new();
        let w = store.add("w", array![[1.0, 2.0], [3.0, 4.0]]);
        let mut tape = Tape::new(&store);
        let x = tape.constant(array![[1.0, -1.0]]);
        let wv = tape.param(w);
        let y = tape.matmul(x, wv);
        let loss = tape.sum(y);
        assert_eq!(tape.scalar(loss), (1.0 - 3.0) + (2.0 - 4.0));
        let g = tape.backward(loss);
        assert_eq!(g.get(w).unwrap(), &array![[1.0, 1.0], [-1.0, -1.0]]);
    }

    #[test]
    fn sparse_rows_match_dense_one_hot() {
        let mut store = ParamStore::new();
        let w = store.add("w", array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        let rows = Rc::new(vec![vec![0, 2], vec![1]]);
        let mut tape = Tape::new(&store);
        let y = tape.sparse_rows(w, rows);
        assert_eq!(tape.value(y), &array![[6.0, 8.0], [3.0, 4.0]]);
        let sq = tape.square(y);
        let loss = tape.sum(sq);
        let g = tape.backward(loss);
        // d/dW[i] = sum over rows b containing i of 2 y_b.
        assert_eq!(g.get(w).unwrap(), &array![[12.0, 16.0], [6.0, 8.0], [12.0, 16.0]]);
    }

    #[test]
    fn log_softmax_rows_normalise() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.constant(array![[1.0, 2.0, 3.0], [0.0, 0.0, 1000.0]]);
        let y = tape.log_softmax(x);
        for row in tape.value(y).rows() {
            assert!((row.iter().map(|v| v.exp()).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unused_parameters_have_no_gradient() {
        let mut store = ParamStore::new();
        let a = store.add("a", array![[2.0]]);
        let b = store.add("b", array![[3.0]]);
        let mut tape = Tape::new(&store);
        let av = tape.param(a);
        let loss = tape.square(av);
        let g = tape.backward(loss);
        assert_eq!(g.entry(a, 0, 0), 4.0);
        assert!(g.get(b).is_none());
    }

    #[test]
    fn exp_gradient_is_its_value() {
        let mut store = ParamStore::new();
        let a = store.add("a", array![[0.5, -1.0]]);
        let mut tape = Tape::new(&store);
        let av = tape.param(a);
        let e = tape.exp(av);
        let loss = tape.sum(e);
        let g = tape.backward(loss);
        assert!((g.entry(a, 0, 0) - 0.5f64.exp()).abs() < 1e-15);
        assert!((g.entry(a, 0, 1) - (-1.0f64).exp()).abs() < 1e-15);
    }
}
