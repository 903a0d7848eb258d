//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation as it is evaluated. Calling
//! [`Tape::backward`] on a scalar (1 × 1) node walks the record in reverse
//! and returns the gradient of that scalar with respect to every node.
//! Scalars, row vectors and column vectors are all 2-D matrices.

use nalgebra::DMatrix;
use ndarray::{Array2, Axis, Zip};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    BroadcastRows(Var),
    BroadcastCols(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Ln(Var),
    Powf(Var, f64),
    Square(Var),
    Softplus(Var),
    Sum(Var),
    SumCols(Var),
    MeanRows(Var),
    Transpose(Var),
    ConcatCols(Var, Var),
    SliceCols(Var, usize),
    PermuteCols(Var, Vec<usize>),
    LogAbsDet(Var),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros if `v` did not influence the output.
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Value of a 1 × 1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant_scalar(&mut self, x: f64) -> Var {
        self.leaf(Array2::from_elem((1, 1), x))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    /// Elementwise product of equally shaped matrices.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    /// `a (n × d) + row (1 × d)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    /// `a (n × d) ⊙ row (1 × d)` broadcast over rows.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) * self.value(row);
        self.push(v, Op::MulRow(a, row))
    }

    /// `a (n × d) ⊙ col (n × 1)` broadcast over columns.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let v = self.value(a) * self.value(col);
        self.push(v, Op::MulCol(a, col))
    }

    /// Repeats a 1 × d row `n` times.
    pub fn broadcast_rows(&mut self, row: Var, n: usize) -> Var {
        let r = self.value(row);
        let v = r.broadcast((n, r.ncols())).expect("row vector").to_owned();
        self.push(v, Op::BroadcastRows(row))
    }

    /// Repeats an n × 1 column `d` times.
    pub fn broadcast_cols(&mut self, col: Var, d: usize) -> Var {
        let c = self.value(col);
        let v = c.broadcast((c.nrows(), d)).expect("column vector").to_owned();
        self.push(v, Op::BroadcastCols(col))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a) * s;
        self.push(v, Op::Scale(a, s))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a) + s;
        self.push(v, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::ln);
        self.push(v, Op::Ln(a))
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        let v = self.value(a).mapv(|x| x.powf(p));
        self.push(v, Op::Powf(a, p))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.powf(a, 0.5)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * x);
        self.push(v, Op::Square(a))
    }

    /// `ln(1 + e^x)`, evaluated stably.
    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(softplus);
        self.push(v, Op::Softplus(a))
    }

    /// Sum of all entries, as a 1 × 1 node.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Row sums as an n × 1 column.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(v, Op::SumCols(a))
    }

    /// Column means as a 1 × d row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self
            .value(a)
            .mean_axis(Axis(0))
            .expect("non-empty matrix")
            .insert_axis(Axis(0));
        self.push(v, Op::MeanRows(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let v = ndarray::concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()])
            .expect("row counts must match");
        self.push(v, Op::ConcatCols(a, b))
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self
            .value(a)
            .slice(ndarray::s![.., start..end])
            .to_owned();
        self.push(v, Op::SliceCols(a, start))
    }

    /// Output column `j` is input column `perm[j]`.
    pub fn permute_cols(&mut self, a: Var, perm: &[usize]) -> Var {
        let v = self.value(a).select(Axis(1), perm);
        self.push(v, Op::PermuteCols(a, perm.to_vec()))
    }

    /// `log |det a|` of a square matrix, as a 1 × 1 node.
    pub fn log_abs_det(&mut self, a: Var) -> Var {
        let m = to_nalgebra(self.value(a));
        let det = m.lu().determinant();
        let v = Array2::from_elem((1, 1), det.abs().ln());
        self.push(v, Op::LogAbsDet(a))
    }

    /// Gradients of the 1 × 1 node `out` with respect to every node.
    pub fn backward(&self, out: Var) -> Gradients {
        assert_eq!(self.shape(out), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; out.0 + 1];
        grads[out.0] = Some(Array2::ones((1, 1)));
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        Gradients { grads }
    }

    fn propagate(&self, i: usize, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                accumulate(grads, *a, g.dot(&self.value(*b).t()));
                accumulate(grads, *b, self.value(*a).t().dot(g));
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, -g);
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, g * self.value(*b));
                accumulate(grads, *b, g * self.value(*a));
            }
            Op::AddRow(a, r) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *r, sum_rows(g));
            }
            Op::MulRow(a, r) => {
                accumulate(grads, *a, g * self.value(*r));
                accumulate(grads, *r, sum_rows(&(g * self.value(*a))));
            }
            Op::MulCol(a, c) => {
                accumulate(grads, *a, g * self.value(*c));
                let gc = (g * self.value(*a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                accumulate(grads, *c, gc);
            }
            Op::BroadcastRows(r) => accumulate(grads, *r, sum_rows(g)),
            Op::BroadcastCols(c) => {
                accumulate(grads, *c, g.sum_axis(Axis(1)).insert_axis(Axis(1)));
            }
            Op::Scale(a, s) => accumulate(grads, *a, g * *s),
            Op::AddScalar(a) => accumulate(grads, *a, g.clone()),
            Op::Relu(a) => {
                let mut ga = g.clone();
                Zip::from(&mut ga).and(self.value(*a)).for_each(|g, &x| {
                    if x <= 0.0 {
                        *g = 0.0
                    }
                });
                accumulate(grads, *a, ga);
            }
            Op::Tanh(a) => {
                let mut ga = g.clone();
                Zip::from(&mut ga)
                    .and(&node.value)
                    .for_each(|g, &y| *g *= 1.0 - y * y);
                accumulate(grads, *a, ga);
            }
            Op::Exp(a) => accumulate(grads, *a, g * &node.value),
            Op::Ln(a) => accumulate(grads, *a, g / self.value(*a)),
            Op::Powf(a, p) => {
                let mut ga = g.clone();
                Zip::from(&mut ga)
                    .and(self.value(*a))
                    .for_each(|g, &x| *g *= p * x.powf(p - 1.0));
                accumulate(grads, *a, ga);
            }
            Op::Square(a) => accumulate(grads, *a, g * self.value(*a) * 2.0),
            Op::Softplus(a) => {
                let mut ga = g.clone();
                Zip::from(&mut ga)
                    .and(self.value(*a))
                    .for_each(|g, &x| *g *= sigmoid(x));
                accumulate(grads, *a, ga);
            }
            Op::Sum(a) => accumulate(grads, *a, Array2::from_elem(self.shape(*a), g[[0, 0]])),
            Op::SumCols(a) => {
                let ga = g.broadcast(self.shape(*a)).expect("column").to_owned();
                accumulate(grads, *a, ga);
            }
            Op::MeanRows(a) => {
                let (n, d) = self.shape(*a);
                let ga = (g / n as f64).broadcast((n, d)).expect("row").to_owned();
                accumulate(grads, *a, ga);
            }
            Op::Transpose(a) => accumulate(grads, *a, g.t().to_owned()),
            Op::ConcatCols(a, b) => {
                let da = self.shape(*a).1;
                accumulate(grads, *a, g.slice(ndarray::s![.., ..da]).to_owned());
                accumulate(grads, *b, g.slice(ndarray::s![.., da..]).to_owned());
            }
            Op::SliceCols(a, start) => {
                let mut ga = Array2::zeros(self.shape(*a));
                let w = g.ncols();
                ga.slice_mut(ndarray::s![.., *start..*start + w]).assign(g);
                accumulate(grads, *a, ga);
            }
            Op::PermuteCols(a, perm) => {
                let mut ga = Array2::zeros(self.shape(*a));
                for (j, &src) in perm.iter().enumerate() {
                    let mut col = ga.column_mut(src);
                    col += &g.column(j);
                }
                accumulate(grads, *a, ga);
            }
            Op::LogAbsDet(a) => {
                let inv = to_nalgebra(self.value(*a))
                    .try_inverse()
                    .expect("log_abs_det of a singular matrix");
                let s = g[[0, 0]];
                let ga = Array2::from_shape_fn(self.shape(*a), |(i, j)| s * inv[(j, i)]);
                accumulate(grads, *a, ga);
            }
        }
    }
}

fn sum_rows(g: &Array2<f64>) -> Array2<f64> {
    g.sum_axis(Axis(0)).insert_axis(Axis(0))
}

fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut grads[v.0] {
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

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn to_nalgebra(a: &Array2<f64>) -> DMatrix<f64> {
    let (r, c) = a.dim();
    DMatrix::from_fn(r, c, |i, j| a[[i, j]])
}

pub(crate) fn from_nalgebra(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}
