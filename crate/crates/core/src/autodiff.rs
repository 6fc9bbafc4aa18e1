//! Reverse-mode automatic differentiation over dense row-major tensors.
//!
//! A [`Tape`] records every operation as it is evaluated. Nodes are appended
//! in evaluation order, which is already a topological order, so the
//! backward sweep is a single reverse pass. A tape supports one backward
//! pass; build a fresh tape for the next step.
//!
//! ```
//! use coupledgeom::autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
//! let sq = tape.square(x);
//! let loss = tape.sum(sq);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.wrt(x).data(), &[2.0, 4.0, 6.0]);
//! ```

use crate::error::{Error, Result};

/// Dense tensor of rank 1 or 2, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Contract(format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn scalar(v: f64) -> Self {
        Self { shape: vec![1], data: vec![v] }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Self { shape: shape.to_vec(), data: vec![v; shape.iter().product()] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(rows, cols)`, treating a vector as a single row.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => (1, self.data.len()),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let (_, c) = self.dims2();
        &self.data[i * c..(i + 1) * c]
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect() }
    }

    fn add_assign(&mut self, other: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in row.iter_mut().zip(&b[p * m..(p + 1) * m]) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    MatMul(Var, Var),
    Affine(Var, Var, Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Square(Var),
    Sum(Var),
    SumRows(Var),
    Mean(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sqrt(Var),
    ClampMin(Var, f64),
    Exp(Var),
    Ln(Var),
    Expm1(Var),
    Log1p(Var),
    CoupledLog(Var, f64),
    CoupledExp(Var, f64),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::MatMul(..) => "matmul",
            Op::Affine(..) => "affine",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Square(..) => "square",
            Op::Sum(..) => "sum",
            Op::SumRows(..) => "sum_rows",
            Op::Mean(..) => "mean",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Sqrt(..) => "sqrt",
            Op::ClampMin(..) => "clamp_min",
            Op::Exp(..) => "exp",
            Op::Ln(..) => "ln",
            Op::Expm1(..) => "expm1",
            Op::Log1p(..) => "log1p",
            Op::CoupledLog(..) => "coupled_log_p",
            Op::CoupledExp(..) => "coupled_exp_p",
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.grads[v.0].clone().unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

/// Append-only record of evaluated operations.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node { op, value, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { op: Op::Leaf, value: t, needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// An input treated as fixed.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { op: Op::Constant, value: t, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Contract(format!("{op}: shapes {sa:?} and {sb:?} differ")));
        }
        Ok(())
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(a, b, op.name())?;
        let v = self.value(a).zip(self.value(b), f);
        Ok(self.push(op, v, &[a, b]))
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let v = self.value(a).map(f);
        self.push(op, v, &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Div(a, b), |x, y| x / y)
    }

    /// `(n×k)·(k×m)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.value(a).dims2();
        let (k2, m) = self.value(b).dims2();
        if k != k2 {
            return Err(Error::Contract(format!("matmul: inner dimensions {k} and {k2} differ")));
        }
        let data = matmul(self.value(a).data(), self.value(b).data(), n, k, m);
        Ok(self.push(Op::MatMul(a, b), Tensor { shape: vec![n, m], data }, &[a, b]))
    }

    /// `x·W + b` with `b` broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (n, k) = self.value(x).dims2();
        let (k2, m) = self.value(w).dims2();
        if k != k2 || self.value(b).len() != m {
            return Err(Error::Contract(format!(
                "affine: x is {n}x{k}, W is {k2}x{m}, b has {} entries",
                self.value(b).len()
            )));
        }
        let mut data = matmul(self.value(x).data(), self.value(w).data(), n, k, m);
        let bias = self.value(b).data();
        for row in data.chunks_mut(m) {
            for (o, bv) in row.iter_mut().zip(bias) {
                *o += bv;
            }
        }
        Ok(self.push(Op::Affine(x, w, b), Tensor { shape: vec![n, m], data }, &[x, w, b]))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(a, Op::LeakyRelu(a, slope), |x| if x > 0.0 { x } else { slope * x })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), |x| {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        })
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    /// Sum of all entries, shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s), &[a])
    }

    /// Per-row sums, shape `[rows, 1]`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.value(a).dims2();
        let data = self.value(a).data().chunks(c).map(|row| row.iter().sum()).collect();
        self.push(Op::SumRows(a), Tensor { shape: vec![r, 1], data }, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let m = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Op::Mean(a), Tensor::scalar(m), &[a])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sqrt(a), f64::sqrt)
    }

    pub fn clamp_min(&mut self, a: Var, m: f64) -> Var {
        self.unary(a, Op::ClampMin(a, m), |x| x.max(m))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, Op::Ln(a), f64::ln)
    }

    pub fn expm1(&mut self, a: Var) -> Var {
        self.unary(a, Op::Expm1(a), f64::exp_m1)
    }

    pub fn log1p(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log1p(a), f64::ln_1p)
    }

    /// `ln_κ(x) = (x^κ − 1)/κ`; requires `x > 0`.
    pub fn coupled_log_p(&mut self, a: Var, kappa: f64) -> Result<Var> {
        if let Some(bad) = self.value(a).data().iter().find(|&&x| !(x > 0.0)) {
            return Err(Error::Domain(format!("coupled_log_p needs x > 0, got {bad}")));
        }
        Ok(self.unary(a, Op::CoupledLog(a, kappa), |x| {
            if kappa == 0.0 { x.ln() } else { (kappa * x.ln()).exp_m1() / kappa }
        }))
    }

    /// `exp_κ(u) = (1 + κu)_+^{1/κ}`.
    pub fn coupled_exp_p(&mut self, a: Var, kappa: f64) -> Var {
        self.unary(a, Op::CoupledExp(a, kappa), |u| crate::algebra::coupled_exp(u, kappa))
    }

    /// First node whose value contains a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<Error> {
        self.nodes.iter().enumerate().find(|(_, n)| n.value.data().iter().any(|v| !v.is_finite())).map(
            |(i, n)| Error::NonFinite { node: i, op: n.op.name() },
        )
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::Contract("backward already ran on this tape; record a new forward pass".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!("loss must be scalar, has shape {:?}", self.value(loss).shape())));
        }
        self.consumed = true;
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[loss.0] = Some(Tensor { shape: self.value(loss).shape().to_vec(), data: vec![1.0] });
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let out = &node.value;
            let mut send = |v: Var, t: Tensor| {
                if !self.nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&t),
                    slot => *slot = Some(t),
                }
            };
            let val = |v: Var| &self.nodes[v.0].value;
            match node.op {
                Op::Leaf | Op::Constant => {}
                Op::Add(a, b) => {
                    send(a, g.clone());
                    send(b, g.clone());
                }
                Op::Sub(a, b) => {
                    send(a, g.clone());
                    send(b, g.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    send(a, g.zip(val(b), |x, y| x * y));
                    send(b, g.zip(val(a), |x, y| x * y));
                }
                Op::Div(a, b) => {
                    send(a, g.zip(val(b), |x, y| x / y));
                    let gb = g.zip(out, |x, o| x * o).zip(val(b), |x, y| -x / y);
                    send(b, gb);
                }
                Op::MatMul(a, b) => {
                    let (nr, k) = val(a).dims2();
                    let (_, m) = val(b).dims2();
                    let bt = transpose(val(b).data(), k, m);
                    let at = transpose(val(a).data(), nr, k);
                    send(a, Tensor { shape: val(a).shape().to_vec(), data: matmul(g.data(), &bt, nr, m, k) });
                    send(b, Tensor { shape: val(b).shape().to_vec(), data: matmul(&at, g.data(), k, nr, m) });
                }
                Op::Affine(x, w, b) => {
                    let (nr, k) = val(x).dims2();
                    let (_, m) = val(w).dims2();
                    let wt = transpose(val(w).data(), k, m);
                    let xt = transpose(val(x).data(), nr, k);
                    send(x, Tensor { shape: val(x).shape().to_vec(), data: matmul(g.data(), &wt, nr, m, k) });
                    send(w, Tensor { shape: val(w).shape().to_vec(), data: matmul(&xt, g.data(), k, nr, m) });
                    let mut gb = vec![0.0; m];
                    for row in g.data().chunks(m) {
                        for (o, v) in gb.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    send(b, Tensor { shape: val(b).shape().to_vec(), data: gb });
                }
                Op::LeakyRelu(a, s) => send(a, g.zip(val(a), |x, y| if y > 0.0 { x } else { s * x })),
                Op::Sigmoid(a) => send(a, g.zip(out, |x, o| x * o * (1.0 - o))),
                Op::Square(a) => send(a, g.zip(val(a), |x, y| 2.0 * x * y)),
                Op::Sum(a) => send(a, Tensor::full(val(a).shape(), g.item())),
                Op::SumRows(a) => {
                    let (_, c) = val(a).dims2();
                    let data = g.data().iter().flat_map(|&v| std::iter::repeat_n(v, c)).collect();
                    send(a, Tensor { shape: val(a).shape().to_vec(), data });
                }
                Op::Mean(a) => send(a, Tensor::full(val(a).shape(), g.item() / val(a).len() as f64)),
                Op::Scale(a, c) => send(a, g.map(|x| c * x)),
                Op::AddScalar(a) => send(a, g.clone()),
                Op::Sqrt(a) => send(a, g.zip(out, |x, o| x / (2.0 * o))),
                Op::ClampMin(a, m) => send(a, g.zip(val(a), |x, y| if y > m { x } else { 0.0 })),
                Op::Exp(a) => send(a, g.zip(out, |x, o| x * o)),
                Op::Ln(a) => send(a, g.zip(val(a), |x, y| x / y)),
                Op::Expm1(a) => send(a, g.zip(out, |x, o| x * (o + 1.0))),
                Op::Log1p(a) => send(a, g.zip(val(a), |x, y| x / (1.0 + y))),
                Op::CoupledLog(a, k) => send(a, g.zip(val(a), |x, y| x * ((k - 1.0) * y.ln()).exp())),
                Op::CoupledExp(a, k) => send(
                    a,
                    g.zip(val(a), |x, u| {
                        if crate::algebra::in_support(u, k) {
                            x * crate::algebra::coupled_exp_power(u, k, 1.0 - k)
                        } else {
                            0.0
                        }
                    }),
                ),
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads, shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect() })
    }
}
