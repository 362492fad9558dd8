//! Reverse-mode automatic differentiation over a define-by-run tape.
//!
//! Every operation appends a node holding its forward value and the handles
//! of its inputs. Nodes are only ever appended, so inputs always precede the
//! nodes that consume them and a single reverse sweep visits the graph in
//! topological order.
//!
//! ```
//! use mgan::autodiff::Tape;
//! use mgan::Tensor;
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.leaf(Tensor::scalar(3.0));
//! let y = tape.mul(x, x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().item().unwrap(), 6.0);
//! ```
//!
//! A tape is consumed by [`Tape::backward`]; build a fresh one per step.

use crate::error::{Error, Result};
use crate::tensor::{matmul_nt, matmul_nt_add, matmul_tn, matmul_tn_add, Real, Tensor, LOG_FLOOR};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    MatMul(Var, Var),
    AddRowBias(Var, Var),
    Affine(Var, Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Log(Var),
    Sum(Var),
    Mean(Var),
    LogSoftmax(Var),
    Pick(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
}

#[derive(Debug)]
struct Node<T: Real> {
    value: Tensor<T>,
    op: Op,
    tracked: bool,
}

/// Recorded computation graph.
#[derive(Debug)]
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-node gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T: Real = f32> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the root with respect to `var`. Only leaves and the root
    /// keep their gradients; `None` for constants, intermediate nodes and
    /// leaves the root does not depend on.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Tracked input: gradients flow back to it.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(value, Op::Input, true)
    }

    /// Untracked input.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(value, Op::Input, false)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    /// Moves a value out of the tape, leaving an empty tensor behind.
    /// Later operations on `var` see the empty value.
    pub fn take_value(&mut self, var: Var) -> Tensor<T> {
        std::mem::replace(&mut self.nodes[var.0].value, Tensor::zeros(0, 0))
    }

    pub fn is_tracked(&self, var: Var) -> bool {
        self.nodes[var.0].tracked
    }

    fn push_raw(&mut self, value: Tensor<T>, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<T>, op: Op, inputs: &[Var]) -> Var {
        let tracked = inputs.iter().any(|v| self.nodes[v.0].tracked);
        self.push_raw(value, op, tracked)
    }

    fn check(&self, var: Var) -> Result<()> {
        if var.0 >= self.nodes.len() {
            return Err(Error::contract(format!(
                "variable #{} is not on this tape ({} nodes)",
                var.0,
                self.nodes.len()
            )));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let value = crate::tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    /// Adds a `1 x n` bias row to every row of an `m x n` input.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        self.check(x)?;
        self.check(bias)?;
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::Shape {
                op: "add_row_bias",
                left: xv.shape(),
                right: bv.shape(),
            });
        }
        let mut out = xv.clone();
        let b = bv.data();
        for row in out.data_mut().chunks_exact_mut(b.len()) {
            for (o, &bi) in row.iter_mut().zip(b) {
                *o += bi;
            }
        }
        Ok(self.push(out, Op::AddRowBias(x, bias), &[x, bias]))
    }

    /// Affine map `x * w + b` as a single node.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.check(x)?;
        self.check(w)?;
        self.check(b)?;
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.cols() != wv.rows() {
            return Err(Error::Shape {
                op: "affine",
                left: xv.shape(),
                right: wv.shape(),
            });
        }
        if bv.rows() != 1 || bv.cols() != wv.cols() {
            return Err(Error::Shape {
                op: "affine",
                left: wv.shape(),
                right: bv.shape(),
            });
        }
        let value = crate::tensor::affine(xv, wv, bv);
        Ok(self.push(value, Op::Affine(x, w, b), &[x, w, b]))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(T, T) -> T,
        op: Op,
    ) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let value = self.value(a).zip_map(self.value(b), name, f)?;
        Ok(self.push(value, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op) -> Result<Var> {
        self.check(x)?;
        let value = self.value(x).map(f);
        Ok(self.push(value, op, &[x]))
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| -v, Op::Neg(x))
    }

    pub fn scale(&mut self, x: Var, alpha: f64) -> Result<Var> {
        let a = T::from_f64(alpha);
        self.unary(x, move |v| v * a, Op::Scale(x, alpha))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let c_t = T::from_f64(c);
        self.unary(x, move |v| v + c_t, Op::AddScalar(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| if v > T::ZERO { v } else { T::ZERO }, Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let s = T::from_f64(slope);
        self.unary(
            x,
            move |v| if v >= T::ZERO { v } else { v * s },
            Op::LeakyRelu(x, slope),
        )
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, T::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, T::sigmoid, Op::Sigmoid(x))
    }

    /// `ln(max(x, 1e-12))`; NaN inputs are rejected.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        if self.value(x).data().iter().any(|v| v.to_f64().is_nan()) {
            return Err(Error::Domain {
                op: "log",
                detail: "NaN input".into(),
            });
        }
        self.unary(x, T::safe_ln, Op::Log(x))
    }

    fn nonempty(&self, x: Var, op: &'static str) -> Result<()> {
        self.check(x)?;
        if self.value(x).is_empty() {
            return Err(Error::Domain {
                op,
                detail: "empty tensor".into(),
            });
        }
        Ok(())
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.nonempty(x, "sum")?;
        let s = T::from_f64(self.value(x).sum_f64());
        Ok(self.push(Tensor::scalar(s), Op::Sum(x), &[x]))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.nonempty(x, "mean")?;
        let v = self.value(x);
        let m = T::from_f64(v.sum_f64() / v.len() as f64);
        Ok(self.push(Tensor::scalar(m), Op::Mean(x), &[x]))
    }

    /// Row-wise log-softmax with max subtraction.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        self.nonempty(x, "log_softmax")?;
        let value = log_softmax_rows(self.value(x));
        Ok(self.push(value, Op::LogSoftmax(x), &[x]))
    }

    /// Selects `x[i, index[i]]` for every row, producing an `n x 1` column.
    pub fn pick(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        self.check(x)?;
        let xv = self.value(x);
        if index.len() != xv.rows() {
            return Err(Error::Shape {
                op: "pick",
                left: xv.shape(),
                right: (index.len(), 1),
            });
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= xv.cols()) {
            return Err(Error::contract(format!(
                "pick: column {bad} out of range for {} columns",
                xv.cols()
            )));
        }
        let data = index
            .iter()
            .enumerate()
            .map(|(r, &c)| xv.get(r, c))
            .collect();
        let value = Tensor::from_vec(index.len(), 1, data)?;
        Ok(self.push(value, Op::Pick(x, index.to_vec()), &[x]))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        for &p in parts {
            self.check(p)?;
        }
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::concat_rows(&tensors)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Rows `start..end` of `x`.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        self.check(x)?;
        let xv = self.value(x);
        if start > end || end > xv.rows() {
            return Err(Error::contract(format!(
                "slice_rows: {start}..{end} out of range for {} rows",
                xv.rows()
            )));
        }
        let c = xv.cols();
        let value = Tensor::from_vec(end - start, c, xv.data()[start * c..end * c].to_vec())?;
        Ok(self.push(value, Op::SliceRows(x, start), &[x]))
    }

    /// For every input element of a piecewise operation (ReLU, leaky ReLU and
    /// the clamped log), which side of its breakpoint it lies on. Two
    /// evaluations of the same graph with equal patterns lie on the same
    /// smooth piece.
    pub fn kink_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            let (x, at) = match node.op {
                Op::Relu(x) | Op::LeakyRelu(x, _) => (x, T::ZERO),
                Op::Log(x) => (x, T::from_f64(LOG_FLOOR)),
                _ => continue,
            };
            out.extend(self.value(x).data().iter().map(|&v| v > at));
        }
        out
    }

    /// Propagates d(root)/d(node) to every tracked node.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        self.check(root)?;
        let shape = self.value(root).shape();
        if shape != (1, 1) {
            return Err(Error::contract(format!(
                "backward root must be 1x1, got {}x{}",
                shape.0, shape.1
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(T::ONE));
        let mut root_grad = None;

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Input) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if i == root.0 {
                root_grad = Some(g.clone());
            }
            self.propagate(&node.op, &node.value, g, &mut grads);
        }
        if root_grad.is_some() {
            grads[root.0] = root_grad;
        }
        Ok(Gradients { grads })
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn propagate(&self, op: &Op, out: &Tensor<T>, mut g: Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        match op {
            Op::Input => {}
            Op::MatMul(a, b) => {
                if self.tracked(*a) {
                    match &mut grads[a.0] {
                        Some(acc) => matmul_nt_add(&g, self.value(*b), acc),
                        slot @ None => *slot = Some(matmul_nt(&g, self.value(*b))),
                    }
                }
                if self.tracked(*b) {
                    match &mut grads[b.0] {
                        Some(acc) => matmul_tn_add(self.value(*a), &g, acc),
                        slot @ None => *slot = Some(matmul_tn(self.value(*a), &g)),
                    }
                }
            }
            Op::Affine(x, w, b) => {
                if self.tracked(*b) {
                    accumulate(grads, *b, column_sums(&g));
                }
                if self.tracked(*x) {
                    match &mut grads[x.0] {
                        Some(acc) => matmul_nt_add(&g, self.value(*w), acc),
                        slot @ None => *slot = Some(matmul_nt(&g, self.value(*w))),
                    }
                }
                if self.tracked(*w) {
                    match &mut grads[w.0] {
                        Some(acc) => matmul_tn_add(self.value(*x), &g, acc),
                        slot @ None => *slot = Some(matmul_tn(self.value(*x), &g)),
                    }
                }
            }
            Op::AddRowBias(x, b) => {
                if self.tracked(*b) {
                    accumulate(grads, *b, column_sums(&g));
                }
                if self.tracked(*x) {
                    accumulate(grads, *x, g);
                }
            }
            Op::Add(a, b) => {
                if self.tracked(*b) {
                    if self.tracked(*a) {
                        accumulate(grads, *a, g.clone());
                    }
                    accumulate(grads, *b, g);
                } else if self.tracked(*a) {
                    accumulate(grads, *a, g);
                }
            }
            Op::Sub(a, b) => {
                if self.tracked(*b) {
                    accumulate(grads, *b, g.map(|v| -v));
                }
                if self.tracked(*a) {
                    accumulate(grads, *a, g);
                }
            }
            Op::Mul(a, b) => {
                if self.tracked(*a) {
                    let d = g.zip_map(self.value(*b), "mul", |x, y| x * y).expect("shape");
                    accumulate(grads, *a, d);
                }
                if self.tracked(*b) {
                    apply(&mut g, self.value(*a), |x, y| x * y);
                    accumulate(grads, *b, g);
                }
            }
            Op::Neg(x) => {
                g.data_mut().iter_mut().for_each(|v| *v = -*v);
                accumulate(grads, *x, g);
            }
            Op::Scale(x, alpha) => {
                let a = T::from_f64(*alpha);
                g.data_mut().iter_mut().for_each(|v| *v = *v * a);
                accumulate(grads, *x, g);
            }
            Op::AddScalar(x) => accumulate(grads, *x, g),
            Op::Relu(x) => {
                apply(&mut g, self.value(*x), |gv, xv| if xv > T::ZERO { gv } else { T::ZERO });
                accumulate(grads, *x, g);
            }
            Op::LeakyRelu(x, slope) => {
                let s = T::from_f64(*slope);
                apply(&mut g, self.value(*x), |gv, xv| if xv >= T::ZERO { gv } else { gv * s });
                accumulate(grads, *x, g);
            }
            Op::Tanh(x) => {
                apply(&mut g, out, |gv, y| gv * (T::ONE - y * y));
                accumulate(grads, *x, g);
            }
            Op::Sigmoid(x) => {
                apply(&mut g, out, |gv, y| gv * y * (T::ONE - y));
                accumulate(grads, *x, g);
            }
            Op::Log(x) => {
                let floor = T::from_f64(LOG_FLOOR);
                apply(&mut g, self.value(*x), |gv, xv| if xv > floor { gv / xv } else { T::ZERO });
                accumulate(grads, *x, g);
            }
            Op::Sum(x) => {
                let (r, c) = self.value(*x).shape();
                accumulate(grads, *x, Tensor::filled(r, c, g.data()[0]));
            }
            Op::Mean(x) => {
                let (r, c) = self.value(*x).shape();
                let v = T::from_f64(g.data()[0].to_f64() / (r * c) as f64);
                accumulate(grads, *x, Tensor::filled(r, c, v));
            }
            Op::LogSoftmax(x) => {
                // dx = g - softmax * rowsum(g)
                let cols = out.cols();
                for (drow, orow) in g.data_mut().chunks_exact_mut(cols).zip(out.data().chunks_exact(cols)) {
                    let mut total = T::ZERO;
                    for &v in drow.iter() {
                        total += v;
                    }
                    for (dv, &lp) in drow.iter_mut().zip(orow) {
                        *dv = *dv - lp.exp() * total;
                    }
                }
                accumulate(grads, *x, g);
            }
            Op::Pick(x, index) => {
                let (r, c) = self.value(*x).shape();
                let mut d = Tensor::zeros(r, c);
                for (row, &col) in index.iter().enumerate() {
                    d.set(row, col, g.data()[row]);
                }
                accumulate(grads, *x, d);
            }
            Op::ConcatRows(parts) => {
                let cols = g.cols();
                let mut offset = 0;
                for p in parts {
                    let rows = self.value(*p).rows();
                    if self.tracked(*p) {
                        let slice = &g.data()[offset * cols..(offset + rows) * cols];
                        match &mut grads[p.0] {
                            Some(acc) => {
                                for (e, &d) in acc.data_mut().iter_mut().zip(slice) {
                                    *e += d;
                                }
                            }
                            slot @ None => {
                                *slot = Some(Tensor::from_vec(rows, cols, slice.to_vec()).expect("shape"))
                            }
                        }
                    }
                    offset += rows;
                }
            }
            Op::SliceRows(x, start) => {
                let (r, c) = self.value(*x).shape();
                match &mut grads[x.0] {
                    Some(acc) => {
                        for (e, &d) in acc.data_mut()[start * c..].iter_mut().zip(g.data()) {
                            *e += d;
                        }
                    }
                    slot @ None => {
                        let mut d = Tensor::zeros(r, c);
                        d.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                        *slot = Some(d);
                    }
                }
            }
        }
    }
}

fn column_sums<T: Real>(g: &Tensor<T>) -> Tensor<T> {
    let cols = g.cols();
    let mut sums = vec![T::ZERO; cols];
    for row in g.data().chunks_exact(cols) {
        for (d, &v) in sums.iter_mut().zip(row) {
            *d += v;
        }
    }
    Tensor::from_vec(1, cols, sums).expect("row shape")
}

/// `g[i] = f(g[i], other[i])` in place.
fn apply<T: Real>(g: &mut Tensor<T>, other: &Tensor<T>, f: impl Fn(T, T) -> T) {
    debug_assert_eq!(g.shape(), other.shape());
    for (gv, &o) in g.data_mut().iter_mut().zip(other.data()) {
        *gv = f(*gv, o);
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], var: Var, delta: Tensor<T>) {
    match &mut grads[var.0] {
        Some(existing) => {
            for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                *e += *d;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}

/// Row-wise log-softmax of a plain tensor.
pub fn log_softmax_rows<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let cols = x.cols();
    let mut out = x.clone();
    if cols == 0 {
        return out;
    }
    for row in out.data_mut().chunks_exact_mut(cols) {
        let mut max = row[0];
        for &v in row.iter() {
            if v > max {
                max = v;
            }
        }
        let mut total = T::ZERO;
        for &v in row.iter() {
            total += (v - max).exp();
        }
        let lse = max + total.ln();
        for v in row.iter_mut() {
            *v = *v - lse;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_grad(f: impl Fn(&mut Tape<f64>, Var) -> Var, x0: f64) -> f64 {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(x0));
        let y = f(&mut tape, x);
        tape.backward(y).unwrap().get(x).unwrap().item().unwrap()
    }

    #[test]
    fn square_gradient() {
        assert_eq!(scalar_grad(|t, x| t.mul(x, x).unwrap(), 3.0), 6.0);
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        assert_eq!(scalar_grad(|t, x| t.sigmoid(x).unwrap(), 0.0), 0.25);
    }

    #[test]
    fn root_gradient_is_one() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let y = tape.scale(x, 4.0).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(y).unwrap().item().unwrap(), 1.0);
        assert_eq!(g.get(x).unwrap().item().unwrap(), 4.0);
    }

    #[test]
    fn elementwise_values() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::scalar(-1.0));
        let l = tape.leaky_relu(x, 0.2).unwrap();
        assert!((tape.value(l).item().unwrap() + 0.2).abs() < 1e-7);
        let m5 = tape.constant(Tensor::scalar(-5.0));
        let r = tape.relu(m5).unwrap();
        assert_eq!(tape.value(r).item().unwrap(), 0.0);
        let z = tape.constant(Tensor::scalar(0.0));
        let s = tape.sigmoid(z).unwrap();
        assert_eq!(tape.value(s).item().unwrap(), 0.5);
    }

    #[test]
    fn leaky_relu_subgradient_at_zero_is_one() {
        assert_eq!(scalar_grad(|t, x| t.leaky_relu(x, 0.2).unwrap(), 0.0), 1.0);
        assert_eq!(scalar_grad(|t, x| t.leaky_relu(x, 0.2).unwrap(), -0.5), 0.2);
    }

    #[test]
    fn log_clamps_and_rejects_nan() {
        let mut tape = Tape::<f64>::new();
        let z = tape.constant(Tensor::scalar(0.0));
        let l = tape.log(z).unwrap();
        assert!((tape.value(l).item().unwrap() - (1e-12f64).ln()).abs() < 1e-9);
        let n = tape.constant(Tensor::scalar(f64::NAN));
        assert!(matches!(tape.log(n), Err(Error::Domain { op: "log", .. })));
        assert_eq!(scalar_grad(|t, x| t.log(x).unwrap(), -1.0), 0.0);
    }

    #[test]
    fn reductions() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_vec(1, 4, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let m = tape.mean(x).unwrap();
        assert_eq!(tape.value(m).item().unwrap(), 2.5);
        let s = tape.sum(x).unwrap();
        assert_eq!(tape.value(s).item().unwrap(), 10.0);

        let eq = tape.constant(Tensor::filled(1, 8, 0.3));
        let ls = tape.log_softmax(eq).unwrap();
        for &v in tape.value(ls).data() {
            assert!((v - (1.0f64 / 8.0).ln()).abs() < 1e-12);
        }
        let ragged = tape.constant(Tensor::from_vec(1, 3, vec![10.0, -3.0, 0.5]).unwrap());
        let lr = tape.log_softmax(ragged).unwrap();
        let total: f64 = tape.value(lr).data().iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-6);

        let empty = tape.constant(Tensor::zeros(0, 3));
        assert!(matches!(tape.mean(empty), Err(Error::Domain { .. })));
    }

    #[test]
    fn backward_contract_errors() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(2, 2));
        let y = tape.scale(x, 2.0).unwrap();
        assert!(matches!(tape.backward(y), Err(Error::Contract(_))));

        let mut tape = Tape::<f64>::new();
        let _ = tape.leaf(Tensor::scalar(1.0));
        assert!(matches!(tape.backward(Var(7)), Err(Error::Contract(_))));
    }

    #[test]
    fn fused_affine_matches_matmul_plus_bias() {
        let x0 = Tensor::from_fn(4, 3, |i, j| (i as f64 * 0.7 - j as f64 * 0.4).sin());
        let w0 = Tensor::from_fn(3, 2, |i, j| (i as f64 + 2.0 * j as f64).cos());
        let b0 = Tensor::from_vec(1, 2, vec![0.3, -0.2]).unwrap();
        let run = |fused: bool| {
            let mut tape = Tape::<f64>::new();
            let (x, w, b) = (tape.leaf(x0.clone()), tape.leaf(w0.clone()), tape.leaf(b0.clone()));
            let y = if fused {
                tape.affine(x, w, b).unwrap()
            } else {
                let xw = tape.matmul(x, w).unwrap();
                tape.add_row_bias(xw, b).unwrap()
            };
            let t = tape.tanh(y).unwrap();
            let value = tape.value(t).clone();
            let s = tape.sum(t).unwrap();
            let g = tape.backward(s).unwrap();
            (value, [x, w, b].map(|v| g.get(v).unwrap().clone()))
        };
        let (fv, fg) = run(true);
        let (uv, ug) = run(false);
        assert!(fv.data().iter().zip(uv.data()).all(|(a, b)| (a - b).abs() < 1e-12));
        for (f, u) in fg.iter().zip(&ug) {
            assert!(f.data().iter().zip(u.data()).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let c = tape.constant(Tensor::scalar(2.0));
        let x = tape.leaf(Tensor::scalar(5.0));
        let y = tape.mul(c, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap().item().unwrap(), 2.0);
    }

    #[test]
    fn pick_slice_concat_route_gradients() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::from_vec(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let b = tape.leaf(Tensor::from_vec(1, 3, vec![7., 8., 9.]).unwrap());
        let cat = tape.concat_rows(&[a, b]).unwrap();
        let tail = tape.slice_rows(cat, 1, 3).unwrap();
        let picked = tape.pick(tail, &[2, 0]).unwrap();
        assert_eq!(tape.value(picked).data(), &[6.0, 7.0]);
        let s = tape.sum(picked).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[0., 0., 0., 0., 0., 1.]);
        assert_eq!(g.get(b).unwrap().data(), &[1., 0., 0.]);
    }
}
