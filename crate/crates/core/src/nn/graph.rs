//! Reverse-mode differentiation over a tape of matrix operations.
//!
//! A [`Graph`] is built fresh for every forward pass. Parameters enter as
//! leaves bound to a [`ParamSet`]; [`Graph::backward`] walks the tape in
//! reverse and returns gradients for every parameter and every input leaf.

use super::matrix::{dot, Matrix};
use super::params::{Gradients, ParamId, ParamSet};
use crate::error::{Error, Result};

/// Node handle on a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param,
    MatMul(usize, usize),
    /// `a · bᵀ`
    MatMulT(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// Adds a `1 × n` row to every row of `a`.
    AddRow(usize, usize),
    Scale(usize, f64),
    Tanh(usize),
    SoftmaxRows(usize),
    VStack(Vec<usize>),
    HStack(Vec<usize>),
    SliceRows(usize, usize),
    SliceCols(usize, usize, usize),
    MeanRows(usize),
    /// Multiplies row `i` of `a` by the scalar `w[i, 0]`.
    ScaleRows(usize, usize),
    Gather(usize, Vec<usize>),
    Sum(usize),
    Mean(usize),
    Transpose(usize),
    /// A value with no registered derivative.
    Opaque(&'static str, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

pub struct Graph<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    param_leaves: Vec<Option<usize>>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_leaves: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Input)
    }

    /// The leaf for a parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(idx) = self.param_leaves[id.0] {
            return Var(idx);
        }
        let v = self.push(self.params.get(id).clone(), Op::Param);
        self.param_leaves[id.0] = Some(v.0);
        v
    }

    /// Records a value whose derivative is not available. Backpropagating
    /// through it fails with [`Error::Capability`].
    pub fn opaque(&mut self, name: &'static str, value: Matrix, inputs: &[Var]) -> Var {
        self.push(value, Op::Opaque(name, inputs.iter().map(|v| v.0).collect()))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.rows() {
            return Err(Error::dim(format!("matmul {:?} by {:?}", x.shape(), y.shape())));
        }
        let out = x.matmul_unchecked(y);
        Ok(self.push(out, Op::MatMul(a.0, b.0)))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.cols() {
            return Err(Error::dim(format!("matmul_t {:?} by {:?}ᵀ", x.shape(), y.shape())));
        }
        let out = x.matmul_transposed(y);
        Ok(self.push(out, Op::MatMulT(a.0, b.0)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a.0, b.0)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a.0, b.0)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a.0, b.0)))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != x.cols() {
            return Err(Error::dim(format!(
                "row broadcast of {:?} onto {:?}",
                r.shape(),
                x.shape()
            )));
        }
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(r.data()) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(a.0, row.0)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).scale(s);
        self.push(out, Op::Scale(a.0, s))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a.0))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        for i in 0..out.rows() {
            softmax_in_place(out.row_mut(i));
        }
        self.push(out, Op::SoftmaxRows(a.0))
    }

    pub fn vstack(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Matrix> = parts.iter().map(|v| self.value(*v)).collect();
        let out = Matrix::vstack(&mats)?;
        Ok(self.push(out, Op::VStack(parts.iter().map(|v| v.0).collect())))
    }

    pub fn hstack(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Matrix> = parts.iter().map(|v| self.value(*v)).collect();
        let out = Matrix::hstack(&mats)?;
        Ok(self.push(out, Op::HStack(parts.iter().map(|v| v.0).collect())))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let x = self.value(a);
        if start > end || end > x.rows() {
            return Err(Error::dim(format!("row slice {start}..{end} of {:?}", x.shape())));
        }
        let out = x.slice_rows(start, end);
        Ok(self.push(out, Op::SliceRows(a.0, start)))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let x = self.value(a);
        if start > end || end > x.cols() {
            return Err(Error::dim(format!("col slice {start}..{end} of {:?}", x.shape())));
        }
        let out = x.slice_cols(start, end);
        Ok(self.push(out, Op::SliceCols(a.0, start, end)))
    }

    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.rows() == 0 {
            return Err(Error::domain("mean over zero rows"));
        }
        let mut out = vec![0.0; x.cols()];
        for i in 0..x.rows() {
            for (o, v) in out.iter_mut().zip(x.row(i)) {
                *o += v;
            }
        }
        let inv = 1.0 / x.rows() as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        Ok(self.push(Matrix::row_vector(&out), Op::MeanRows(a.0)))
    }

    pub fn scale_rows(&mut self, a: Var, weights: Var) -> Result<Var> {
        let (x, w) = (self.value(a), self.value(weights));
        if w.cols() != 1 || w.rows() != x.rows() {
            return Err(Error::dim(format!(
                "row weights {:?} for {:?}",
                w.shape(),
                x.shape()
            )));
        }
        let mut out = x.clone();
        for i in 0..out.rows() {
            let s = w[(i, 0)];
            out.row_mut(i).iter_mut().for_each(|v| *v *= s);
        }
        Ok(self.push(out, Op::ScaleRows(a.0, weights.0)))
    }

    /// Row lookup: output row `k` is `table[ids[k]]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if let Some(bad) = ids.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::domain(format!(
                "row id {bad} out of range for table with {} rows",
                t.rows()
            )));
        }
        let mut data = Vec::with_capacity(ids.len() * t.cols());
        for &i in ids {
            data.extend_from_slice(t.row(i));
        }
        let out = Matrix::from_raw(ids.len(), t.cols(), data);
        Ok(self.push(out, Op::Gather(table.0, ids.to_vec())))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Matrix::filled(1, 1, s), Op::Sum(a.0))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.data().len().max(1) as f64;
        let s = x.sum() / n;
        self.push(Matrix::filled(1, 1, s), Op::Mean(a.0))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a.0))
    }

    /// Mean of squared entries of `a - b`.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        Ok(self.mean(sq))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Backward> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::dim(format!(
                "backward needs a 1x1 loss, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(up) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input | Op::Param => {}
                Op::MatMul(a, b) => {
                    let da = up.matmul_transposed(&self.nodes[*b].value);
                    let db = self.nodes[*a].value.transposed_matmul(&up);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::MatMulT(a, b) => {
                    let da = up.matmul_unchecked(&self.nodes[*b].value);
                    let db = up.transposed_matmul(&self.nodes[*a].value);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, up.clone());
                    accumulate(&mut grads, *b, up.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, up.clone());
                    accumulate(&mut grads, *b, up.scale(-1.0));
                }
                Op::Mul(a, b) => {
                    let da = up.zip_map(&self.nodes[*b].value, |g, y| g * y)?;
                    let db = up.zip_map(&self.nodes[*a].value, |g, x| g * x)?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::AddRow(a, r) => {
                    let mut dr = vec![0.0; up.cols()];
                    for i in 0..up.rows() {
                        for (d, g) in dr.iter_mut().zip(up.row(i)) {
                            *d += g;
                        }
                    }
                    accumulate(&mut grads, *r, Matrix::row_vector(&dr));
                    accumulate(&mut grads, *a, up.clone());
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, up.scale(*s)),
                Op::Tanh(a) => {
                    let da = up.zip_map(&node.value, |g, y| g * (1.0 - y * y))?;
                    accumulate(&mut grads, *a, da);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut da = Matrix::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let (yr, gr) = (y.row(i), up.row(i));
                        let inner = dot(yr, gr);
                        for (j, d) in da.row_mut(i).iter_mut().enumerate() {
                            *d = yr[j] * (gr[j] - inner);
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::VStack(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let n = self.nodes[p].value.rows();
                        accumulate(&mut grads, p, up.slice_rows(start, start + n));
                        start += n;
                    }
                }
                Op::HStack(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let n = self.nodes[p].value.cols();
                        accumulate(&mut grads, p, up.slice_cols(start, start + n));
                        start += n;
                    }
                }
                Op::SliceRows(a, s) => {
                    let src = &self.nodes[*a].value;
                    let mut da = Matrix::zeros(src.rows(), src.cols());
                    for i in 0..up.rows() {
                        da.row_mut(s + i).copy_from_slice(up.row(i));
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::SliceCols(a, s, e) => {
                    let src = &self.nodes[*a].value;
                    let mut da = Matrix::zeros(src.rows(), src.cols());
                    for i in 0..up.rows() {
                        da.row_mut(i)[*s..*e].copy_from_slice(up.row(i));
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::MeanRows(a) => {
                    let src = &self.nodes[*a].value;
                    let inv = 1.0 / src.rows() as f64;
                    let mut da = Matrix::zeros(src.rows(), src.cols());
                    for i in 0..src.rows() {
                        for (d, g) in da.row_mut(i).iter_mut().zip(up.data()) {
                            *d = g * inv;
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::ScaleRows(a, w) => {
                    let (x, wv) = (&self.nodes[*a].value, &self.nodes[*w].value);
                    let mut da = up.clone();
                    let mut dw = Matrix::zeros(wv.rows(), 1);
                    for i in 0..x.rows() {
                        let s = wv[(i, 0)];
                        dw[(i, 0)] = dot(up.row(i), x.row(i));
                        da.row_mut(i).iter_mut().for_each(|v| *v *= s);
                    }
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *w, dw);
                }
                Op::Gather(t, ids) => {
                    let src = &self.nodes[*t].value;
                    let mut dt = Matrix::zeros(src.rows(), src.cols());
                    for (k, &i) in ids.iter().enumerate() {
                        for (d, g) in dt.row_mut(i).iter_mut().zip(up.row(k)) {
                            *d += g;
                        }
                    }
                    accumulate(&mut grads, *t, dt);
                }
                Op::Sum(a) => {
                    let (r, c) = self.nodes[*a].value.shape();
                    accumulate(&mut grads, *a, Matrix::filled(r, c, up[(0, 0)]));
                }
                Op::Mean(a) => {
                    let (r, c) = self.nodes[*a].value.shape();
                    let n = (r * c).max(1) as f64;
                    accumulate(&mut grads, *a, Matrix::filled(r, c, up[(0, 0)] / n));
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, up.transpose()),
                Op::Opaque(name, inputs) => {
                    if !inputs.is_empty() {
                        return Err(Error::Capability(format!(
                            "no derivative registered for `{name}`"
                        )));
                    }
                }
            }
            grads[idx] = Some(up);
        }

        Ok(Backward { grads })
    }

    /// Gradients of `loss` for every parameter in the bound set. Parameters
    /// that did not take part in the graph receive zeros.
    pub fn param_gradients(&self, backward: &Backward) -> Gradients {
        let mut out = self.params.zeros_like();
        for (pid, leaf) in self.param_leaves.iter().enumerate() {
            if let Some(g) = leaf.and_then(|idx| backward.grads[idx].as_ref()) {
                out[pid] = g.clone();
            }
        }
        Gradients(out)
    }
}

/// Result of a reverse sweep.
pub struct Backward {
    grads: Vec<Option<Matrix>>,
}

impl Backward {
    /// Gradient with respect to any node, `None` if the loss does not
    /// depend on it.
    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn accumulate(grads: &mut [Option<Matrix>], idx: usize, g: Matrix) {
    match &mut grads[idx] {
        Some(existing) => existing.add_assign_scaled(&g, 1.0),
        slot @ None => *slot = Some(g),
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Convenience: evaluates `build` on a fresh graph and returns the scalar
/// loss with its parameter gradients.
pub fn value_and_grad<F>(params: &ParamSet, build: F) -> Result<(f64, Gradients)>
where
    F: FnOnce(&mut Graph<'_>) -> Result<Var>,
{
    let mut g = Graph::new(params);
    let loss = build(&mut g)?;
    let value = g.value(loss)[(0, 0)];
    let back = g.backward(loss)?;
    Ok((value, g.param_gradients(&back)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_squared_norm() {
        let mut p = ParamSet::new();
        let x = p.add("x", Matrix::row_vector(&[3.0, 4.0])).unwrap();
        let (v, grads) = value_and_grad(&p, |g| {
            let xv = g.param(x);
            let sq = g.mul(xv, xv)?;
            let s = g.sum(sq);
            Ok(g.scale(s, 0.5))
        })
        .unwrap();
        assert_eq!(v, 12.5);
        assert_eq!(grads.get(x).data(), &[3.0, 4.0]);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut p = ParamSet::new();
        let x = p.add("x", Matrix::row_vector(&[1.0, -2.0])).unwrap();
        let (_, grads) = value_and_grad(&p, |g| {
            let _unused = g.param(x);
            let c = g.input(Matrix::filled(1, 1, 7.0));
            Ok(c)
        })
        .unwrap();
        assert_eq!(grads.get(x).data(), &[0.0, 0.0]);
    }

    #[test]
    fn opaque_nodes_block_backprop() {
        let mut p = ParamSet::new();
        let x = p.add("x", Matrix::row_vector(&[1.0])).unwrap();
        let mut g = Graph::new(&p);
        let xv = g.param(x);
        let clipped = g.opaque("clip", Matrix::row_vector(&[1.0]), &[xv]);
        let loss = g.sum(clipped);
        assert!(matches!(g.backward(loss), Err(Error::Capability(_))));
    }

    #[test]
    fn backward_needs_scalar() {
        let p = ParamSet::new();
        let mut g = Graph::new(&p);
        let v = g.input(Matrix::zeros(2, 1));
        assert!(matches!(g.backward(v), Err(Error::Dimension(_))));
    }

    #[test]
    fn gather_scatters_repeated_rows() {
        let mut p = ParamSet::new();
        let t = p.add("t", Matrix::zeros(3, 2)).unwrap();
        let (_, grads) = value_and_grad(&p, |g| {
            let tv = g.param(t);
            let rows = g.gather(tv, &[2, 0, 2])?;
            Ok(g.sum(rows))
        })
        .unwrap();
        assert_eq!(grads.get(t).data(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }
}
