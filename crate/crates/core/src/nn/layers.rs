use rand::Rng;

use super::graph::{softmax_in_place, Graph, Var};
use super::matrix::Matrix;
use super::params::{ParamId, ParamSet};
use crate::error::{Error, Result};

/// `input · weight + bias`, bias broadcast over rows.
pub fn linear_forward(weight: &Matrix, bias: &Matrix, input: &Matrix) -> Result<Matrix> {
    if input.cols() != weight.rows() {
        return Err(Error::dim(format!(
            "input has {} columns, weight has {} rows",
            input.cols(),
            weight.rows()
        )));
    }
    if bias.shape() != (1, weight.cols()) {
        return Err(Error::dim(format!(
            "bias {:?} for weight {:?}",
            bias.shape(),
            weight.shape()
        )));
    }
    let mut out = input.matmul_unchecked(weight);
    for i in 0..out.rows() {
        for (o, b) in out.row_mut(i).iter_mut().zip(bias.data()) {
            *o += b;
        }
    }
    Ok(out)
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::domain("softmax of an empty vector"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("softmax of non-finite logits"));
    }
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

/// `softmax(Q·Kᵀ/√d)·V`, row-wise.
pub fn scaled_dot_attention(queries: &Matrix, keys: &Matrix, values: &Matrix) -> Result<Matrix> {
    if keys.rows() == 0 || queries.rows() == 0 {
        return Err(Error::domain("attention over zero tokens"));
    }
    if queries.cols() != keys.cols() {
        return Err(Error::dim("queries and keys differ in feature width"));
    }
    if keys.rows() != values.rows() {
        return Err(Error::dim("keys and values differ in token count"));
    }
    let scale = 1.0 / (queries.cols() as f64).sqrt();
    let mut scores = queries.matmul_transposed(keys).scale(scale);
    for i in 0..scores.rows() {
        softmax_in_place(scores.row_mut(i));
    }
    Ok(scores.matmul_unchecked(values))
}

/// Alternating affine layers and `tanh`, no activation after the last layer.
pub fn mlp_forward(layers: &[(Matrix, Matrix)], input: &Matrix) -> Result<Matrix> {
    let mut x = input.clone();
    for (i, (w, b)) in layers.iter().enumerate() {
        x = linear_forward(w, b, &x)?;
        if i + 1 < layers.len() {
            x = x.map(f64::tanh);
        }
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = params.add_uniform(format!("{name}.weight"), in_dim, out_dim, in_dim, rng)?;
        let bias = params.add_uniform(format!("{name}.bias"), 1, out_dim, in_dim, rng)?;
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let h = g.matmul(x, w)?;
        g.add_row(h, b)
    }

    pub fn zero(&self, params: &mut ParamSet) {
        params.values_mut(self.weight).fill(0.0);
        params.values_mut(self.bias).fill(0.0);
    }

    pub fn weights<'a>(&self, params: &'a ParamSet) -> (&'a Matrix, &'a Matrix) {
        (params.get(self.weight), params.get(self.bias))
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims` lists layer widths including input and output.
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        dims: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::dim("an MLP needs at least input and output widths"));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(params, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, h)?;
            if i + 1 < self.layers.len() {
                h = g.tanh(h);
            }
        }
        Ok(h)
    }

    pub fn last(&self) -> &Linear {
        self.layers.last().expect("MLP has at least one layer")
    }

    pub fn weights(&self, params: &ParamSet) -> Vec<(Matrix, Matrix)> {
        self.layers
            .iter()
            .map(|l| (params.get(l.weight).clone(), params.get(l.bias).clone()))
            .collect()
    }
}

/// Multi-head attention with separate query and context inputs.
#[derive(Debug, Clone)]
pub struct Attention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl Attention {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::dim(format!("{heads} heads do not divide width {dim}")));
        }
        Ok(Self {
            query: Linear::new(params, &format!("{name}.q"), dim, dim, rng)?,
            key: Linear::new(params, &format!("{name}.k"), dim, dim, rng)?,
            value: Linear::new(params, &format!("{name}.v"), dim, dim, rng)?,
            output: Linear::new(params, &format!("{name}.o"), dim, dim, rng)?,
            heads,
            dim,
        })
    }

    /// `mask`, when given, is added to the score matrix before the softmax
    /// (large negative entries remove a key).
    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        queries: Var,
        context: Var,
        mask: Option<&Matrix>,
    ) -> Result<Var> {
        if g.shape(context).0 == 0 {
            return Err(Error::domain("attention over an empty context"));
        }
        let q = self.query.forward(g, queries)?;
        let k = self.key.forward(g, context)?;
        let v = self.value.forward(g, context)?;
        let head_dim = self.dim / self.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mask = mask.map(|m| g.input(m.clone()));

        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (s, e) = (h * head_dim, (h + 1) * head_dim);
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (g.slice_cols(q, s, e)?, g.slice_cols(k, s, e)?, g.slice_cols(v, s, e)?)
            };
            let scores = g.matmul_t(qh, kh)?;
            let mut scores = g.scale(scores, scale);
            if let Some(m) = mask {
                scores = g.add(scores, m)?;
            }
            let weights = g.softmax_rows(scores);
            outs.push(g.matmul(weights, vh)?);
        }
        let merged = if outs.len() == 1 { outs[0] } else { g.hstack(&outs)? };
        self.output.forward(g, merged)
    }
}

/// Additive mask that blocks attention to later positions.
pub fn causal_mask(n: usize) -> Matrix {
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            m[(i, j)] = -1e300;
        }
    }
    m
}
