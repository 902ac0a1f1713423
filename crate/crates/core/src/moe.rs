//! Cross-Scale mixture of experts over the conditioned sequence.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{linear_forward, mlp_forward, softmax, Graph, Linear, Matrix, Mlp, ParamSet, Var};
use crate::state::ConditionedSequence;

pub const NUM_EXPERTS: usize = 3;
pub const EXPERT_NAMES: [&str; NUM_EXPERTS] = ["visual", "state", "force"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RoutingMode {
    #[default]
    Soft,
    Top1,
}

impl fmt::Display for RoutingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Soft => "soft",
            Self::Top1 => "top1",
        })
    }
}

impl FromStr for RoutingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft" => Ok(Self::Soft),
            "top1" => Ok(Self::Top1),
            _ => Err(Error::domain(format!("unknown routing mode `{s}`"))),
        }
    }
}

/// Which modality token groups feed the mixture. The state span is always kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationMask {
    pub enable_vm: bool,
    pub enable_fm: bool,
}

impl Default for AblationMask {
    fn default() -> Self {
        Self {
            enable_vm: true,
            enable_fm: true,
        }
    }
}

impl AblationMask {
    /// Row indices of `seq` that survive the mask, in order.
    pub fn kept_rows(&self, seq: &ConditionedSequence) -> Vec<usize> {
        let s = &seq.spans;
        let mut rows = Vec::with_capacity(s.total());
        if self.enable_vm {
            rows.extend(s.context.clone());
        }
        rows.extend(s.state.clone());
        if self.enable_fm {
            rows.extend(s.bypass.clone());
        }
        rows
    }
}

/// One-hot at the arg-max (lowest index wins ties) or the weights unchanged.
pub fn top1_route(weights: [f64; NUM_EXPERTS], mode: RoutingMode) -> [f64; NUM_EXPERTS] {
    match mode {
        RoutingMode::Soft => weights,
        RoutingMode::Top1 => {
            let mut best = 0;
            for m in 1..NUM_EXPERTS {
                if weights[m] > weights[best] {
                    best = m;
                }
            }
            std::array::from_fn(|m| if m == best { 1.0 } else { 0.0 })
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExpertBank {
    pub experts: [Mlp; NUM_EXPERTS],
    pub gate: Linear,
    pub d_model: usize,
}

impl ExpertBank {
    /// Experts are `D → 4D → D` MLPs; the gate is a linear map to three logits.
    pub fn new<R: Rng + ?Sized>(params: &mut ParamSet, name: &str, d_model: usize, rng: &mut R) -> Result<Self> {
        let dims = [d_model, 4 * d_model, d_model];
        let experts = [
            Mlp::new(params, &format!("{name}.{}", EXPERT_NAMES[0]), &dims, rng)?,
            Mlp::new(params, &format!("{name}.{}", EXPERT_NAMES[1]), &dims, rng)?,
            Mlp::new(params, &format!("{name}.{}", EXPERT_NAMES[2]), &dims, rng)?,
        ];
        let gate = Linear::new(params, &format!("{name}.gate"), d_model, NUM_EXPERTS, rng)?;
        Ok(Self {
            experts,
            gate,
            d_model,
        })
    }

    /// Gate weights for a single token, evaluated outside any graph.
    pub fn gate(&self, params: &ParamSet, token: &[f64]) -> Result<[f64; NUM_EXPERTS]> {
        if token.len() != self.d_model {
            return Err(Error::dim(format!("token width {} vs {}", token.len(), self.d_model)));
        }
        if token.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("non-finite token"));
        }
        let (w, b) = self.gate.weights(params);
        let logits = linear_forward(w, b, &Matrix::row_vector(token))?;
        let p = softmax(logits.data())?;
        Ok([p[0], p[1], p[2]])
    }

    /// Per-token expert outputs outside any graph: `[V, S, F]`.
    pub fn expert_outputs(&self, params: &ParamSet, token: &[f64]) -> Result<[Vec<f64>; NUM_EXPERTS]> {
        let x = Matrix::row_vector(token);
        let run = |m: &Mlp| mlp_forward(&m.weights(params), &x).map(Matrix::into_data);
        Ok([run(&self.experts[0])?, run(&self.experts[1])?, run(&self.experts[2])?])
    }

    /// Gate probabilities for every row of `x` as an `N × 3` node.
    pub fn gate_graph(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let logits = self.gate.forward(g, x)?;
        Ok(g.softmax_rows(logits))
    }

    /// `E_MoE = Σ_m w_m · Expert_m(token)` per kept token.
    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        seq: &ConditionedSequence,
        mask: AblationMask,
        mode: RoutingMode,
    ) -> Result<Var> {
        let rows = mask.kept_rows(seq);
        if rows.is_empty() {
            return Err(Error::domain("every modality is masked out"));
        }
        let x = if rows.len() == seq.spans.total() {
            seq.tokens
        } else {
            select_rows(g, seq, &rows)?
        };
        let weights = self.gate_graph(g, x)?;
        let weights = match mode {
            RoutingMode::Soft => weights,
            RoutingMode::Top1 => {
                let w = g.value(weights);
                let mut hard = Matrix::zeros(w.rows(), NUM_EXPERTS);
                for r in 0..w.rows() {
                    let row = w.row(r);
                    let one_hot = top1_route([row[0], row[1], row[2]], RoutingMode::Top1);
                    hard.row_mut(r).copy_from_slice(&one_hot);
                }
                g.input(hard)
            }
        };
        let mut out = None;
        for (m, expert) in self.experts.iter().enumerate() {
            let y = expert.forward(g, x)?;
            let wm = g.slice_cols(weights, m, m + 1)?;
            let term = g.scale_rows(y, wm)?;
            out = Some(match out {
                None => term,
                Some(acc) => g.add(acc, term)?,
            });
        }
        Ok(out.expect("three experts"))
    }
}

fn select_rows(g: &mut Graph<'_>, seq: &ConditionedSequence, rows: &[usize]) -> Result<Var> {
    let mut parts = Vec::new();
    let mut start = rows[0];
    let mut prev = rows[0];
    for &r in &rows[1..] {
        if r != prev + 1 {
            parts.push(g.slice_rows(seq.tokens, start, prev + 1)?);
            start = r;
        }
        prev = r;
    }
    parts.push(g.slice_rows(seq.tokens, start, prev + 1)?);
    if parts.len() == 1 {
        Ok(parts[0])
    } else {
        g.vstack(&parts)
    }
}
