//! Proprioceptive and force encoding, cross-modal conditioning and the
//! assembly of `E_cond = [E; E'_state; E_F]`.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{Pose, Wrench};
use crate::nn::{Attention, Graph, Linear, Matrix, ParamSet, Var};

pub const FORCE_SCALE: f64 = 100.0;
pub const TORQUE_SCALE: f64 = 15.0;

/// Force / 100 N and torque / 15 N·m, clipped to [-1, 1].
pub fn normalize_wrench(w: &Wrench) -> [f64; 6] {
    let a = w.to_array();
    std::array::from_fn(|i| {
        let s = if i < 3 { FORCE_SCALE } else { TORQUE_SCALE };
        (a[i] / s).clamp(-1.0, 1.0)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum InjectionVariant {
    VlmPathway,
    MultimodalEncoder,
    #[default]
    StateFusion,
}

impl InjectionVariant {
    pub const ALL: [InjectionVariant; 3] = [Self::VlmPathway, Self::MultimodalEncoder, Self::StateFusion];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::VlmPathway => "vlm_pathway",
            Self::MultimodalEncoder => "multimodal_encoder",
            Self::StateFusion => "state_fusion",
        }
    }
}

impl fmt::Display for InjectionVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InjectionVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::domain(format!("unknown injection variant `{s}`")))
    }
}

/// Where the force embedding enters the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Wiring {
    pub force_in_context: bool,
    pub force_state_token: bool,
    pub force_bypass: bool,
}

impl Wiring {
    pub const NO_FORCE: Wiring = Wiring {
        force_in_context: false,
        force_state_token: false,
        force_bypass: false,
    };

    pub fn state_tokens(&self) -> usize {
        1 + usize::from(self.force_state_token)
    }
}

pub fn apply_injection_variant(variant: InjectionVariant) -> Wiring {
    match variant {
        InjectionVariant::VlmPathway => Wiring {
            force_in_context: true,
            force_state_token: false,
            force_bypass: false,
        },
        InjectionVariant::MultimodalEncoder => Wiring {
            force_in_context: false,
            force_state_token: true,
            force_bypass: false,
        },
        InjectionVariant::StateFusion => Wiring {
            force_in_context: false,
            force_state_token: true,
            force_bypass: true,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Spans {
    pub context: Range<usize>,
    pub state: Range<usize>,
    pub bypass: Range<usize>,
}

impl Spans {
    pub fn total(&self) -> usize {
        self.bypass.end
    }
}

/// `E_cond` as a graph node with its segment boundaries.
#[derive(Debug, Clone)]
pub struct ConditionedSequence {
    pub tokens: Var,
    pub spans: Spans,
}

/// `E_cond = [E; E'_state; E_F]`. The bypass token is optional.
pub fn assemble_condition(
    g: &mut Graph<'_>,
    context: Var,
    state: Var,
    bypass: Option<Var>,
) -> Result<ConditionedSequence> {
    let (nc, d) = g.shape(context);
    let (ns, ds) = g.shape(state);
    if ds != d {
        return Err(Error::dim(format!("state width {ds} vs context width {d}")));
    }
    let mut parts = vec![context, state];
    let mut nb = 0;
    if let Some(b) = bypass {
        let (rows, db) = g.shape(b);
        if rows != 1 || db != d {
            return Err(Error::dim(format!("bypass must be 1×{d}, got {rows}×{db}")));
        }
        parts.push(b);
        nb = 1;
    }
    let tokens = g.vstack(&parts)?;
    Ok(ConditionedSequence {
        tokens,
        spans: Spans {
            context: 0..nc,
            state: nc..nc + ns,
            bypass: nc + ns..nc + ns + nb,
        },
    })
}

/// Meters to encoder units for positions (decimeters).
pub const POSITION_SCALE: f64 = 10.0;

/// Pose as encoder input: scaled position, unit quaternion.
pub fn pose_features(pose: &Pose) -> [f64; 7] {
    let mut x = pose.to_array();
    x[..3].iter_mut().for_each(|v| *v *= POSITION_SCALE);
    x
}

/// `φ_P`, `φ_F` and the state-to-context cross-attention.
#[derive(Debug, Clone)]
pub struct StateEncoder {
    pub pose: Linear,
    pub force: Linear,
    pub cross: Attention,
    pub residual: bool,
}

impl StateEncoder {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        d_model: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            pose: Linear::new(params, &format!("{name}.pose"), Pose::DIM, d_model, rng)?,
            force: Linear::new(params, &format!("{name}.force"), Wrench::DIM, d_model, rng)?,
            cross: Attention::new(params, &format!("{name}.cross"), d_model, heads, rng)?,
            residual: true,
        })
    }

    /// `E_P = φ_P(p)`
    pub fn encode_pose(&self, g: &mut Graph<'_>, pose: &Pose) -> Result<Var> {
        pose.validate()?;
        let x = g.input(Matrix::row_vector(&pose_features(pose)));
        self.pose.forward(g, x)
    }

    /// Input node holding the normalized wrench, for gradient probes.
    pub fn force_input(&self, g: &mut Graph<'_>, wrench: &Wrench) -> Result<Var> {
        if !wrench.is_finite() {
            return Err(Error::numeric("non-finite wrench"));
        }
        Ok(g.input(Matrix::row_vector(&normalize_wrench(wrench))))
    }

    /// `E_F = φ_F(f_raw)`, normalization included.
    pub fn encode_force(&self, g: &mut Graph<'_>, wrench: &Wrench) -> Result<Var> {
        let x = self.force_input(g, wrench)?;
        self.force.forward(g, x)
    }

    /// `E'_state = E_state + CrossAttn(E_state, E)`
    pub fn cross_modal_condition(&self, g: &mut Graph<'_>, state: Var, context: Var) -> Result<Var> {
        let attended = self.cross.forward(g, state, context, None)?;
        if self.residual {
            g.add(state, attended)
        } else {
            Ok(attended)
        }
    }
}
