//! Penetration spring-damper contact with Coulomb friction and ideal
//! position tracking.

use crate::error::{Error, Result};
use crate::flow::ActionVector;
use crate::geometry::{dot3, norm3, scale3, sub3, Pose, Quaternion, Vec3, Wrench};

pub const DEFAULT_DT: f64 = 1.0 / 30.0;
pub const DEFAULT_FORCE_LIMIT: f64 = 100.0;

/// Planar surface `{x : n·x = offset}`; the free side is `n·x > offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvParams {
    pub normal: Vec3,
    pub offset: f64,
    pub stiffness: f64,
    pub damping: f64,
    pub friction: f64,
    pub force_limit: f64,
    pub dt: f64,
}

impl Default for EnvParams {
    fn default() -> Self {
        Self {
            normal: [0.0, 0.0, 1.0],
            offset: 0.0,
            stiffness: 1000.0,
            damping: 5.0,
            friction: 0.3,
            force_limit: DEFAULT_FORCE_LIMIT,
            dt: DEFAULT_DT,
        }
    }
}

impl EnvParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.stiffness > 0.0) {
            return Err(Error::domain(format!("stiffness {} must be positive", self.stiffness)));
        }
        if !(self.damping >= 0.0) || !(self.friction >= 0.0) {
            return Err(Error::domain("damping and friction must be non-negative"));
        }
        if !(self.force_limit > 0.0) || !(self.dt > 0.0) {
            return Err(Error::domain("force limit and time step must be positive"));
        }
        if (norm3(self.normal) - 1.0).abs() > 1e-9 || !self.offset.is_finite() {
            return Err(Error::domain("surface normal must be a unit vector"));
        }
        Ok(())
    }

    /// Signed distance of `p` above the surface.
    pub fn clearance(&self, p: Vec3) -> f64 {
        dot3(self.normal, p) - self.offset
    }

    pub fn is_overload(&self, w: &Wrench) -> bool {
        w.force_norm() > self.force_limit
    }
}

/// `f = Φ(p, ṗ, θ_e)`: force exerted by the surface on the end effector.
pub fn env_force(pose: &[f64; 6], velocity: &[f64; 6], params: &EnvParams) -> Wrench {
    let p = [pose[0], pose[1], pose[2]];
    let depth = (-params.clearance(p)).max(0.0);
    if depth == 0.0 {
        return Wrench::ZERO;
    }
    let n = params.normal;
    let v = [velocity[0], velocity[1], velocity[2]];
    let vn = dot3(n, v);
    let magnitude = params.stiffness * depth + params.damping * (-vn).max(0.0);
    let mut force = scale3(n, magnitude);
    let vt = sub3(v, scale3(n, vn));
    let speed = norm3(vt);
    if speed > 1e-12 {
        for i in 0..3 {
            force[i] -= params.friction * magnitude * vt[i] / speed;
        }
    }
    Wrench::from_force(force)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimState {
    pub pose: Pose,
    pub velocity: [f64; 6],
    pub wrench: Wrench,
    pub step: u64,
}

impl SimState {
    /// At rest at `pose`, wrench consistent with the environment.
    pub fn at_rest(pose: Pose, params: &EnvParams) -> Self {
        let velocity = [0.0; 6];
        Self {
            pose,
            velocity,
            wrench: env_force(&pose.to_pose6(), &velocity, params),
            step: 0,
        }
    }

    pub fn clearance(&self, params: &EnvParams) -> f64 {
        params.clearance(self.pose.position)
    }

    pub fn in_contact(&self, params: &EnvParams) -> bool {
        self.clearance(params) < 0.0
    }

    /// Normal component of the measured force.
    pub fn normal_force(&self, params: &EnvParams) -> f64 {
        dot3(self.wrench.force, params.normal)
    }
}

fn advance(state: &SimState, target: Pose, params: &EnvParams) -> SimState {
    let old = state.pose.to_pose6();
    let new = target.to_pose6();
    let velocity: [f64; 6] = std::array::from_fn(|i| (new[i] - old[i]) / params.dt);
    SimState {
        pose: target,
        velocity,
        wrench: env_force(&new, &velocity, params),
        step: state.step + 1,
    }
}

/// `p(k+1) = a_p(k)`
pub fn step_position_only(state: &SimState, target: &Pose, params: &EnvParams) -> Result<SimState> {
    target.validate()?;
    Ok(advance(state, *target, params))
}

/// Current pose composed with the action's pose delta.
pub fn commanded_pose(state: &SimState, action: &ActionVector) -> Pose {
    let d = action.delta_position();
    let p = state.pose.position;
    Pose {
        position: [p[0] + d[0], p[1] + d[1], p[2] + d[2]],
        orientation: action.delta_rotation().mul(&state.pose.orientation).normalized(),
    }
}

/// Admittance gain and the base-frame axes it acts on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HybridGains {
    pub gain: f64,
    pub axes: [bool; 3],
}

impl HybridGains {
    /// `G = 1/(2k)` on z only.
    pub fn for_stiffness(k: f64) -> Self {
        Self {
            gain: 1.0 / (2.0 * k),
            axes: [false, false, true],
        }
    }
}

impl Default for HybridGains {
    fn default() -> Self {
        Self::for_stiffness(1000.0)
    }
}

/// Position step followed by `p ← p − G·S·(f_target − f_measured)`.
pub fn step_hybrid(
    state: &SimState,
    action: &ActionVector,
    params: &EnvParams,
    gains: &HybridGains,
) -> Result<SimState> {
    if !(gains.gain >= 0.0) {
        return Err(Error::domain(format!("admittance gain {} must be non-negative", gains.gain)));
    }
    if !action.is_finite() {
        return Err(Error::numeric("non-finite action"));
    }
    let mut target = commanded_pose(state, action);
    let ft = action.wrench.force;
    let fm = state.wrench.force;
    for i in 0..3 {
        if gains.axes[i] {
            target.position[i] -= gains.gain * (ft[i] - fm[i]);
        }
    }
    Ok(advance(state, target, params))
}

pub fn identity_action() -> ActionVector {
    ActionVector::new([0.0; 3], Quaternion::IDENTITY, Wrench::ZERO, 0.0)
}
