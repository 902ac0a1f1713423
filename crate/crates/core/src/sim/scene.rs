//! Randomized task scenes, the base-drop perturbation and the synthetic
//! camera features.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::context::{CameraFrame, VisualObservation};
use crate::data::ForceCondition;
use crate::error::{Error, Result};
use crate::geometry::{scale3, sub3, Pose, Vec3};
use crate::nn::Matrix;
use crate::sim::env::{env_force, EnvParams, SimState};

pub const CAMERA_COUNT: usize = 3;
pub const TOKENS_PER_CAMERA: usize = 2;
pub const FEATURE_DIM: usize = 6;
/// Rendered positions are in decimeters.
pub const RENDER_SCALE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TaskKind {
    Press,
    Wipe,
    Probe,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [Self::Press, Self::Wipe, Self::Probe];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Press => "press",
            Self::Wipe => "wipe",
            Self::Probe => "probe",
        }
    }

    pub fn task_prompt(self) -> &'static str {
        match self {
            Self::Press => "press the bottle",
            Self::Wipe => "wipe the board",
            Self::Probe => "probe the surface",
        }
    }

    pub fn subtask_prompts(self) -> [&'static str; 3] {
        match self {
            Self::Press => ["approach", "press", "release"],
            Self::Wipe => ["approach", "wipe", "release"],
            Self::Probe => ["approach", "probe", "release"],
        }
    }

    /// Normal-force target during the contact subtask.
    pub fn contact_force(self) -> f64 {
        match self {
            Self::Press => 20.0,
            Self::Wipe => 10.0,
            Self::Probe => 5.0,
        }
    }

    /// Force factor for the transition labels of each subtask.
    pub fn force_conditions(self) -> [ForceCondition; 3] {
        [
            ForceCondition::Ignored,
            ForceCondition::Range { n: 0.0, m: self.contact_force() },
            ForceCondition::Ignored,
        ]
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::domain(format!("unknown task `{s}` (expected press, wipe or probe)")))
    }
}

/// Mid-episode drop of the robot base: once the end effector comes within
/// `trigger_clearance` of the surface, the base sinks by `drop`, so in the
/// robot frame the surface rises by the same amount.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perturbation {
    pub trigger_clearance: f64,
    pub drop: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub task: TaskKind,
    pub seed: u64,
    /// Contact law in the robot base frame.
    pub env: EnvParams,
    /// Object position in the world frame; its z is the surface height.
    pub object: Vec3,
    pub start: Pose,
    pub perturbation: Option<Perturbation>,
    /// Base drop applied so far.
    pub base_drop: f64,
}

impl Scene {
    pub fn sample(task: TaskKind, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5ce7e);
        let h = rng.random_range(0.0..0.05);
        let object = [rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), h];
        let env = EnvParams {
            offset: h,
            stiffness: rng.random_range(1000.0..2000.0),
            damping: 5.0,
            friction: 0.3,
            ..EnvParams::default()
        };
        let start = Pose::at([
            rng.random_range(-0.15..0.15),
            rng.random_range(-0.15..0.15),
            h + 0.25 + rng.random_range(-0.03..0.03),
        ]);
        Self {
            task,
            seed,
            env,
            object,
            start,
            perturbation: None,
            base_drop: 0.0,
        }
    }

    /// The same scene with a base drop of 0.10–0.11 m triggered at a
    /// clearance of 0.115–0.125 m.
    pub fn with_base_drop(mut self) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0xd809);
        self.perturbation = Some(Perturbation {
            trigger_clearance: rng.random_range(0.115..0.125),
            drop: rng.random_range(0.10..0.11),
        });
        self
    }

    pub fn world_position(&self, pose: &Pose) -> Vec3 {
        let p = pose.position;
        [p[0], p[1], p[2] - self.base_drop]
    }

    /// Applies a pending perturbation; returns whether it fired now.
    pub fn maybe_perturb(&mut self, state: &mut SimState) -> bool {
        let Some(p) = self.perturbation else { return false };
        if self.base_drop != 0.0 {
            return false;
        }
        let clearance = self.world_position(&state.pose)[2] - self.object[2];
        if clearance >= p.trigger_clearance {
            return false;
        }
        self.base_drop = p.drop;
        self.env.offset += p.drop;
        state.wrench = env_force(&state.pose.to_pose6(), &state.velocity, &self.env);
        true
    }

    /// Three cameras × two tokens × six features. The two fixed cameras
    /// see world positions rotated by ±30° about z; the wrist camera sees
    /// the object offset and the tool axis.
    pub fn render(&self, state: &SimState) -> VisualObservation {
        let contact = if state.in_contact(&self.env) { 1.0 } else { 0.0 };
        let e = self.world_position(&state.pose);
        let o = self.object;
        let token = |v: Vec3, kind: usize| {
            let mut t = vec![v[0] * RENDER_SCALE, v[1] * RENDER_SCALE, v[2] * RENDER_SCALE, contact, 0.0, 0.0];
            t[4 + kind] = 1.0;
            t
        };
        let mut cameras = Vec::with_capacity(CAMERA_COUNT);
        for (id, angle) in [(0u32, 30f64), (1, -30.0)] {
            let (s, c) = angle.to_radians().sin_cos();
            let rot = |v: Vec3| [c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]];
            let rows = vec![token(rot(o), 0), token(rot(e), 1)];
            cameras.push(CameraFrame { camera_id: id, features: Matrix::from_rows(&rows).expect("fixed shape") });
        }
        let axis = scale3(state.pose.orientation.forward_axis(), 1.0 / RENDER_SCALE);
        let rows = vec![token(sub3(o, e), 0), token(axis, 1)];
        cameras.push(CameraFrame { camera_id: 2, features: Matrix::from_rows(&rows).expect("fixed shape") });
        VisualObservation { cameras }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_vary_object_and_keep_schema() {
        let a = Scene::sample(TaskKind::Press, 1);
        let b = Scene::sample(TaskKind::Press, 2);
        assert_ne!(a.object, b.object);
        assert_eq!(a, Scene::sample(TaskKind::Press, 1));
        a.env.validate().unwrap();
        let s = SimState::at_rest(a.start, &a.env);
        let r = a.render(&s);
        assert_eq!(r.cameras.len(), CAMERA_COUNT);
        r.validate(FEATURE_DIM).unwrap();
        assert_eq!(r.token_count(), CAMERA_COUNT * TOKENS_PER_CAMERA);
    }

    #[test]
    fn base_drop_raises_the_surface_in_the_robot_frame() {
        let mut scene = Scene::sample(TaskKind::Press, 3).with_base_drop();
        let p = scene.perturbation.unwrap();
        let h = scene.env.offset;
        let mut s = SimState::at_rest(Pose::at([0.0, 0.0, h + 0.2]), &scene.env);
        assert!(!scene.maybe_perturb(&mut s));
        s.pose.position[2] = h + p.trigger_clearance - 0.001;
        assert!(scene.maybe_perturb(&mut s));
        assert!((scene.env.offset - (h + p.drop)).abs() < 1e-15);
        assert!(!scene.maybe_perturb(&mut s));
        let world = scene.world_position(&s.pose);
        assert!((world[2] - (s.pose.position[2] - p.drop)).abs() < 1e-15);
    }

    #[test]
    fn task_names() {
        for t in TaskKind::ALL {
            assert_eq!(t.as_str().parse::<TaskKind>().unwrap(), t);
        }
        assert!("juggle".parse::<TaskKind>().is_err());
    }
}
