//! Contact environment, task scenes, scripted experts and closed-loop rollout.

pub mod config;
pub mod env;
pub mod expert;
pub mod rollout;
pub mod scene;

pub use env::{
    commanded_pose, env_force, step_hybrid, step_position_only, EnvParams, HybridGains, SimState, DEFAULT_DT,
    DEFAULT_FORCE_LIMIT,
};
pub use expert::{generate_demonstration, position_only_actions, ScriptedExpert, DEFAULT_HORIZON};
pub use config::EnvConfig;
pub use scene::{Perturbation, Scene, TaskKind};
pub use rollout::{
    default_plan, rollout, task_success, Execution, ExpertPolicy, Observation, Policy, RolloutConfig, RolloutMetrics,
    ZeroPolicy,
};
