//! Closed-loop episodes: observe, query a policy for a chunk, execute it,
//! advance the subtask plan and score the result.

use crate::context::{SubtaskPlan, VisualObservation};
use crate::data::{segment_skills, SkillThresholds, SubtaskSegment, Trajectory, DEFAULT_WINDOW};
use crate::error::{Error, Result};
use crate::flow::{ActionVector, ACTION_DIM};
use crate::geometry::{Pose, Wrench};
use crate::sim::env::{commanded_pose, step_hybrid, step_position_only, HybridGains, SimState};
use crate::sim::expert::{ScriptedExpert, NOMINAL_STIFFNESS};
use crate::sim::scene::{Scene, TaskKind};
use crate::transition::{subtask_step, TransitionState, DEFAULT_THRESHOLD};

/// How a policy's actions reach the robot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Hybrid,
    PositionOnly,
}

/// What a policy sees at one control step. `scene` and `state` are
/// privileged and only meant for scripted policies.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub visual: &'a VisualObservation,
    pub pose: &'a Pose,
    pub wrench: &'a Wrench,
    pub task_prompt: &'a str,
    pub force_prompt: &'a str,
    pub subtask: usize,
    pub progress: f64,
    pub step: usize,
    pub scene: &'a Scene,
    pub state: &'a SimState,
}

pub trait Policy {
    /// Called once before an episode.
    fn reset(&mut self) {}

    /// A non-empty chunk of actions to execute open loop.
    fn act(&mut self, obs: &Observation<'_>) -> Result<Vec<ActionVector>>;

    fn execution(&self) -> Execution {
        Execution::Hybrid
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutConfig {
    pub horizon: usize,
    /// Actions executed per chunk before re-planning; `None` runs the whole chunk.
    pub replan_every: Option<usize>,
    pub threshold: f64,
    pub gains: HybridGains,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            horizon: crate::sim::expert::DEFAULT_HORIZON,
            replan_every: None,
            threshold: DEFAULT_THRESHOLD,
            gains: HybridGains::for_stiffness(NOMINAL_STIFFNESS),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutMetrics {
    pub success: bool,
    pub overloads: usize,
    /// RMS of commanded minus measured normal force over steps with a
    /// nonzero commanded force.
    pub force_rms: f64,
    /// Step at which the last subtask was entered.
    pub steps_to_completion: Option<usize>,
    pub max_force: f64,
}

/// Press: five consecutive states in [15, 25] N, then released clear of
/// the surface. Wipe: ten contact states in [5, 15] N and 5 cm of x travel.
/// Probe: any state in [2, 10] N. All require zero overloads.
pub fn task_success(task: TaskKind, scene: &Scene, t: &Trajectory, final_state: &SimState, overloads: usize) -> bool {
    if overloads > 0 {
        return false;
    }
    let normal: Vec<f64> = t
        .wrenches
        .iter()
        .chain(std::iter::once(&final_state.wrench))
        .map(|w| crate::geometry::dot3(w.force, scene.env.normal))
        .collect();
    match task {
        TaskKind::Press => {
            let mut run = 0;
            let mut best = 0;
            for f in &normal {
                run = if (15.0..=25.0).contains(f) { run + 1 } else { 0 };
                best = best.max(run);
            }
            best >= 5 && final_state.clearance(&scene.env) > 0.05 && !final_state.in_contact(&scene.env)
        }
        TaskKind::Wipe => {
            let contact = normal.iter().filter(|f| (5.0..=15.0).contains(*f)).count();
            let xs = t.poses.iter().map(|p| p.position[0]);
            let (lo, hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
            contact >= 10 && hi - lo >= 0.05
        }
        TaskKind::Probe => normal.iter().any(|f| (2.0..=10.0).contains(f)),
    }
}

fn plan_segments(task: TaskKind, plan: &SubtaskPlan, indices: &[usize]) -> Vec<SubtaskSegment> {
    let conditions = task.force_conditions();
    let mut out: Vec<SubtaskSegment> = Vec::new();
    for (k, &i) in indices.iter().enumerate() {
        match out.last_mut() {
            Some(s) if s.prompt == plan.subtasks()[i].force_prompt => s.end = k + 1,
            _ => out.push(SubtaskSegment {
                start: k,
                end: k + 1,
                prompt: plan.subtasks()[i].force_prompt.clone(),
                force: conditions[i.min(conditions.len() - 1)],
            }),
        }
    }
    out
}

/// The task's default three-stage plan.
pub fn default_plan(task: TaskKind) -> SubtaskPlan {
    SubtaskPlan::from_prompts(task.task_prompt(), &task.subtask_prompts()).expect("three subtasks")
}

/// Runs one episode. The scene is mutated by any perturbation it carries.
pub fn rollout(
    policy: &mut dyn Policy,
    mut scene: Scene,
    plan: SubtaskPlan,
    config: &RolloutConfig,
) -> Result<(Trajectory, RolloutMetrics)> {
    if config.horizon == 0 {
        return Err(Error::domain("rollout horizon must be at least 1"));
    }
    if config.replan_every == Some(0) {
        return Err(Error::domain("replan interval must be at least 1"));
    }
    policy.reset();
    let task = scene.task;
    let mut plan = plan;
    let mut transition = TransitionState::new(plan.len(), config.threshold)?;
    let mut state = SimState::at_rest(scene.start, &scene.env);
    let mut t = Trajectory {
        task: task.as_str().to_string(),
        task_prompt: plan.task_prompt.clone(),
        seed: scene.seed,
        timestamps: Vec::with_capacity(config.horizon),
        frames: Vec::with_capacity(config.horizon),
        poses: Vec::with_capacity(config.horizon),
        wrenches: Vec::with_capacity(config.horizon),
        actions: Vec::with_capacity(config.horizon),
        progress: Vec::with_capacity(config.horizon),
        segments: Vec::new(),
        skills: Vec::new(),
    };
    let mut indices = Vec::with_capacity(config.horizon);
    let mut queue: std::collections::VecDeque<ActionVector> = Default::default();
    let mut overloads = 0;
    let mut max_force: f64 = 0.0;
    let mut sq_err = 0.0;
    let mut tracked = 0usize;
    let mut completion = None;
    for k in 0..config.horizon {
        scene.maybe_perturb(&mut state);
        let visual = scene.render(&state);
        if queue.is_empty() {
            let obs = Observation {
                visual: &visual,
                pose: &state.pose,
                wrench: &state.wrench,
                task_prompt: &plan.task_prompt,
                force_prompt: &plan.current().force_prompt,
                subtask: plan.index(),
                progress: transition.progress,
                step: k,
                scene: &scene,
                state: &state,
            };
            let chunk = policy.act(&obs)?;
            if chunk.is_empty() {
                return Err(Error::dim("policy returned an empty chunk"));
            }
            let keep = config.replan_every.map_or(chunk.len(), |r| r.min(chunk.len()));
            queue.extend(chunk.into_iter().take(keep));
        }
        let a = queue.pop_front().expect("queue refilled above");
        if !a.is_finite() {
            return Err(Error::numeric(format!("policy produced a non-finite action at step {k}")));
        }
        t.timestamps.push(k as f64 * scene.env.dt);
        t.frames.push(visual);
        t.poses.push(state.pose);
        t.wrenches.push(state.wrench);
        indices.push(plan.index());
        let mut packed = a.pack();
        let commanded_normal = crate::geometry::dot3(a.wrench.force, scene.env.normal);
        state = match policy.execution() {
            Execution::Hybrid => step_hybrid(&state, &a, &scene.env, &config.gains)?,
            Execution::PositionOnly => {
                packed[7..ACTION_DIM - 1].fill(0.0);
                step_position_only(&state, &commanded_pose(&state, &a), &scene.env)?
            }
        };
        t.actions.push(packed);
        t.progress.push(a.progress);
        let f = state.wrench.force_norm();
        max_force = max_force.max(f);
        if scene.env.is_overload(&state.wrench) {
            overloads += 1;
        }
        if policy.execution() == Execution::Hybrid && commanded_normal.abs() > 0.0 {
            let e = commanded_normal - state.normal_force(&scene.env);
            sq_err += e * e;
            tracked += 1;
        }
        let before = transition.index;
        transition = subtask_step(transition, a.progress);
        if transition.index != before {
            plan = plan.with_index(transition.index);
        }
        if completion.is_none() && transition.is_terminal() {
            completion = Some(k + 1);
        }
    }
    t.segments = plan_segments(task, &plan, &indices);
    t.skills = segment_skills(&t, DEFAULT_WINDOW, &SkillThresholds::default())?;
    let success = task_success(task, &scene, &t, &state, overloads);
    let metrics = RolloutMetrics {
        success,
        overloads,
        force_rms: if tracked == 0 { 0.0 } else { (sq_err / tracked as f64).sqrt() },
        steps_to_completion: completion,
        max_force,
    };
    Ok((t, metrics))
}

/// The scripted demonstrator as a one-step-chunk policy. Reports s = 1 on
/// the step that finishes a phase.
#[derive(Debug, Clone)]
pub struct ExpertPolicy {
    expert: ScriptedExpert,
}

impl ExpertPolicy {
    pub fn new(task: TaskKind) -> Self {
        Self { expert: ScriptedExpert::new(task) }
    }
}

impl Policy for ExpertPolicy {
    fn reset(&mut self) {
        self.expert = ScriptedExpert::new(self.expert.task);
    }

    fn act(&mut self, obs: &Observation<'_>) -> Result<Vec<ActionVector>> {
        let before = self.expert.phase();
        let mut a = self.expert.act(obs.scene, obs.state);
        if self.expert.phase() > before {
            a.progress = 1.0;
        }
        Ok(vec![a])
    }
}

/// Always the identity action.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPolicy;

impl Policy for ZeroPolicy {
    fn act(&mut self, _obs: &Observation<'_>) -> Result<Vec<ActionVector>> {
        Ok(vec![ActionVector::ZERO])
    }
}
