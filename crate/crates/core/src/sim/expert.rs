//! Scripted demonstrators with privileged access to the contact law.

use crate::data::{annotate_transitions, segment_skills, SkillThresholds, SubtaskSegment, Trajectory};
use crate::error::Result;
use crate::flow::{ActionVector, ACTION_DIM};
use crate::geometry::{norm3, scale3, sub3, Quaternion, Vec3, Wrench};
use crate::sim::env::{step_hybrid, HybridGains, SimState};
use crate::sim::scene::{Scene, TaskKind};
use crate::transition::TransitionParams;

pub const DEFAULT_HORIZON: usize = 90;
pub const NOMINAL_STIFFNESS: f64 = 1000.0;
pub const APPROACH_STEP: f64 = 0.02;
pub const DESCENT_STEP: f64 = 0.01;
pub const RETRACT_STEP: f64 = 0.02;
/// Clearance at which a retract counts as finished.
pub const RETRACT_CLEARANCE: f64 = 0.15;

const CONTACT_THRESHOLD: f64 = 1.0;

/// Phase-scripted expert: approach, contact subtask, release.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedExpert {
    pub task: TaskKind,
    phase: usize,
    counter: usize,
}

fn clamp_norm(v: Vec3, max: f64) -> Vec3 {
    let n = norm3(v);
    if n > max {
        scale3(v, max / n)
    } else {
        v
    }
}

fn action(delta: Vec3, force_z: f64) -> ActionVector {
    ActionVector::new(delta, Quaternion::IDENTITY, Wrench::from_force([0.0, 0.0, force_z]), 0.0)
}

impl ScriptedExpert {
    pub fn new(task: TaskKind) -> Self {
        Self { task, phase: 0, counter: 0 }
    }

    pub fn phase(&self) -> usize {
        self.phase
    }

    fn hover_point(&self, scene: &Scene) -> Vec3 {
        let (dx, height) = match self.task {
            TaskKind::Press => (0.0, 0.15),
            TaskKind::Wipe => (-0.05, 0.05),
            TaskKind::Probe => (0.0, 0.10),
        };
        [scene.object[0] + dx, scene.object[1], scene.env.offset + height]
    }

    /// Advances the phase from the current state and returns this step's command.
    pub fn act(&mut self, scene: &Scene, state: &SimState) -> ActionVector {
        let target_force = self.task.contact_force();
        let fn_meas = state.normal_force(&scene.env);
        if self.phase == 0 {
            let d = sub3(self.hover_point(scene), state.pose.position);
            if norm3(d) >= 0.003 {
                return action(clamp_norm(d, APPROACH_STEP), 0.0);
            }
            self.phase = 1;
            self.counter = 0;
        }
        if self.phase == 1 {
            let done = match self.task {
                TaskKind::Press => {
                    let held = self.counter >= 10;
                    if !held && (15.0..=25.0).contains(&fn_meas) {
                        self.counter += 1;
                    }
                    held
                }
                TaskKind::Wipe => self.counter >= 20,
                TaskKind::Probe => {
                    let held = self.counter >= 3;
                    if !held && fn_meas >= CONTACT_THRESHOLD {
                        self.counter += 1;
                    }
                    held
                }
            };
            if !done {
                if fn_meas < CONTACT_THRESHOLD && !(self.task == TaskKind::Wipe && self.counter > 0) {
                    return action([0.0, 0.0, -DESCENT_STEP], target_force);
                }
                if self.task == TaskKind::Wipe {
                    self.counter += 1;
                    return action([0.005, 0.0, 0.0], target_force);
                }
                return action([0.0; 3], target_force);
            }
            self.phase = 2;
        }
        if state.clearance(&scene.env) < RETRACT_CLEARANCE {
            action([0.0, 0.0, RETRACT_STEP], 0.0)
        } else {
            action([0.0; 3], 0.0)
        }
    }
}

/// Contiguous runs of equal phase ids as labelled segments.
pub fn phase_segments(task: TaskKind, phases: &[usize]) -> Vec<SubtaskSegment> {
    let prompts = task.subtask_prompts();
    let conditions = task.force_conditions();
    let mut out: Vec<SubtaskSegment> = Vec::new();
    for (k, &p) in phases.iter().enumerate() {
        match out.last_mut() {
            Some(s) if s.prompt == prompts[p] => s.end = k + 1,
            _ => out.push(SubtaskSegment { start: k, end: k + 1, prompt: prompts[p].to_string(), force: conditions[p] }),
        }
    }
    out
}

/// Runs the expert for `horizon` steps under hybrid execution and labels
/// the result.
pub fn generate_demonstration(
    task: TaskKind,
    seed: u64,
    horizon: usize,
    transition: TransitionParams,
) -> Result<Trajectory> {
    let scene = Scene::sample(task, seed);
    let gains = HybridGains::for_stiffness(NOMINAL_STIFFNESS);
    let mut expert = ScriptedExpert::new(task);
    let mut state = SimState::at_rest(scene.start, &scene.env);
    let mut t = Trajectory {
        task: task.as_str().to_string(),
        task_prompt: task.task_prompt().to_string(),
        seed,
        timestamps: Vec::with_capacity(horizon),
        frames: Vec::with_capacity(horizon),
        poses: Vec::with_capacity(horizon),
        wrenches: Vec::with_capacity(horizon),
        actions: Vec::with_capacity(horizon),
        progress: Vec::new(),
        segments: Vec::new(),
        skills: Vec::new(),
    };
    let mut phases = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let a = expert.act(&scene, &state);
        t.timestamps.push(k as f64 * scene.env.dt);
        t.frames.push(scene.render(&state));
        t.poses.push(state.pose);
        t.wrenches.push(state.wrench);
        t.actions.push(a.pack());
        phases.push(expert.phase());
        state = step_hybrid(&state, &a, &scene.env, &gains)?;
    }
    t.segments = phase_segments(task, &phases);
    t.progress = vec![0.0; horizon];
    t.progress = annotate_transitions(&t, transition)?;
    for (a, s) in t.actions.iter_mut().zip(&t.progress) {
        a[ACTION_DIM - 1] = *s;
    }
    t.skills = segment_skills(&t, crate::data::DEFAULT_WINDOW, &SkillThresholds::default())?;
    t.validate()?;
    Ok(t)
}

/// Labels for pure position execution: realized pose steps, zero wrench.
pub fn position_only_actions(t: &Trajectory) -> Vec<[f64; ACTION_DIM]> {
    (0..t.len())
        .map(|k| {
            let mut a = ActionVector::ZERO.pack();
            if k + 1 < t.len() {
                let d = sub3(t.poses[k + 1].position, t.poses[k].position);
                a[..3].copy_from_slice(&d);
            }
            a[3] = 1.0;
            a[ACTION_DIM - 1] = t.progress[k];
            a
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn press_demo_holds_band_and_covers_plan() {
        for seed in 0..20 {
            let t = generate_demonstration(TaskKind::Press, seed, DEFAULT_HORIZON, TransitionParams::default()).unwrap();
            assert_eq!(t.segments.len(), 3, "seed {seed}");
            let press = &t.segments[1];
            let band = (press.start..press.end).filter(|&k| (15.0..=25.0).contains(&t.wrenches[k].force[2])).count();
            assert!(band >= 10, "seed {seed}: {band} in-band steps");
            assert!(t.wrenches.iter().all(|w| w.force_norm() <= 100.0));
            assert!(t.progress.iter().all(|s| (0.0..=1.0).contains(s)));
        }
    }

    #[test]
    fn other_tasks_complete() {
        for task in [TaskKind::Wipe, TaskKind::Probe] {
            let t = generate_demonstration(task, 5, DEFAULT_HORIZON, TransitionParams::default()).unwrap();
            assert_eq!(t.segments.len(), 3, "{task}");
            assert!(t.wrenches.iter().any(|w| w.force[2] > 1.0));
        }
    }

    #[test]
    fn seeds_differ_schema_matches() {
        let a = generate_demonstration(TaskKind::Press, 1, 40, TransitionParams::default()).unwrap();
        let b = generate_demonstration(TaskKind::Press, 2, 40, TransitionParams::default()).unwrap();
        assert_ne!(a.frames[0], b.frames[0]);
        assert_eq!(a.len(), b.len());
        assert_eq!(a.frames[0].cameras.len(), b.frames[0].cameras.len());
        assert_eq!(a, generate_demonstration(TaskKind::Press, 1, 40, TransitionParams::default()).unwrap());
    }

    #[test]
    fn position_only_labels_replay_the_path() {
        let t = generate_demonstration(TaskKind::Press, 3, DEFAULT_HORIZON, TransitionParams::default()).unwrap();
        let labels = position_only_actions(&t);
        let mut p = t.poses[0].position;
        for a in &labels[..t.len() - 1] {
            for i in 0..3 {
                p[i] += a[i];
            }
            assert!(a[7..13].iter().all(|v| *v == 0.0));
        }
        let last = t.poses[t.len() - 1].position;
        assert!(norm3(sub3(p, last)) < 1e-12);
    }
}
