//! Self-checks run by the `verify` command: gradients, the transition model
//! against sampling, controllability ranks, sampler and data contracts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::context::{CameraFrame, VisualObservation};
use crate::control::{analyze, reachable_dim_estimate, ControlMode, ReachController};
use crate::data::trajectory::{ForceCondition, SubtaskSegment, Trajectory};
use crate::data::{
    classify_window, decode_trajectory, encode_trajectory, synchronize_streams, transition_observation, SkillLabel,
    SkillThresholds, WindowFeatures,
};
use crate::error::{Error, Result};
use crate::flow::{euler_integrate, sample_noise_with};
use crate::geometry::{Pose, Quaternion, Vec3, Wrench};
use crate::moe::{AblationMask, ExpertBank, RoutingMode};
use crate::nn::{finite_diff_check, mlp_forward, value_and_grad, Graph, Matrix, ParamSet};
use crate::policy::{ForcePolicy, PolicyConfig, PolicyInput};
use crate::sim::{generate_demonstration, step_hybrid, EnvParams, HybridGains, Scene, SimState, TaskKind};
use crate::state::{ConditionedSequence, Spans};
use crate::transition::{
    gamma, mc_transition_oracle, transition_probability, transition_probability_simplified, TransitionObservation,
    TransitionParams,
};

pub const CHECKS: [&str; 11] = [
    "gradcheck",
    "transition",
    "gamma",
    "moe",
    "flow",
    "rank",
    "tracking",
    "segmentation",
    "serialization",
    "sync",
    "labels",
];

/// Deliberate faults for exercising the checks themselves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Scales the closed-form transition normalizer by 1.1.
    TransitionConstant,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    pub fault: Fault,
    /// Monte Carlo draws per observation in the `transition` check.
    pub mc_samples: usize,
    pub gradcheck_instances: u64,
    pub roundtrips: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { seed: 42, fault: Fault::None, mc_samples: 1_000_000, gradcheck_instances: 20, roundtrips: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &'static str, passed: bool, detail: impl Into<String>) -> Self {
        Self { name, passed, detail: detail.into() }
    }
}

/// Runs the named checks in order; an unknown name is a domain error.
pub fn run_checks(names: &[&str], opts: &VerifyOptions) -> Result<Vec<CheckResult>> {
    names.iter().map(|n| run_check(n, opts)).collect()
}

pub fn run_check(name: &str, opts: &VerifyOptions) -> Result<CheckResult> {
    let res = match name {
        "gradcheck" => check_gradients(opts),
        "transition" => check_transition_oracle(opts),
        "gamma" => check_gamma_identity(opts),
        "moe" => check_moe(opts),
        "flow" => check_flow_sampler(),
        "rank" => check_rank(opts),
        "tracking" => check_force_tracking(),
        "segmentation" => check_segmentation(),
        "serialization" => check_serialization(opts),
        "sync" => check_sync(),
        "labels" => check_labels(opts),
        _ => return Err(Error::domain(format!("unknown check `{name}`; known: {}", CHECKS.join(", ")))),
    };
    let name = CHECKS.iter().find(|c| **c == name).copied().unwrap_or("unknown");
    Ok(res.unwrap_or_else(|e| CheckResult::new(name, false, format!("error: {e}"))))
}

/// Max relative error of pipeline gradients over seeded toy instances.
pub fn check_gradients(opts: &VerifyOptions) -> Result<CheckResult> {
    let cfg = PolicyConfig { d_model: 4, chunk: 2, hidden: 8, time_dim: 4, blocks: 1, ..Default::default() };
    let mut worst = 0.0f64;
    for i in 0..opts.gradcheck_instances {
        let seed = opts.seed.wrapping_add(i);
        let p = ForcePolicy::with_default_corpus(cfg.clone(), seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scene = Scene::sample(TaskKind::ALL[(i % 3) as usize], seed);
        let mut s = SimState::at_rest(scene.start, &scene.env);
        s.wrench = Wrench::from_force([rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(0.0..40.0)]);
        let visual = scene.render(&s);
        let prompts = scene.task.subtask_prompts();
        let input = PolicyInput {
            visual: &visual,
            pose: &s.pose,
            wrench: &s.wrench,
            task_prompt: scene.task.task_prompt(),
            force_prompt: prompts[(i % 3) as usize],
            progress: rng.random_range(0.0..1.0),
        };
        let dims = p.config.action_dim();
        let targets = Matrix::row_vector(&sample_noise_with(dims, &mut rng));
        let noise = Matrix::row_vector(&sample_noise_with(dims, &mut rng));
        let tau = [rng.random_range(0.0..1.0)];
        let (_, grads) = value_and_grad(&p.params, |g| p.loss(g, &[input], &targets, &noise, &tau))?;
        let mut work = p.params.clone();
        let err = finite_diff_check(
            |x| {
                work.assign_flat(x).expect("same layout");
                let mut g = Graph::new(&work);
                let l = p.loss(&mut g, &[input], &targets, &noise, &tau).expect("loss");
                g.value(l).data()[0]
            },
            &grads.flatten(),
            &p.params.flatten(),
            1e-5,
        )?;
        worst = worst.max(err);
    }
    Ok(CheckResult::new(
        "gradcheck",
        worst < 1e-4,
        format!("{} instances, max relative error {worst:.3e} (limit 1e-4)", opts.gradcheck_instances),
    ))
}

fn random_observation(rng: &mut ChaCha8Rng, alpha: f64, lambda: f64) -> TransitionObservation {
    let n = rng.random_range(0.0..20.0);
    let m = n + rng.random_range(5.0..60.0);
    TransitionObservation::new(
        rng.random_range(0.05..1.0),
        rng.random_range(0.0..1.5),
        rng.random_range(n..=m),
        TransitionParams { alpha, lambda, n, m },
    )
}

/// Closed-form `ŝ` against the sampling oracle on 100 random observations.
/// The standard error is that of a binomial with the closed-form mean.
pub fn check_transition_oracle(opts: &VerifyOptions) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let cases = 100;
    let mut within = 0;
    let mut worst = 0.0f64;
    for i in 0..cases {
        let obs = random_observation(&mut rng, 2.0, 2.0);
        let mut s = transition_probability(&obs)?;
        if opts.fault == Fault::TransitionConstant {
            s *= 1.1;
        }
        let mc = mc_transition_oracle(&obs, opts.mc_samples, opts.seed.wrapping_add(1000 + i))?;
        let se = (s.clamp(0.0, 1.0) * (1.0 - s.clamp(0.0, 1.0)) / mc.samples as f64).sqrt();
        let z = (s - mc.estimate).abs() / se.max(f64::MIN_POSITIVE);
        worst = worst.max(z);
        if (s - mc.estimate).abs() <= 3.0 * se {
            within += 1;
        }
    }
    Ok(CheckResult::new(
        "transition",
        within >= 99,
        format!("{within}/{cases} within 3 SE ({} draws each), worst {worst:.2} SE", opts.mc_samples),
    ))
}

/// The Gamma normalizer is one, so the general form equals the product form.
pub fn check_gamma_identity(opts: &VerifyOptions) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut worst = 0.0f64;
    for alpha in [1.0, 2.0, 3.0, 5.0] {
        let norm = gamma(alpha + 1.0) / (alpha * gamma(alpha));
        worst = worst.max((norm - 1.0).abs());
        for _ in 0..1000 {
            let lambda = rng.random_range(0.5..4.0);
            let obs = random_observation(&mut rng, alpha, lambda);
            let a = transition_probability(&obs)?;
            let b = transition_probability_simplified(&obs)?;
            worst = worst.max((a - b).abs());
        }
    }
    Ok(CheckResult::new("gamma", worst <= 1e-12, format!("max deviation {worst:.3e} over 4000 inputs")))
}

fn sequence(g: &mut Graph<'_>, tokens: &Matrix) -> ConditionedSequence {
    let n = tokens.rows();
    let tokens = g.input(tokens.clone());
    ConditionedSequence { tokens, spans: Spans { context: 0..n - 2, state: n - 2..n - 1, bypass: n - 1..n } }
}

/// Gate simplex, one-hot reproduction and convex-hull membership.
pub fn check_moe(opts: &VerifyOptions) -> Result<CheckResult> {
    let d = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut params = ParamSet::new();
    let bank = ExpertBank::new(&mut params, "moe", d, &mut rng)?;
    let mut simplex_err = 0.0f64;
    for _ in 0..100_000 {
        let scale = rng.random_range(0.1..10.0);
        let token: Vec<f64> = (0..d).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let w = bank.gate(&params, &token)?;
        simplex_err = simplex_err.max((w.iter().sum::<f64>() - 1.0).abs());
        if w.iter().any(|v| !(*v >= 0.0)) {
            simplex_err = f64::INFINITY;
        }
    }

    let rows = 64;
    let tokens = Matrix::new(rows, d, (0..rows * d).map(|_| rng.random_range(-3.0..3.0)).collect())?;
    let mut g = Graph::new(&params);
    let seq = sequence(&mut g, &tokens);
    let soft = bank.forward(&mut g, &seq, AblationMask::default(), RoutingMode::Soft)?;
    let hard = bank.forward(&mut g, &seq, AblationMask::default(), RoutingMode::Top1)?;
    let (soft, hard) = (g.value(soft).clone(), g.value(hard).clone());
    let mut one_hot_exact = true;
    let mut hull_residual = 0.0f64;
    for r in 0..rows {
        let token = tokens.row(r);
        let w = bank.gate(&params, token)?;
        let outs: Vec<Vec<f64>> = bank
            .experts
            .iter()
            .map(|e| mlp_forward(&e.weights(&params), &Matrix::row_vector(token)).map(Matrix::into_data))
            .collect::<Result<_>>()?;
        let best = (0..3).fold(0, |b, m| if w[m] > w[b] { m } else { b });
        one_hot_exact &= hard.row(r) == outs[best].as_slice();
        for j in 0..d {
            let mix: f64 = (0..3).map(|m| w[m] * outs[m][j]).sum();
            hull_residual = hull_residual.max((soft.row(r)[j] - mix).abs());
        }
    }
    let passed = simplex_err <= 1e-12 && one_hot_exact && hull_residual < 1e-9;
    Ok(CheckResult::new(
        "moe",
        passed,
        format!(
            "simplex error {simplex_err:.2e} on 1e5 tokens, one-hot exact: {one_hot_exact}, barycentric residual {hull_residual:.2e}"
        ),
    ))
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    cov / var
}

/// Constant fields, first-order convergence and the compound-growth case.
pub fn check_flow_sampler() -> Result<CheckResult> {
    let a0 = [0.25, -1.5, 3.0];
    let c = [1.0, -0.75, 0.5];
    let mut const_err = 0.0f64;
    for steps in [1, 2, 3, 5, 8, 10, 16, 100] {
        let a = euler_integrate(&a0, steps, |_, _| Ok(c.to_vec()))?;
        for i in 0..3 {
            const_err = const_err.max((a[i] - (a0[i] + c[i])).abs());
        }
    }
    let ns: Vec<f64> = (3..=9).map(|k| (1u32 << k) as f64).collect();
    let errs: Vec<f64> = ns
        .iter()
        .map(|&n| {
            euler_integrate(&[1.0], n as usize, |a, _| Ok(vec![a[0]])).map(|a| (a[0] - std::f64::consts::E).abs())
        })
        .collect::<Result<_>>()?;
    let order = -log_log_slope(&ns, &errs);
    let growth = euler_integrate(&[1.0], 10, |a, _| Ok(vec![a[0]]))?[0];
    let closed = 1.1f64.powi(10);
    let passed = const_err <= 1e-12 && (0.8..=1.2).contains(&order) && (growth - 2.5937).abs() <= 1e-4
        && (growth - closed).abs() <= 1e-12;
    Ok(CheckResult::new(
        "flow",
        passed,
        format!("constant-field error {const_err:.1e}, convergence order {order:.3}, N=10 growth {growth:.6}"),
    ))
}

/// Rank and κ at several contact points, plus sampled reachable dimensions.
pub fn check_rank(opts: &VerifyOptions) -> Result<CheckResult> {
    let mut failures = Vec::new();
    let mut points = 0;
    for k in [1000.0, 1500.0, 2000.0] {
        let env = EnvParams { stiffness: k, ..Default::default() };
        for depth in [0.001, 0.01, 0.05] {
            for tilt in [0.0, 0.2] {
                let point = [0.01, -0.02, env.offset - depth, tilt, -tilt, 0.1];
                points += 1;
                for (mode, rank, kappa) in [(ControlMode::PositionOnly, 6, 0.5), (ControlMode::Hybrid, 12, 1.0)] {
                    let r = analyze(&env, point, mode)?;
                    if r.rank != rank || r.kappa != kappa {
                        failures.push(format!("{} at k={k} depth={depth}: rank {} κ {}", mode.as_str(), r.rank, r.kappa));
                    }
                }
            }
        }
    }
    let env = EnvParams::default();
    let center = [0.0, 0.0, env.offset - 0.01, 0.0, 0.0, 0.0];
    let po = reachable_dim_estimate(&env, center, ReachController::PositionOnly, 10_000, opts.seed)?;
    let hy = reachable_dim_estimate(&env, center, ReachController::HybridIdealized { gain: 1.0 }, 10_000, opts.seed)?;
    if po.dim != 6 || po.tail_ratio >= 1e-6 {
        failures.push(format!("position-only reachable dim {} tail {:.1e}", po.dim, po.tail_ratio));
    }
    if hy.dim != 12 {
        failures.push(format!("hybrid reachable dim {}", hy.dim));
    }
    let detail = format!(
        "{points} operating points, reachable dims {} vs {} (tail ratio {:.1e})",
        po.dim, hy.dim, po.tail_ratio
    );
    Ok(if failures.is_empty() {
        CheckResult::new("rank", true, detail)
    } else {
        CheckResult::new("rank", false, format!("{detail}; {}", failures.join("; ")))
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingRun {
    pub steps_to_band: Option<usize>,
    /// Geometric mean of `|e_{k+1}/e_k|` over the first steps.
    pub contraction: f64,
    pub predicted: f64,
}

/// Hybrid stepping toward `target` newtons on an undamped, frictionless surface.
pub fn track_force(stiffness: f64, target: f64, steps: usize) -> Result<TrackingRun> {
    let env = EnvParams { stiffness, damping: 0.0, friction: 0.0, ..Default::default() };
    let gains = HybridGains::for_stiffness(stiffness);
    let action = crate::flow::ActionVector::new([0.0; 3], Quaternion::IDENTITY, Wrench::from_force([0.0, 0.0, target]), 0.0);
    let mut s = SimState::at_rest(Pose::at([0.0, 0.0, env.offset - 0.001]), &env);
    let mut errors = vec![s.wrench.force[2] - target];
    let mut steps_to_band = None;
    for k in 1..=steps {
        s = step_hybrid(&s, &action, &env, &gains)?;
        let e = s.wrench.force[2] - target;
        errors.push(e);
        if steps_to_band.is_none() && e.abs() < 0.5 {
            steps_to_band = Some(k);
        }
    }
    let ratios: Vec<f64> = errors.windows(2).take(8).map(|w| (w[1] / w[0]).abs()).collect();
    let contraction = (ratios.iter().map(|r| r.ln()).sum::<f64>() / ratios.len() as f64).exp();
    Ok(TrackingRun { steps_to_band, contraction, predicted: 1.0 - gains.gain * stiffness })
}

pub fn check_force_tracking() -> Result<CheckResult> {
    let mut passed = true;
    let mut parts = Vec::new();
    for k in [1000.0, 1500.0, 2000.0] {
        let r = track_force(k, 20.0, 50)?;
        let rel = (r.contraction - r.predicted).abs() / r.predicted;
        passed &= r.steps_to_band.is_some() && rel <= 0.05;
        parts.push(format!("k={k}: {:?} steps, rate {:.4} vs {:.4}", r.steps_to_band, r.contraction, r.predicted));
    }
    Ok(CheckResult::new("tracking", passed, parts.join("; ")))
}

/// Windows built from samples, five per label, each meeting exactly one rule.
pub fn segmentation_suite() -> Vec<(SkillLabel, WindowFeatures)> {
    let window = |dp: Vec3, df: Vec3, jitter: f64| {
        let positions: Vec<Vec3> =
            (0..30).map(|k| { let s = k as f64 / 29.0; [dp[0] * s, dp[1] * s, -dp[2] * s] }).collect();
        let forces: Vec<Vec3> = (0..30)
            .map(|k| {
                let s = k as f64 / 29.0;
                [df[0] * s + jitter, df[1] * s, df[2] * s]
            })
            .collect();
        WindowFeatures::from_samples(&positions, &forces)
    };
    let mut suite = Vec::new();
    for i in 0..5 {
        let v = i as f64;
        suite.push((SkillLabel::Wipe, window([0.08 + 0.02 * v, 0.01, 0.0], [12.0 + v, 0.0, 0.5], 0.0)));
        suite.push((SkillLabel::Push, window([0.0, 0.0, 0.06 + 0.005 * v], [0.0, 0.0, 6.0 + v], 0.0)));
        suite.push((SkillLabel::Grasp, window([0.0, 0.0, 0.12 + 0.02 * v], [6.0 + 0.5 * v, 0.5, 0.0], 0.0)));
        suite.push((SkillLabel::Rotate, window([0.01, 0.0, 0.0], [1.5 + 0.5 * v, 1.5 + 0.3 * v, 2.0], 0.0)));
        suite.push((SkillLabel::Explore, window([0.01 * v, 0.0, 0.02], [0.5 * v, 0.2, 0.8], 0.1)));
    }
    suite
}

/// Rules satisfied by `w`, in precedence order.
pub fn satisfied_rules(w: &WindowFeatures, t: &SkillThresholds) -> Vec<SkillLabel> {
    let mut out = Vec::new();
    if w.max_position_change() > t.wipe_position && w.force_norm_amplitude > t.wipe_force {
        out.push(SkillLabel::Wipe);
    }
    if w.position_change[2] > t.push_z && w.force_change[2] > t.push_force_z {
        out.push(SkillLabel::Push);
    }
    if w.position_change[2] > t.grasp_z && w.force_norm_amplitude > t.grasp_force {
        out.push(SkillLabel::Grasp);
    }
    if w.force_change.iter().all(|&c| c > t.rotate_axis_force) {
        out.push(SkillLabel::Rotate);
    }
    out
}

pub fn check_segmentation() -> Result<CheckResult> {
    let t = SkillThresholds::default();
    let suite = segmentation_suite();
    let mut correct = 0;
    let mut exclusive = true;
    for (expected, w) in &suite {
        let rules = satisfied_rules(w, &t);
        let designed = match expected {
            SkillLabel::Explore => rules.is_empty(),
            other => rules == [*other],
        };
        exclusive &= designed;
        if classify_window(w, &t) == *expected && designed {
            correct += 1;
        }
    }
    Ok(CheckResult::new(
        "segmentation",
        correct == suite.len() && exclusive,
        format!("{correct}/{} windows labelled as designed", suite.len()),
    ))
}

/// A structurally valid trajectory with random contents.
pub fn random_trajectory(rng: &mut ChaCha8Rng) -> Trajectory {
    let n = rng.random_range(1..40usize);
    let cams = rng.random_range(1..4usize);
    let mut f = |lo: f64, hi: f64| rng.random_range(lo..hi);
    let frames = (0..n)
        .map(|_| VisualObservation {
            cameras: (0..cams)
                .map(|c| CameraFrame {
                    camera_id: c as u32,
                    features: Matrix::new(2, 3, (0..6).map(|_| f(-1e3, 1e3)).collect()).expect("2×3"),
                })
                .collect(),
        })
        .collect();
    let poses = (0..n)
        .map(|_| {
            let rot = [f(-2.0, 2.0), f(-2.0, 2.0), f(-2.0, 2.0)];
            Pose::new([f(-1.0, 1.0), f(-1.0, 1.0), f(-1.0, 1.0)], Quaternion::from_rotation_vector(rot))
                .expect("unit quaternion")
        })
        .collect();
    let wrenches = (0..n).map(|_| Wrench::from_slice(&[f(-100.0, 100.0), f(-100.0, 100.0), f(-100.0, 100.0), f(-15.0, 15.0), f(-15.0, 15.0), f(-15.0, 15.0)]).expect("six")).collect();
    let actions = (0..n).map(|_| std::array::from_fn(|_| f(-1.0, 1.0))).collect();
    let progress = (0..n).map(|_| f(0.0, 1.0)).collect();
    let cut = rng.random_range(1..=n);
    let mut segments = vec![SubtaskSegment { start: 0, end: cut, prompt: "approach".into(), force: ForceCondition::Ignored }];
    if cut < n {
        let m = rng.random_range(1.0..50.0);
        segments.push(SubtaskSegment { start: cut, end: n, prompt: "press: hold".into(), force: ForceCondition::Range { n: 0.0, m } });
    }
    let labels = [SkillLabel::Wipe, SkillLabel::Push, SkillLabel::Grasp, SkillLabel::Rotate, SkillLabel::Explore];
    let skills = (0..n.div_ceil(5)).map(|_| labels[rng.random_range(0..5)]).collect();
    let t0 = rng.random_range(0.0..100.0);
    Trajectory {
        task: "press".into(),
        task_prompt: "press the bottle".into(),
        seed: rng.random(),
        timestamps: (0..n).map(|k| t0 + k as f64 / 30.0).collect(),
        frames,
        poses,
        wrenches,
        actions,
        progress,
        segments,
        skills,
    }
}

pub fn check_serialization(opts: &VerifyOptions) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut exact = 0;
    for _ in 0..opts.roundtrips {
        let t = random_trajectory(&mut rng);
        let bytes = encode_trajectory(&t)?;
        let back = decode_trajectory(&bytes)?;
        let same_bits = back.wrenches.iter().zip(&t.wrenches).all(|(a, b)| {
            a.force.iter().chain(&a.torque).zip(b.force.iter().chain(&b.torque)).all(|(x, y)| x.to_bits() == y.to_bits())
        });
        if back == t && same_bits && encode_trajectory(&back)? == bytes {
            exact += 1;
        }
    }
    Ok(CheckResult::new(
        "serialization",
        exact == opts.roundtrips,
        format!("{exact}/{} trajectories round-trip bit-exactly", opts.roundtrips),
    ))
}

/// Relative error of the frame-rate wrench integral against the raw stream
/// on smooth ramps.
pub fn sync_integral_error(slope: f64, curvature: f64) -> Result<f64> {
    let frame_period = 1.0 / crate::data::CAMERA_RATE_HZ;
    let dt = 1.0 / crate::data::WRENCH_RATE_HZ;
    let n_frames = 30;
    let duration = n_frames as f64 * frame_period;
    let signal = |t: f64| 5.0 + slope * t + curvature * t * t;
    let wrenches: Vec<(f64, Wrench)> = (0..(duration / dt).round() as usize)
        .map(|i| {
            let t = i as f64 * dt;
            (t, Wrench::from_slice(&[signal(t), -signal(t), 2.0 * signal(t), 0.1 * signal(t), 0.0, 1.0]).expect("six"))
        })
        .collect();
    let frame = VisualObservation { cameras: vec![CameraFrame { camera_id: 0, features: Matrix::zeros(1, 2) }] };
    let frames: Vec<(f64, VisualObservation)> = (0..n_frames).map(|k| (k as f64 * frame_period, frame.clone())).collect();
    let poses: Vec<(f64, Pose)> = (0..n_frames).map(|k| (k as f64 * frame_period, Pose::at([0.0; 3]))).collect();
    let sync = synchronize_streams(&wrenches, &frames, &poses, frame_period)?;
    let mut worst = 0.0f64;
    for axis in 0..4 {
        let comp = |w: &Wrench| if axis < 3 { w.force[axis] } else { w.torque[axis - 3] };
        let raw: f64 = wrenches.iter().map(|(_, w)| comp(w) * dt).sum();
        let resampled: f64 = sync.wrenches.iter().map(|w| comp(w) * frame_period).sum();
        worst = worst.max((resampled - raw).abs() / raw.abs());
    }
    Ok(worst)
}

pub fn check_sync() -> Result<CheckResult> {
    let mut worst = 0.0f64;
    for (slope, curvature) in [(10.0, 0.0), (-3.0, 0.0), (4.0, 2.0), (0.5, -1.0)] {
        worst = worst.max(sync_integral_error(slope, curvature)?);
    }
    Ok(CheckResult::new("sync", worst < 0.01, format!("max relative integral error {worst:.2e} (limit 1e-2)")))
}

/// Stored demonstration labels against the sampling oracle at every step.
pub fn check_labels(opts: &VerifyOptions) -> Result<CheckResult> {
    let params = TransitionParams::default();
    let mut total = 0;
    let mut within = 0;
    for (i, task) in TaskKind::ALL.iter().enumerate() {
        let t = generate_demonstration(*task, opts.seed.wrapping_add(i as u64), crate::sim::DEFAULT_HORIZON, params)?;
        for k in 0..t.len() {
            let obs = transition_observation(&t, k, params)?;
            let mc = mc_transition_oracle(&obs, 100_000, opts.seed.wrapping_add((i * 1000 + k) as u64))?;
            let s = t.progress[k];
            let se = (s * (1.0 - s) / mc.samples as f64).sqrt();
            total += 1;
            if (s - mc.estimate).abs() <= 3.0 * se + 1e-12 {
                within += 1;
            }
        }
    }
    Ok(CheckResult::new(
        "labels",
        within as f64 >= 0.99 * total as f64,
        format!("{within}/{total} stored labels within 3 SE of the oracle"),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> VerifyOptions {
        VerifyOptions { mc_samples: 10_000, gradcheck_instances: 2, roundtrips: 20, ..Default::default() }
    }

    #[test]
    fn cheap_checks_pass() {
        for name in ["gamma", "moe", "flow", "tracking", "segmentation", "serialization", "sync"] {
            let r = run_check(name, &quick()).unwrap();
            assert!(r.passed, "{name}: {}", r.detail);
        }
    }

    #[test]
    fn injected_constant_fault_is_caught() {
        let opts = VerifyOptions { mc_samples: 200_000, ..quick() };
        let faulty = check_transition_oracle(&VerifyOptions { fault: Fault::TransitionConstant, ..opts }).unwrap();
        assert!(!faulty.passed, "{}", faulty.detail);
    }

    #[test]
    fn unknown_check_is_an_error() {
        assert!(run_check("nonsense", &quick()).is_err());
    }

    #[test]
    fn suite_covers_each_label_five_times() {
        let suite = segmentation_suite();
        for label in [SkillLabel::Wipe, SkillLabel::Push, SkillLabel::Grasp, SkillLabel::Rotate, SkillLabel::Explore] {
            assert_eq!(suite.iter().filter(|(l, _)| *l == label).count(), 5);
        }
    }

    #[test]
    fn slope_of_power_law() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(-1.5)).collect();
        assert!((log_log_slope(&xs, &ys) + 1.5).abs() < 1e-12);
    }
}
