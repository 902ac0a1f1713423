//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use foca_core::context::{parse_prompt_corpus, CameraFrame, VisualObservation, DEFAULT_CORPUS};
use foca_core::control::{analyze, controllability_matrix, reachable_dim_estimate, ControlMode, LinearSystem, ReachController};
use foca_core::data::trajectory::{ForceCondition, SubtaskSegment};
use foca_core::data::{
    classify_window, decode_trajectory, encode_trajectory, synchronize_streams, SkillLabel, SkillThresholds,
    Trajectory, WindowFeatures,
};
use foca_core::flow::{euler_integrate, ActionVector, ACTION_DIM};
use foca_core::geometry::{Pose, Quaternion, Vec3, Wrench};
use foca_core::moe::{AblationMask, ExpertBank, RoutingMode};
use foca_core::nn::{value_and_grad, Graph, Matrix, ParamSet};
use foca_core::policy::{ForcePolicy, PolicyConfig, PolicyInput};
use foca_core::sim::{
    default_plan, generate_demonstration, rollout, step_hybrid, EnvParams, HybridGains, RolloutConfig, Scene,
    SimState, TaskKind, DEFAULT_HORIZON,
};
use foca_core::state::{ConditionedSequence, Spans};
use foca_core::train::{train_policy, TrainConfig};
use foca_core::transition::{transition_probability, TransitionObservation, TransitionParams};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

/// `θ^α · e^(−λl) · (f − n)/(m − n)` written out directly.
fn product_form(theta: f64, l: f64, f: f64, p: TransitionParams) -> f64 {
    theta.powf(p.alpha) * (-p.lambda * l).exp() * (f - p.n) / (p.m - p.n)
}

/// Frequency of `{Θ ≤ θ, L ≥ l, F ≤ f}` with inverse-CDF draws:
/// `Θ = U^(1/α)`, `L = −ln(U)/λ`, `F = n + (m − n)U`.
fn inverse_cdf_oracle(theta: f64, l: f64, f: f64, p: TransitionParams, samples: usize, seed: u64) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0;
    for _ in 0..samples {
        let th = rng.random::<f64>().powf(1.0 / p.alpha);
        let dist = -(1.0 - rng.random::<f64>()).ln() / p.lambda;
        let force = p.n + (p.m - p.n) * rng.random::<f64>();
        if th <= theta && dist >= l && force <= f {
            hits += 1;
        }
    }
    (hits as f64 / samples as f64, samples)
}

fn within_3se(closed: f64, estimate: f64, samples: usize) -> bool {
    let se = (closed * (1.0 - closed) / samples as f64).sqrt();
    (closed - estimate).abs() <= 3.0 * se + 1e-12
}

fn random_observation(rng: &mut ChaCha8Rng, alpha: f64, lambda: f64) -> TransitionObservation {
    let n = rng.random_range(0.0..30.0);
    let m = n + rng.random_range(1.0..80.0);
    TransitionObservation::new(
        rng.random_range(0.0..=1.0),
        rng.random_range(0.0..2.0),
        rng.random_range(n..=m),
        TransitionParams { alpha, lambda, n, m },
    )
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut ok = 0;
    for i in 0..100 {
        let obs = random_observation(&mut rng, 2.0, 2.0);
        let closed = transition_probability(&obs).unwrap();
        let (est, n) = inverse_cdf_oracle(obs.theta, obs.distance, obs.force, obs.params, 1_000_000, 7_000 + i);
        ok += usize::from(within_3se(closed, est, n));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(ok >= 99 && secs < 60.0, format!("{ok}/100 within 3 SE of 1e6-sample oracle in {secs:.1} s"))
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for alpha in [1.0, 2.0, 3.0, 5.0] {
        for _ in 0..1000 {
            let lambda = rng.random_range(0.1..5.0);
            let obs = random_observation(&mut rng, alpha, lambda);
            let general = transition_probability(&obs).unwrap();
            worst = worst.max((general - product_form(obs.theta, obs.distance, obs.force, obs.params)).abs());
        }
    }
    outcome(worst <= 1e-12, format!("max |general − product| = {worst:.2e} over 4000 inputs"))
}

fn criterion_3() -> Outcome {
    let cfg = PolicyConfig { d_model: 4, chunk: 2, hidden: 8, time_dim: 4, blocks: 1, ..Default::default() };
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let p = ForcePolicy::with_default_corpus(cfg.clone(), 100 + seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let task = TaskKind::ALL[seed as usize % 3];
        let scene = Scene::sample(task, seed);
        let mut s = SimState::at_rest(scene.start, &scene.env);
        s.wrench = Wrench::from_force([rng.random_range(-3.0..3.0), 0.5, rng.random_range(0.0..30.0)]);
        let visual = scene.render(&s);
        let input = PolicyInput {
            visual: &visual,
            pose: &s.pose,
            wrench: &s.wrench,
            task_prompt: task.task_prompt(),
            force_prompt: task.subtask_prompts()[seed as usize % 3],
            progress: rng.random_range(0.0..1.0),
        };
        let dims = cfg.action_dim();
        let row = |rng: &mut ChaCha8Rng| Matrix::row_vector(&(0..dims).map(|_| rng.random_range(-1.5..1.5)).collect::<Vec<_>>());
        let (targets, noise) = (row(&mut rng), row(&mut rng));
        let tau = [rng.random_range(0.05..0.95)];
        let (_, grads) = value_and_grad(&p.params, |g| p.loss(g, &[input], &targets, &noise, &tau)).unwrap();
        let analytic = grads.flatten();
        let mut x = p.params.flatten();
        let mut work = p.params.clone();
        let mut loss = |x: &[f64]| {
            work.assign_flat(x).unwrap();
            let mut g = Graph::new(&work);
            let l = p.loss(&mut g, &[input], &targets, &noise, &tau).unwrap();
            g.value(l).data()[0]
        };
        let h = 1e-5;
        for i in 0..x.len() {
            let orig = x[i];
            x[i] = orig + h;
            let up = loss(&x);
            x[i] = orig - h;
            let down = loss(&x);
            x[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    outcome(worst < 1e-4, format!("max relative error {worst:.2e} over 20 seeded pipelines"))
}

fn criterion_4() -> Outcome {
    let d = 6;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut params = ParamSet::new();
    let bank = ExpertBank::new(&mut params, "moe", d, &mut rng).unwrap();
    let mut simplex = 0.0f64;
    for _ in 0..100_000 {
        let token: Vec<f64> = (0..d).map(|_| rng.random_range(-20.0..20.0)).collect();
        let w = bank.gate(&params, &token).unwrap();
        simplex = simplex.max((w.iter().sum::<f64>() - 1.0).abs());
        if w.iter().any(|v| *v < 0.0) {
            simplex = f64::INFINITY;
        }
    }
    let rows = 40;
    let tokens = Matrix::new(rows, d, (0..rows * d).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
    let mut g = Graph::new(&params);
    let t = g.input(tokens.clone());
    let seq = ConditionedSequence { tokens: t, spans: Spans { context: 0..rows - 2, state: rows - 2..rows - 1, bypass: rows - 1..rows } };
    let soft = bank.forward(&mut g, &seq, AblationMask::default(), RoutingMode::Soft).unwrap();
    let hard = bank.forward(&mut g, &seq, AblationMask::default(), RoutingMode::Top1).unwrap();
    let (soft, hard) = (g.value(soft).clone(), g.value(hard).clone());
    let mut exact = true;
    let mut residual = 0.0f64;
    for r in 0..rows {
        let outs = bank.expert_outputs(&params, tokens.row(r)).unwrap();
        let w = bank.gate(&params, tokens.row(r)).unwrap();
        let best = (0..3).fold(0, |b, m| if w[m] > w[b] { m } else { b });
        exact &= hard.row(r) == outs[best].as_slice();
        // barycentric coordinates by least squares with Σλ = 1 eliminated
        let a = DMatrix::from_fn(d, 2, |j, c| outs[c][j] - outs[2][j]);
        let b = DVector::from_fn(d, |j, _| soft.row(r)[j] - outs[2][j]);
        let lam = a.clone().svd(true, true).solve(&b, 1e-14).unwrap();
        let coords = [lam[0], lam[1], 1.0 - lam[0] - lam[1]];
        residual = residual.max((&a * &lam - &b).norm());
        if coords.iter().any(|c| *c < -1e-9) {
            residual = f64::INFINITY;
        }
    }
    outcome(
        simplex <= 1e-12 && exact && residual < 1e-9,
        format!("simplex error {simplex:.1e}, one-hot exact {exact}, barycentric residual {residual:.1e}"),
    )
}

fn criterion_5() -> Outcome {
    let c = [0.3, -2.0, 1.25];
    let mut const_err = 0.0f64;
    for n in 1..=64 {
        let a = euler_integrate(&[1.0, 0.0, -1.0], n, |_, _| Ok(c.to_vec())).unwrap();
        const_err = const_err.max((a[0] - 1.3).abs()).max((a[1] + 2.0).abs()).max((a[2] - 0.25).abs());
    }
    let ns: Vec<f64> = (0..7).map(|k| 8.0 * 2f64.powi(k)).collect();
    let errs: Vec<f64> = ns
        .iter()
        .map(|&n| (euler_integrate(&[1.0], n as usize, |a, _| Ok(vec![a[0]])).unwrap()[0] - 1f64.exp()).abs())
        .collect();
    let lx: Vec<f64> = ns.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = errs.iter().map(|v| v.ln()).collect();
    let (mx, my) = (lx.iter().sum::<f64>() / 7.0, ly.iter().sum::<f64>() / 7.0);
    let slope = -lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / lx.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    let growth = euler_integrate(&[1.0], 10, |a, _| Ok(vec![a[0]])).unwrap()[0];
    let passed = const_err < 1e-12 && (0.8..=1.2).contains(&slope) && (growth - 2.5937).abs() <= 1e-4;
    outcome(passed, format!("constant error {const_err:.1e}, slope {slope:.3}, N=10 gives {growth:.6}"))
}

fn evaluate(policy: &foca_core::policy::ForcePolicy, params: &ParamSet, drop: bool) -> (usize, usize) {
    let mut success = 0;
    let mut overloaded = 0;
    for s in 0..50u64 {
        let mut scene = Scene::sample(TaskKind::Press, 10_000 + s);
        if drop {
            scene = scene.with_base_drop();
        }
        let mut runner = policy.runner(params, s);
        let (_, m) = rollout(&mut runner, scene, default_plan(TaskKind::Press), &RolloutConfig::default()).unwrap();
        success += usize::from(m.success);
        overloaded += usize::from(m.overloads > 0);
    }
    (success, overloaded)
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let demos: Vec<Trajectory> = (0..200)
        .map(|s| generate_demonstration(TaskKind::Press, s, DEFAULT_HORIZON, TransitionParams::default()).unwrap())
        .collect();
    let corpus = parse_prompt_corpus(DEFAULT_CORPUS).unwrap();
    let full = train_policy(PolicyConfig::default(), corpus.clone(), &demos, TrainConfig::default(), |_| {}).unwrap();
    let (ok, over) = evaluate(&full.policy, &full.ema, false);
    let po_cfg = PolicyConfig { position_only: true, ..Default::default() };
    let po = train_policy(po_cfg, corpus, &demos, TrainConfig::default(), |_| {}).unwrap();
    let (_, po_over) = evaluate(&po.policy, &po.ema, true);
    let mins = start.elapsed().as_secs_f64() / 60.0;
    outcome(
        ok >= 40 && over == 0 && po_over >= 25 && mins < 30.0,
        format!(
            "full policy {ok}/50 successes with {over} overload episodes; position-only on base drop overloads in {po_over}/50; {mins:.1} min"
        ),
    )
}

fn rank(m: &Matrix) -> usize {
    let a = DMatrix::from_row_slice(m.rows(), m.cols(), m.data());
    let s = a.singular_values();
    let max = s.max();
    let tol = m.rows().max(m.cols()) as f64 * f64::EPSILON * max;
    s.iter().filter(|v| **v > tol).count()
}

fn criterion_7() -> Outcome {
    let mut ok = true;
    let mut seen = Vec::new();
    for k in [800.0, 1200.0, 2000.0] {
        let env = EnvParams { stiffness: k, ..Default::default() };
        for depth in [0.002, 0.02] {
            let point = [0.05, 0.01, -depth, 0.1, 0.0, -0.2];
            let po = analyze(&env, point, ControlMode::PositionOnly).unwrap();
            let hy = analyze(&env, point, ControlMode::Hybrid).unwrap();
            ok &= (po.rank, po.kappa, hy.rank, hy.kappa) == (6, 0.5, 12, 1.0);
            // literal system: A = 0, B = [I 0; J K] with J = −k e_z e_zᵀ
            let mut b_po = Matrix::zeros(12, 6);
            let mut b_hy = Matrix::zeros(12, 12);
            for i in 0..6 {
                b_po.row_mut(i)[i] = 1.0;
                b_hy.row_mut(i)[i] = 1.0;
                b_hy.row_mut(6 + i)[6 + i] = 1.0;
            }
            b_po.row_mut(8)[2] = -k;
            b_hy.row_mut(8)[2] = -k;
            let lit = |b: Matrix| {
                let n = b.cols();
                rank(&controllability_matrix(&LinearSystem { a: Matrix::zeros(12, 12), b, mode: if n == 6 { ControlMode::PositionOnly } else { ControlMode::Hybrid } }).unwrap())
            };
            ok &= rank(&po.c) == 6 && rank(&hy.c) == 12 && lit(b_po) == 6 && lit(b_hy) == 12;
            seen.push((po.rank, hy.rank));
        }
    }
    let env = EnvParams::default();
    let center = [0.0, 0.0, -0.015, 0.0, 0.0, 0.0];
    let po = reachable_dim_estimate(&env, center, ReachController::PositionOnly, 10_000, 3).unwrap();
    let hy = reachable_dim_estimate(&env, center, ReachController::HybridIdealized { gain: 1.0 }, 10_000, 3).unwrap();
    ok &= po.dim == 6 && hy.dim == 12 && po.tail_ratio < 1e-6;
    outcome(
        ok,
        format!("ranks {seen:?}; sampled reachable dims {} vs {} (tail ratio {:.1e})", po.dim, hy.dim, po.tail_ratio),
    )
}

fn criterion_8() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for k in [1000.0, 1500.0, 2000.0] {
        let env = EnvParams { stiffness: k, damping: 0.0, friction: 0.0, ..Default::default() };
        let gains = HybridGains::for_stiffness(k);
        let g = gains.gain;
        let action = ActionVector::new([0.0; 3], Quaternion::IDENTITY, Wrench::from_force([0.0, 0.0, 20.0]), 0.0);
        let mut s = SimState::at_rest(Pose::at([0.0, 0.0, -0.002]), &env);
        let mut errs = vec![s.wrench.force[2] - 20.0];
        for _ in 0..50 {
            s = step_hybrid(&s, &action, &env, &gains).unwrap();
            errs.push(s.wrench.force[2] - 20.0);
        }
        let first = errs.iter().position(|e| e.abs() < 0.5);
        let rate = (errs[4] / errs[0]).abs().powf(0.25);
        let predicted = 1.0 - g * k;
        ok &= first.is_some_and(|n| n <= 50) && ((rate - predicted) / predicted).abs() <= 0.05;
        parts.push(format!("k={k}: band at step {first:?}, rate {rate:.4} vs {predicted:.4}"));
    }
    outcome(ok, parts.join("; "))
}

fn features(dp: Vec3, df: Vec3) -> WindowFeatures {
    let positions: Vec<Vec3> = (0..20).map(|k| { let s = (k as f64 / 19.0).powi(2); [dp[0] * s, dp[1] * s, dp[2] * s] }).collect();
    let forces: Vec<Vec3> = (0..20).map(|k| { let s = (k as f64 * 0.3).sin().abs(); [df[0] * s, df[1] * s, df[2] * s] }).collect();
    WindowFeatures::from_samples(&positions, &forces)
}

/// Segmentation rules evaluated independently, in table order.
fn rules(w: &WindowFeatures) -> Vec<SkillLabel> {
    let p = w.position_change;
    let f = w.force_change;
    let maxp = p[0].max(p[1]).max(p[2]);
    let mut out = Vec::new();
    if maxp > 0.05 && w.force_norm_amplitude > 10.0 {
        out.push(SkillLabel::Wipe);
    }
    if p[2] > 0.05 && f[2] > 5.0 {
        out.push(SkillLabel::Push);
    }
    if p[2] > 0.1 && w.force_norm_amplitude > 5.0 {
        out.push(SkillLabel::Grasp);
    }
    if f[0] > 1.0 && f[1] > 1.0 && f[2] > 1.0 {
        out.push(SkillLabel::Rotate);
    }
    out
}

fn criterion_9() -> Outcome {
    let mut suite = Vec::new();
    for i in 0..5 {
        let v = i as f64;
        suite.push((SkillLabel::Wipe, features([0.06 + 0.03 * v, 0.0, 0.0], [11.0 + 2.0 * v, 0.0, 0.0])));
        suite.push((SkillLabel::Push, features([0.0, 0.0, 0.07 + 0.005 * v], [0.0, 0.0, 5.5 + v])));
        suite.push((SkillLabel::Grasp, features([0.0, 0.01, 0.11 + 0.03 * v], [0.0, 5.5 + 0.8 * v, 0.0])));
        suite.push((SkillLabel::Rotate, features([0.0, 0.02, 0.0], [1.2 + v, 2.0, 1.1 + 0.4 * v])));
        suite.push((SkillLabel::Explore, features([0.01 * v, 0.0, 0.04], [0.9, 4.0 * v, 0.3])));
    }
    let t = SkillThresholds::default();
    let mut matched = 0;
    let mut designed = true;
    for (label, w) in &suite {
        let r = rules(w);
        designed &= if *label == SkillLabel::Explore { r.is_empty() } else { r == [*label] };
        let got = classify_window(w, &t);
        matched += usize::from(got == *label);
        designed &= (got == SkillLabel::Explore) == r.is_empty();
    }
    outcome(matched == 25 && designed, format!("{matched}/25 windows match; one rule per window: {designed}"))
}

fn random_trajectory(rng: &mut ChaCha8Rng) -> Trajectory {
    let n = rng.random_range(1..30usize);
    let cams = rng.random_range(1..4usize);
    let feat = rng.random_range(1..5usize);
    let frames = (0..n)
        .map(|_| VisualObservation {
            cameras: (0..cams)
                .map(|c| CameraFrame {
                    camera_id: 10 + c as u32,
                    features: Matrix::new(1, feat, (0..feat).map(|_| rng.random::<f64>() * 1e6 - 5e5).collect()).unwrap(),
                })
                .collect(),
        })
        .collect();
    let poses = (0..n)
        .map(|_| {
            let q = Quaternion::from_rotation_vector([rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), 0.2]);
            Pose::new([rng.random(), rng.random(), -rng.random::<f64>()], q).unwrap()
        })
        .collect();
    let cut = rng.random_range(1..=n);
    let mut segments = vec![SubtaskSegment { start: 0, end: cut, prompt: "move to the bottle".into(), force: ForceCondition::Ignored }];
    if cut < n {
        segments.push(SubtaskSegment { start: cut, end: n, prompt: "wipe: 10 N".into(), force: ForceCondition::Range { n: 1.0, m: 30.0 } });
    }
    Trajectory {
        task: "wipe".into(),
        task_prompt: "wipe the table".into(),
        seed: rng.random(),
        timestamps: (0..n).map(|k| 0.5 + k as f64 * 0.0333).collect(),
        frames,
        poses,
        wrenches: (0..n).map(|_| Wrench::from_slice(&(0..6).map(|_| rng.random_range(-200.0..200.0)).collect::<Vec<_>>()).unwrap()).collect(),
        actions: (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-1e-3..1e-3))).collect::<Vec<[f64; ACTION_DIM]>>(),
        progress: (0..n).map(|_| rng.random()).collect(),
        segments,
        skills: (0..n.div_ceil(7)).map(|i| SkillLabel::ALL[i % 5]).collect(),
    }
}

/// Third column of the rotation matrix of `q = (w, x, y, z)`.
fn z_axis(q: &Quaternion) -> Vec3 {
    let [w, x, y, z] = q.0;
    [2.0 * (x * z + w * y), 2.0 * (y * z - w * x), 1.0 - 2.0 * (x * x + y * y)]
}

fn criterion_10() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut exact = 0;
    for _ in 0..1000 {
        let t = random_trajectory(&mut rng);
        let bytes = encode_trajectory(&t).unwrap();
        let back = decode_trajectory(&bytes).unwrap();
        let bits = |t: &Trajectory| -> Vec<u64> {
            t.wrenches.iter().flat_map(|w| w.to_array()).chain(t.actions.iter().flatten().copied()).map(f64::to_bits).collect()
        };
        exact += usize::from(back == t && bits(&back) == bits(&t));
    }

    // ramp f(t) = a + b·t sampled at 300 Hz, frames at 30 Hz
    let (a, b) = (4.0, 25.0);
    let period = 1.0 / 30.0;
    let frames = 45;
    let wrenches: Vec<(f64, Wrench)> =
        (0..frames * 10).map(|i| { let t = i as f64 / 300.0; (t, Wrench::from_force([a + b * t, 0.0, -(a + b * t)])) }).collect();
    let frame = VisualObservation { cameras: vec![CameraFrame { camera_id: 0, features: Matrix::zeros(1, 1) }] };
    let cams: Vec<_> = (0..frames).map(|k| (k as f64 * period, frame.clone())).collect();
    let poses: Vec<_> = (0..frames).map(|k| (k as f64 * period, Pose::at([0.0; 3]))).collect();
    let sync = synchronize_streams(&wrenches, &cams, &poses, period).unwrap();
    let total = frames as f64 * period;
    let analytic = a * total + 0.5 * b * total * total;
    let resampled: f64 = sync.wrenches.iter().map(|w| w.force[0] * period).sum();
    let integral_err = (resampled - analytic).abs() / analytic;

    // labels against the inverse-CDF oracle, recomputed from raw poses and wrenches
    let params = TransitionParams::default();
    let (mut agree, mut total_labels) = (0, 0);
    for (i, task) in TaskKind::ALL.iter().enumerate() {
        let t = generate_demonstration(*task, 500 + i as u64, DEFAULT_HORIZON, params).unwrap();
        for k in (0..t.len()).step_by(3) {
            let seg = t.segments.iter().find(|s| s.start <= k && k < s.end).unwrap();
            let target = t.poses[seg.end - 1];
            let (e, et) = (z_axis(&t.poses[k].orientation), z_axis(&target.orientation));
            let cos = (e[0] * et[0] + e[1] * et[1] + e[2] * et[2]).clamp(-1.0, 1.0);
            let theta = 0.5 * (cos + 1.0);
            let d = t.poses[k].position.iter().zip(&target.position).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            let (p, f) = match seg.force {
                ForceCondition::Ignored => (params, params.m),
                ForceCondition::Range { n, m } => {
                    let fz = t.wrenches[k].force.iter().map(|v| v * v).sum::<f64>().sqrt();
                    (TransitionParams { n, m, ..params }, fz.clamp(n, m))
                }
            };
            let recomputed = product_form(theta, d, f, p);
            let (est, n) = inverse_cdf_oracle(theta, d, f, p, 200_000, 31 * k as u64 + i as u64);
            total_labels += 1;
            agree += usize::from((recomputed - t.progress[k]).abs() < 1e-9 && within_3se(recomputed, est, n));
        }
    }
    let passed = exact == 1000 && integral_err < 0.01 && agree as f64 >= 0.99 * total_labels as f64;
    outcome(
        passed,
        format!(
            "{exact}/1000 bit-exact round trips; ramp integral error {integral_err:.2e}; {agree}/{total_labels} labels agree"
        ),
    )
}

fn foca(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_foca")).args(args).env_remove("FOCA_SEED").output().unwrap()
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

fn criterion_11() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let cfg = root.join("tiny.cfg");
    std::fs::write(&cfg, "d_model = 8\nhidden = 32\nchunk = 6\nblocks = 1\nbatch_size = 8\nsteps = 40\n").unwrap();
    let mut same = Vec::new();
    let verify: Vec<_> = (0..2).map(|_| foca(&["verify"])).collect();
    same.push(("verify", verify[0].status.success() && verify[0].stdout == verify[1].stdout));
    for run in ["a", "b"] {
        let data = root.join(run).join("data");
        let out = foca(&["generate", "--task", "wipe", "--count", "6", "--seed", "9", "--out", data.to_str().unwrap()]);
        assert!(out.status.success());
        let train = root.join(run).join("train");
        let out = foca(&[
            "train", "--data", data.to_str().unwrap(), "--config", cfg.to_str().unwrap(), "--seed", "5", "--out",
            train.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let pair = |sub: &str| dir_bytes(&root.join("a").join(sub)) == dir_bytes(&root.join("b").join(sub));
    same.push(("generate", pair("data")));
    same.push(("train", pair("train")));
    let ok = same.iter().all(|(_, s)| *s);
    outcome(ok, same.iter().map(|(n, s)| format!("{n} identical: {s}")).collect::<Vec<_>>().join(", "))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("transition closed form vs sampling oracle", criterion_1),
        ("Gamma identity", criterion_2),
        ("pipeline gradient fidelity", criterion_3),
        ("mixture-of-experts contracts", criterion_4),
        ("flow sampler correctness", criterion_5),
        ("toy policy learning", criterion_6),
        ("controllability ranks", criterion_7),
        ("hybrid force tracking", criterion_8),
        ("segmentation conformance", criterion_9),
        ("data integrity", criterion_10),
        ("determinism gate", criterion_11),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if only.is_some_and(|o| o != i + 1) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        println!(
            "criterion {:>2} {}: {} ({}; {:.1} s)",
            i + 1,
            if o.passed { "PASS" } else { "FAIL" },
            name,
            o.detail,
            start.elapsed().as_secs_f64()
        );
        failed += usize::from(!o.passed);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
