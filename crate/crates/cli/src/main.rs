use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use foca_core::config::{parse_switch, KeyValues};
use foca_core::context::{parse_prompt_corpus, TaskPrompts, DEFAULT_CORPUS};
use foca_core::control::{analyze, reachable_dim_estimate, reports_csv, ControlMode, ReachController};
use foca_core::data::{
    dataset_stats, read_trajectory, segment_skills, write_trajectory, DatasetManifest, SkillThresholds, Trajectory,
};
use foca_core::moe::AblationMask;
use foca_core::nn::ParamSet;
use foca_core::policy::{Components, ForcePolicy, PolicyConfig};
use foca_core::sim::{
    default_plan, generate_demonstration, rollout, EnvConfig, ExpertPolicy, Policy, RolloutConfig, RolloutMetrics,
    TaskKind, ZeroPolicy, DEFAULT_HORIZON,
};
use foca_core::state::InjectionVariant;
use foca_core::train::{
    build_examples, read_checkpoint, write_checkpoint, LossRecord, TrainConfig, Trainer,
};
use foca_core::transition::TransitionParams;
use foca_core::verify::{run_checks, Fault, VerifyOptions, CHECKS};
use foca_core::Error;

const EXIT_VERIFY: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_MISSING: u8 = 3;
const EXIT_NUMERIC: u8 = 4;
const EXIT_INCOMPATIBLE: u8 = 5;

const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
const EMA_FILE: &str = "ema.ckpt";
const LOSS_FILE: &str = "loss.csv";
const MANIFEST_FILE: &str = "manifest.txt";
const TRAJECTORY_EXT: &str = "traj";

/// Force-aware flow-matching policy toolkit.
#[derive(Parser, Debug)]
#[command(name = "foca", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write scripted-expert demonstrations and a manifest.
    Generate {
        #[arg(long, default_value = "press")]
        task: String,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a policy on a directory of demonstrations.
    Train(TrainArgs),
    /// Evaluate a checkpoint or a reference policy in simulation.
    Rollout(RolloutArgs),
    /// Train and evaluate the variants of an ablation suite.
    Ablate(AblateArgs),
    /// Controllability report for position-only and hybrid control.
    Analyze {
        /// Environment config file.
        #[arg(long)]
        env: Option<PathBuf>,
        /// Comma-separated penetration depths in meters.
        #[arg(long, default_value = "0.001,0.01,0.05")]
        depths: String,
        /// Sampled pairs for the empirical reachable dimension.
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the CSV report here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Skill labels per window of each trajectory.
    Segment {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value_t = foca_core::data::DEFAULT_WINDOW)]
        window: usize,
    },
    /// Wrench histograms and skill fractions over a dataset.
    Stats {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Run the built-in verification checks.
    Verify {
        /// Subset of checks, comma separated.
        #[arg(long, value_delimiter = ',')]
        only: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Deliberately break a component to confirm a check catches it.
        #[arg(long, value_enum)]
        inject_fault: Option<FaultArg>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FaultArg {
    Transition,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Suite {
    Components,
    MoeModality,
    Injection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Builtin {
    Expert,
    Zero,
}

#[derive(Args, Debug, Clone, Default)]
struct ModelArgs {
    /// `key = value` file with policy and training keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Start from the training-table values (30k steps).
    #[arg(long)]
    paper_config: bool,
    /// Zero the force channel and execute positions only.
    #[arg(long)]
    position_only: bool,
    #[arg(long, value_parser = parse_switch_arg)]
    moe_vm: Option<bool>,
    #[arg(long, value_parser = parse_switch_arg)]
    moe_fm: Option<bool>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Continue from this checkpoint; its step counter and moments are kept.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug, Clone)]
struct EvalArgs {
    /// Environment config file.
    #[arg(long)]
    env: Option<PathBuf>,
    #[arg(long, default_value = "press")]
    task: String,
    #[arg(long, default_value_t = 20)]
    episodes: usize,
    /// Seed of the first scene; episode `i` uses `seed + i`.
    #[arg(long)]
    scene_seed: Option<u64>,
    /// Mid-episode base drop in every scene.
    #[arg(long)]
    base_drop: bool,
    /// Actions executed per chunk before re-planning (default: whole chunk).
    #[arg(long)]
    replan: Option<usize>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args, Debug)]
struct RolloutArgs {
    #[arg(long, conflicts_with = "policy")]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    policy: Option<Builtin>,
    #[command(flatten)]
    eval: EvalArgs,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long, value_enum)]
    suite: Suite,
    /// Demonstration directory; generated from `--demos` seeds when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    demos: usize,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    eval: EvalArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_switch_arg(s: &str) -> Result<bool, String> {
    parse_switch(s).map_err(|e| e.to_string())
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }

    fn usage(message: impl Into<String>) -> Self {
        Self::new(EXIT_USAGE, message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Numeric(_) => EXIT_NUMERIC,
            Error::Dimension(_) | Error::Version { .. } | Error::Capability(_) => EXIT_INCOMPATIBLE,
            Error::Io { .. } | Error::Truncated { .. } | Error::Checksum { .. } | Error::Gap { .. } => EXIT_MISSING,
            Error::Domain(_) | Error::Format(_) | Error::Annotation(_) => EXIT_USAGE,
        };
        Self::new(code, e.to_string())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::new(EXIT_MISSING, format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult {
    std::fs::write(path, contents).map_err(|e| io_failure(path, e))
}

fn emit(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(p) => write_file(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// `FOCA_SEED` wins over config files; explicit flags win over both.
fn env_seed() -> CliResult<Option<u64>> {
    match std::env::var("FOCA_SEED") {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| Failure::usage(format!("FOCA_SEED `{v}` is not an integer"))),
        Err(_) => Ok(None),
    }
}

fn resolve_seed(flag: Option<u64>, fallback: u64) -> CliResult<u64> {
    Ok(flag.or(env_seed()?).unwrap_or(fallback))
}

fn parse_task(s: &str) -> CliResult<TaskKind> {
    s.parse().map_err(|e: Error| Failure::usage(e.to_string()))
}

fn corpus() -> Vec<TaskPrompts> {
    parse_prompt_corpus(DEFAULT_CORPUS).expect("built-in corpus parses")
}

fn cmd_generate(task: &str, count: usize, seed: Option<u64>, out: &Path) -> CliResult {
    let task = parse_task(task)?;
    if count == 0 {
        return Err(Failure::usage("--count must be at least 1"));
    }
    let seed = resolve_seed(seed, 42)?;
    std::fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;
    let mut steps = 0;
    let mut contact = 0;
    for i in 0..count {
        let t = generate_demonstration(task, seed.wrapping_add(i as u64), DEFAULT_HORIZON, TransitionParams::default())?;
        steps += t.len();
        contact += t.wrenches.iter().filter(|w| w.force_norm() > 0.0).count();
        write_trajectory(&t, &out.join(format!("{}_{i:05}.{TRAJECTORY_EXT}", task.as_str())))?;
    }
    write_file(&out.join(MANIFEST_FILE), DatasetManifest::new(count, "default").to_text())?;
    println!(
        "generated {count} {} demonstrations ({steps} steps, {contact} in contact) in {}",
        task.as_str(),
        out.display()
    );
    Ok(())
}

/// Trajectory files in `dir`, sorted by name.
fn trajectory_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| io_failure(dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == TRAJECTORY_EXT))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Failure::new(EXIT_MISSING, format!("no .{TRAJECTORY_EXT} files in {}", dir.display())));
    }
    Ok(files)
}

fn load_dataset(dir: &Path) -> CliResult<Vec<Trajectory>> {
    trajectory_files(dir)?.iter().map(|p| read_trajectory(p).map_err(Failure::from)).collect()
}

/// Policy and training configuration from defaults, file, env and flags.
fn model_config(args: &ModelArgs) -> CliResult<(PolicyConfig, TrainConfig)> {
    let mut policy = PolicyConfig::default();
    let mut train = if args.paper_config { TrainConfig::full_scale() } else { TrainConfig::default() };
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
        let kv = KeyValues::parse(&text)?;
        let (p, t): (Vec<_>, Vec<_>) = kv.0.into_iter().partition(|(k, _)| PolicyConfig::KEYS.contains(&k.as_str()));
        policy.apply(&p.into_iter().collect())?;
        train.apply(&t.into_iter().collect())?;
    }
    if let Some(s) = env_seed()? {
        train.seed = s;
    }
    train.steps = args.steps.unwrap_or(train.steps);
    train.batch_size = args.batch.unwrap_or(train.batch_size);
    train.lr = args.lr.unwrap_or(train.lr);
    train.seed = args.seed.unwrap_or(train.seed);
    policy.position_only |= args.position_only;
    policy.mask.enable_vm = args.moe_vm.unwrap_or(policy.mask.enable_vm);
    policy.mask.enable_fm = args.moe_fm.unwrap_or(policy.mask.enable_fm);
    policy.validate()?;
    train.validate()?;
    Ok((policy, train))
}

fn loss_csv(records: &[LossRecord]) -> String {
    let mut s = String::from("step,lr,loss\n");
    for r in records {
        let _ = writeln!(s, "{},{:e},{:e}", r.step, r.lr, r.loss);
    }
    s
}

/// Trains to the configured step count, saving whatever was logged even on abort.
fn run_training(trainer: &mut Trainer, trajectories: &[Trajectory], out: &Path) -> CliResult {
    let (examples, normalizer) = build_examples(trajectories, &trainer.policy.config)?;
    if trainer.step == 0 {
        trainer.policy.normalizer = normalizer;
    }
    let mut records = Vec::new();
    let res = trainer.run(&examples, |r| records.push(*r));
    std::fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;
    write_file(&out.join(LOSS_FILE), loss_csv(&records))?;
    if let Err(e) = res {
        let message = e.to_string();
        let last = records.last().map_or("none".to_string(), |r| format!("step {} loss {}", r.step, r.loss));
        let code = Failure::from(e).code;
        return Err(Failure::new(code, format!("training aborted: {message} (last finite record: {last})")));
    }
    let t = &*trainer;
    write_checkpoint(&out.join(CHECKPOINT_FILE), &t.policy, &t.policy.params, &t.config, t.step, Some(&t.optimizer))?;
    write_checkpoint(&out.join(EMA_FILE), &t.policy, &t.ema, &t.config, t.step, None)?;
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> CliResult {
    let trajectories = load_dataset(&args.data)?;
    let mut trainer = match &args.resume {
        Some(path) => {
            let ckpt = read_checkpoint(path)?;
            let ema_path = path.with_file_name(EMA_FILE);
            let ema = if ema_path.exists() { Some(read_checkpoint(&ema_path)?.policy.params) } else { None };
            let mut t = Trainer::resume(ckpt, ema)?;
            if let Some(s) = args.model.steps {
                t.config.steps = s;
            }
            t
        }
        None => {
            let (policy_cfg, train) = model_config(&args.model)?;
            let policy = ForcePolicy::new(policy_cfg, corpus(), train.seed)?;
            Trainer::new(policy, train)?
        }
    };
    let start = trainer.step;
    run_training(&mut trainer, &trajectories, &args.out)?;
    println!(
        "trained steps {start}..{} on {} trajectories; wrote {}",
        trainer.step,
        trajectories.len(),
        args.out.display()
    );
    Ok(())
}

fn scenes_config(eval: &EvalArgs) -> CliResult<EnvConfig> {
    let mut cfg = match &eval.env {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
            EnvConfig::parse(&text)?
        }
        None => EnvConfig { task: parse_task(&eval.task)?, ..EnvConfig::default() },
    };
    cfg.seed = resolve_seed(eval.scene_seed, cfg.seed)?;
    cfg.base_drop |= eval.base_drop;
    cfg.validate()?;
    Ok(cfg)
}

enum Evaluated<'a> {
    Learned(&'a ForcePolicy, &'a ParamSet),
    Builtin(Builtin),
}

/// Episodes `0..n` split across up to `jobs` threads; rows stay in episode order.
fn evaluate(policy: &Evaluated<'_>, env: &EnvConfig, eval: &EvalArgs) -> CliResult<Vec<RolloutMetrics>> {
    if eval.episodes == 0 || eval.jobs == 0 {
        return Err(Failure::usage("--episodes and --jobs must be at least 1"));
    }
    if let Evaluated::Learned(p, _) = policy {
        if !p.corpus.iter().any(|c| c.task == env.task.task_prompt()) {
            return Err(Failure::new(
                EXIT_INCOMPATIBLE,
                format!("checkpoint corpus has no `{}` task", env.task.task_prompt()),
            ));
        }
    }
    let config = RolloutConfig { replan_every: eval.replan, ..RolloutConfig::default() };
    let episode = |i: usize| -> foca_core::Result<RolloutMetrics> {
        let scene = env.scene(i as u64)?;
        let noise_seed = env.seed.wrapping_add(i as u64);
        let mut expert;
        let mut zero;
        let mut runner;
        let p: &mut dyn Policy = match policy {
            Evaluated::Learned(p, params) => {
                runner = p.runner(params, noise_seed);
                &mut runner
            }
            Evaluated::Builtin(Builtin::Expert) => {
                expert = ExpertPolicy::new(scene.task);
                &mut expert
            }
            Evaluated::Builtin(Builtin::Zero) => {
                zero = ZeroPolicy;
                &mut zero
            }
        };
        Ok(rollout(p, scene.clone(), default_plan(scene.task), &config)?.1)
    };
    let jobs = eval.jobs.min(eval.episodes);
    let results: Vec<foca_core::Result<RolloutMetrics>> = if jobs == 1 {
        (0..eval.episodes).map(episode).collect()
    } else {
        let mut slots: Vec<Option<foca_core::Result<RolloutMetrics>>> = (0..eval.episodes).map(|_| None).collect();
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..jobs)
                .map(|j| {
                    let episode = &episode;
                    s.spawn(move || {
                        (j..eval.episodes).step_by(jobs).map(|i| (i, episode(i))).collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (i, r) in h.join().expect("rollout worker panicked") {
                    slots[i] = Some(r);
                }
            }
        });
        slots.into_iter().map(|r| r.expect("every episode ran")).collect()
    };
    results.into_iter().map(|r| r.map_err(Failure::from)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Summary {
    success_rate: f64,
    overload_rate: f64,
    mean_force_rms: f64,
    max_force: f64,
}

fn summarize(m: &[RolloutMetrics]) -> Summary {
    let n = m.len() as f64;
    Summary {
        success_rate: m.iter().filter(|r| r.success).count() as f64 / n,
        overload_rate: m.iter().filter(|r| r.overloads > 0).count() as f64 / n,
        mean_force_rms: m.iter().map(|r| r.force_rms).sum::<f64>() / n,
        max_force: m.iter().map(|r| r.max_force).fold(0.0, f64::max),
    }
}

fn rollout_csv(env: &EnvConfig, metrics: &[RolloutMetrics]) -> String {
    let mut s = String::from("episode,scene_seed,success,overloads,force_rms,max_force,completion_step\n");
    for (i, m) in metrics.iter().enumerate() {
        let done = m.steps_to_completion.map_or(String::new(), |k| k.to_string());
        let _ = writeln!(
            s,
            "{i},{},{},{},{:.6},{:.6},{done}",
            env.seed.wrapping_add(i as u64),
            u8::from(m.success),
            m.overloads,
            m.force_rms,
            m.max_force
        );
    }
    let sum = summarize(metrics);
    let _ = writeln!(
        s,
        "summary,{},{:.6},{:.6},{:.6},{:.6},",
        metrics.len(),
        sum.success_rate,
        sum.overload_rate,
        sum.mean_force_rms,
        sum.max_force
    );
    s
}

fn cmd_rollout(args: &RolloutArgs) -> CliResult {
    let env = scenes_config(&args.eval)?;
    let ckpt;
    let policy = match (&args.checkpoint, args.policy) {
        (Some(path), _) => {
            ckpt = read_checkpoint(path)?;
            Evaluated::Learned(&ckpt.policy, &ckpt.policy.params)
        }
        (None, Some(b)) => Evaluated::Builtin(b),
        (None, None) => return Err(Failure::usage("give --checkpoint or --policy")),
    };
    let metrics = evaluate(&policy, &env, &args.eval)?;
    emit(args.out.as_deref(), &rollout_csv(&env, &metrics))
}

fn suite_variants(suite: Suite, base: &PolicyConfig) -> Vec<(String, PolicyConfig)> {
    match suite {
        Suite::Components => Components::ablation_rows()
            .iter()
            .map(|(name, c)| (name.to_string(), PolicyConfig { components: *c, ..base.clone() }))
            .collect(),
        Suite::MoeModality => [("vm_only", true, false), ("fm_only", false, true), ("vm+fm", true, true)]
            .iter()
            .map(|(name, vm, fm)| {
                let mask = AblationMask { enable_vm: *vm, enable_fm: *fm };
                (name.to_string(), PolicyConfig { mask, ..base.clone() })
            })
            .collect(),
        Suite::Injection => InjectionVariant::ALL
            .iter()
            .map(|v| (v.to_string(), PolicyConfig { injection: *v, ..base.clone() }))
            .collect(),
    }
}

fn cmd_ablate(args: &AblateArgs) -> CliResult {
    let (base, train) = model_config(&args.model)?;
    let env = scenes_config(&args.eval)?;
    let trajectories = match &args.data {
        Some(dir) => load_dataset(dir)?,
        None => {
            if args.demos == 0 {
                return Err(Failure::usage("--demos must be at least 1"));
            }
            (0..args.demos as u64)
                .map(|s| generate_demonstration(env.task, s, DEFAULT_HORIZON, TransitionParams::default()))
                .collect::<foca_core::Result<_>>()?
        }
    };
    let mut s = String::from("suite,variant,success_rate,overload_rate,force_rms,max_force,final_loss\n");
    let suite_name = args.suite.to_possible_value().expect("named").get_name().to_string();
    for (name, cfg) in suite_variants(args.suite, &base) {
        let policy = ForcePolicy::new(cfg, corpus(), train.seed)?;
        let mut trainer = Trainer::new(policy, train.clone())?;
        let (examples, normalizer) = build_examples(&trajectories, &trainer.policy.config)?;
        trainer.policy.normalizer = normalizer;
        let mut last = f64::NAN;
        trainer.run(&examples, |r| last = r.loss)?;
        let metrics = evaluate(&Evaluated::Learned(&trainer.policy, &trainer.ema), &env, &args.eval)?;
        let sum = summarize(&metrics);
        let _ = writeln!(
            s,
            "{suite_name},{name},{:.6},{:.6},{:.6},{:.6},{last:e}",
            sum.success_rate, sum.overload_rate, sum.mean_force_rms, sum.max_force
        );
    }
    emit(args.out.as_deref(), &s)
}

fn cmd_analyze(env: Option<&Path>, depths: &str, samples: usize, seed: Option<u64>, csv: Option<&Path>) -> CliResult {
    let params = match env {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
            EnvConfig::parse(&text)?.scene(0)?.env
        }
        None => foca_core::sim::EnvParams::default(),
    };
    let depths: Vec<f64> = depths
        .split(',')
        .map(|d| d.trim().parse::<f64>().map_err(|_| Failure::usage(format!("bad depth `{d}`"))))
        .collect::<CliResult<_>>()?;
    let seed = resolve_seed(seed, 42)?;
    let mut reports = Vec::new();
    let mut text = String::new();
    let _ = writeln!(text, "surface stiffness {} N/m, offset {} m", params.stiffness, params.offset);
    for &d in &depths {
        let point = [0.0, 0.0, params.offset - d, 0.0, 0.0, 0.0];
        for mode in [ControlMode::PositionOnly, ControlMode::Hybrid] {
            let r = analyze(&params, point, mode)?;
            let _ = writeln!(
                text,
                "depth {d:.4} m  {:<13}  rank(C) = {:>2}  kappa = {:.3}  sigma_min/sigma_max = {:.3e}",
                mode.as_str(),
                r.rank,
                r.kappa,
                r.singular_values[r.rank - 1] / r.singular_values[0]
            );
            reports.push(r);
        }
    }
    let center = [0.0, 0.0, params.offset - depths[0], 0.0, 0.0, 0.0];
    for (label, controller) in
        [("position_only", ReachController::PositionOnly), ("hybrid", ReachController::HybridIdealized { gain: 1.0 })]
    {
        let e = reachable_dim_estimate(&params, center, controller, samples, seed)?;
        let _ = writeln!(
            text,
            "sampled reachable dimension ({label}, {samples} pairs): {}  tail ratio {:.3e}",
            e.dim, e.tail_ratio
        );
    }
    print!("{text}");
    let table = reports_csv(&reports);
    match csv {
        Some(p) => write_file(p, table),
        None => {
            print!("\n{table}");
            Ok(())
        }
    }
}

fn cmd_segment(inputs: &[PathBuf], window: usize) -> CliResult {
    let mut s = String::from("file,window,start,end,label\n");
    for path in inputs {
        let t = read_trajectory(path)?;
        let labels = segment_skills(&t, window, &SkillThresholds::default())?;
        for (i, l) in labels.iter().enumerate() {
            let end = ((i + 1) * window).min(t.len());
            let _ = writeln!(s, "{},{i},{},{end},{l}", path.display(), i * window);
        }
    }
    print!("{s}");
    Ok(())
}

fn cmd_stats(inputs: &[PathBuf]) -> CliResult {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            files.extend(trajectory_files(p)?);
        } else {
            files.push(p.clone());
        }
    }
    let stats = dataset_stats(&files)?;
    print!("{}", stats.to_csv());
    Ok(())
}

fn cmd_verify(only: &[String], seed: Option<u64>, fault: Option<FaultArg>) -> CliResult {
    let names: Vec<&str> = if only.is_empty() { CHECKS.to_vec() } else { only.iter().map(String::as_str).collect() };
    if let Some(bad) = names.iter().find(|n| !CHECKS.contains(n)) {
        return Err(Failure::usage(format!("unknown check `{bad}`; known: {}", CHECKS.join(", "))));
    }
    let opts = VerifyOptions {
        seed: resolve_seed(seed, 42)?,
        fault: match fault {
            Some(FaultArg::Transition) => Fault::TransitionConstant,
            None => Fault::None,
        },
        ..VerifyOptions::default()
    };
    let results = run_checks(&names, &opts)?;
    let mut failed = 0;
    for r in &results {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
        failed += usize::from(!r.passed);
    }
    println!("{} of {} checks passed", results.len() - failed, results.len());
    if failed > 0 {
        return Err(Failure::new(EXIT_VERIFY, format!("{failed} check(s) failed")));
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Generate { task, count, seed, out } => cmd_generate(&task, count, seed, &out),
        Command::Train(args) => cmd_train(&args),
        Command::Rollout(args) => cmd_rollout(&args),
        Command::Ablate(args) => cmd_ablate(&args),
        Command::Analyze { env, depths, samples, seed, csv } => {
            cmd_analyze(env.as_deref(), &depths, samples, seed, csv.as_deref())
        }
        Command::Segment { inputs, window } => cmd_segment(&inputs, window),
        Command::Stats { inputs } => cmd_stats(&inputs),
        Command::Verify { only, seed, inject_fault } => cmd_verify(&only, seed, inject_fault),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
