//! Behaviour-cloning data, the flow-matching training loop and checkpoints.
//!
//! A checkpoint is a `key=value` manifest closed by `---`, followed by the
//! parameter tensors as little-endian `f64` in parameter order and,
//! optionally, the optimizer's first and second moments in the same order.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::context::{SubtaskPlan, TaskPrompts, VisualObservation};
use crate::data::trajectory::split_manifest;
use crate::data::Trajectory;
use crate::error::{Error, Result};
use crate::flow::{sample_noise_with, ActionNormalizer, ACTION_DIM};
use crate::geometry::{Pose, Wrench};
use crate::nn::{adamw_step, cosine_lr, ema_update, value_and_grad, AdamWConfig, Matrix, OptimizerState, ParamSet};
use crate::policy::{ForcePolicy, PolicyConfig, PolicyInput};
use crate::sim::expert::position_only_actions;

pub const CHECKPOINT_FORMAT: &str = "foca-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// One conditioning observation with its normalized target chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub visual: VisualObservation,
    pub pose: Pose,
    pub wrench: Wrench,
    pub task_prompt: String,
    pub force_prompt: String,
    pub progress: f64,
    pub target: Vec<f64>,
}

impl Example {
    pub fn input(&self) -> PolicyInput<'_> {
        PolicyInput {
            visual: &self.visual,
            pose: &self.pose,
            wrench: &self.wrench,
            task_prompt: &self.task_prompt,
            force_prompt: &self.force_prompt,
            progress: self.progress,
        }
    }
}

/// Per-step action labels: recorded hybrid actions, or realized pose steps
/// with a zero wrench for position-only policies.
pub fn action_labels(t: &Trajectory, position_only: bool) -> Vec<[f64; ACTION_DIM]> {
    if position_only {
        position_only_actions(t)
    } else {
        t.actions.clone()
    }
}

/// Every step of every trajectory as an example. Chunks running past the
/// end repeat the last label. Returns the fitted normalizer.
pub fn build_examples(trajectories: &[Trajectory], config: &PolicyConfig) -> Result<(Vec<Example>, ActionNormalizer)> {
    if trajectories.is_empty() {
        return Err(Error::domain("no trajectories to train on"));
    }
    let labels: Vec<_> = trajectories.iter().map(|t| action_labels(t, config.position_only)).collect();
    let normalizer = ActionNormalizer::fit(
        labels.iter().flat_map(|l| l.iter().map(|a| a.as_slice())),
        ACTION_DIM,
        ActionNormalizer::STD_FLOOR,
    )?;
    let h = config.chunk;
    let mut out = Vec::new();
    for (t, l) in trajectories.iter().zip(&labels) {
        if t.segments.is_empty() {
            return Err(Error::Annotation(format!("trajectory seed {} has no subtask segments", t.seed)));
        }
        for k in 0..t.len() {
            let seg = t.segment_at(k).ok_or_else(|| Error::Annotation(format!("step {k} outside segments")))?;
            let mut target = Vec::with_capacity(h * ACTION_DIM);
            for j in 0..h {
                target.extend_from_slice(&l[(k + j).min(t.len() - 1)]);
            }
            normalizer.normalize(&mut target);
            let progress = if k > 0 && t.segments[seg].start < k { t.progress[k - 1] } else { 0.0 };
            out.push(Example {
                visual: t.frames[k].clone(),
                pose: t.poses[k],
                wrench: t.wrenches[k],
                task_prompt: t.task_prompt.clone(),
                force_prompt: t.segments[seg].prompt.clone(),
                progress,
                target,
            });
        }
    }
    Ok((out, normalizer))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub ema_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 5_000,
            batch_size: 32,
            lr: 3e-3,
            weight_decay: 1e-4,
            ema_decay: 0.99,
            seed: crate::nn::DEFAULT_SEED,
        }
    }
}

impl TrainConfig {
    /// Training-table values: 30k steps, batch 32, EMA 0.99, seed 42.
    pub fn full_scale() -> Self {
        Self { steps: 30_000, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::domain("steps and batch size must be positive"));
        }
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::domain("learning rate and weight decay must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::domain(format!("EMA decay {} outside [0, 1)", self.ema_decay)));
        }
        Ok(())
    }

    fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("steps", self.steps.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr", format!("{:?}", self.lr)),
            ("weight_decay", format!("{:?}", self.weight_decay)),
            ("ema_decay", format!("{:?}", self.ema_decay)),
            ("seed", self.seed.to_string()),
        ]
    }

    pub fn apply(&mut self, kv: &BTreeMap<String, String>) -> Result<()> {
        fn p<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Format(format!("bad value `{v}` for `{k}`")))
        }
        for (k, v) in kv {
            match k.as_str() {
                "steps" => self.steps = p(k, v)?,
                "batch_size" => self.batch_size = p(k, v)?,
                "lr" => self.lr = p(k, v)?,
                "weight_decay" => self.weight_decay = p(k, v)?,
                "ema_decay" => self.ema_decay = p(k, v)?,
                "seed" => self.seed = p(k, v)?,
                _ => return Err(Error::Format(format!("unknown training key `{k}`"))),
            }
        }
        self.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
}

/// Optimizer, EMA shadow and step counter around a policy.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub policy: ForcePolicy,
    pub ema: ParamSet,
    pub optimizer: OptimizerState,
    pub config: TrainConfig,
    pub step: u64,
}

impl Trainer {
    pub fn new(policy: ForcePolicy, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let opt = AdamWConfig { weight_decay: config.weight_decay, ..AdamWConfig::new(config.lr) };
        Ok(Self {
            ema: policy.params.clone(),
            optimizer: OptimizerState::new(&policy.params, opt),
            policy,
            config,
            step: 0,
        })
    }

    /// Resumes from a checkpoint, keeping its step counter and moments.
    pub fn resume(ckpt: Checkpoint, ema: Option<ParamSet>) -> Result<Self> {
        let mut t = Self::new(ckpt.policy, ckpt.train)?;
        t.step = ckpt.step;
        if let Some(o) = ckpt.optimizer {
            t.optimizer = o;
        }
        if let Some(e) = ema {
            if e.len() != t.policy.params.len() {
                return Err(Error::dim("EMA checkpoint does not match the policy"));
            }
            t.ema = e;
        }
        Ok(t)
    }

    fn batch_rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.config.seed ^ self.step.wrapping_mul(0x9e37_79b9_7f4a_7c15))
    }

    /// One AdamW step on a seeded minibatch; aborts on a non-finite loss.
    pub fn train_step(&mut self, examples: &[Example]) -> Result<LossRecord> {
        if examples.is_empty() {
            return Err(Error::domain("empty training set"));
        }
        let mut rng = self.batch_rng();
        let b = self.config.batch_size;
        let dims = self.policy.config.action_dim();
        let picks: Vec<&Example> = (0..b).map(|_| &examples[rng.random_range(0..examples.len())]).collect();
        let mut targets = Matrix::zeros(b, dims);
        for (r, e) in picks.iter().enumerate() {
            if e.target.len() != dims {
                return Err(Error::dim(format!("target length {} vs {dims}", e.target.len())));
            }
            targets.row_mut(r).copy_from_slice(&e.target);
        }
        let noise = Matrix::new(b, dims, sample_noise_with(b * dims, &mut rng))?;
        let taus: Vec<f64> = (0..b).map(|_| rng.random_range(0.0..=1.0)).collect();
        let inputs: Vec<PolicyInput<'_>> = picks.iter().map(|e| e.input()).collect();
        let policy = &self.policy;
        let (loss, grads) = value_and_grad(&policy.params, |g| policy.loss(g, &inputs, &targets, &noise, &taus))?;
        if !loss.is_finite() {
            return Err(Error::numeric(format!("loss became {loss} at step {}", self.step)));
        }
        let lr = cosine_lr(self.step, self.config.steps, self.config.lr)?;
        adamw_step(&mut self.policy.params, &grads, &mut self.optimizer, lr)?;
        ema_update(&mut self.ema, &self.policy.params, self.config.ema_decay)?;
        let rec = LossRecord { step: self.step, lr, loss };
        self.step += 1;
        Ok(rec)
    }

    /// Steps until the configured total, reporting every record.
    pub fn run(&mut self, examples: &[Example], mut log: impl FnMut(&LossRecord)) -> Result<()> {
        while self.step < self.config.steps {
            let r = self.train_step(examples)?;
            log(&r);
        }
        Ok(())
    }
}

/// Trains a fresh policy on demonstrations and returns the trainer.
pub fn train_policy(
    config: PolicyConfig,
    corpus: Vec<TaskPrompts>,
    trajectories: &[Trajectory],
    train: TrainConfig,
    log: impl FnMut(&LossRecord),
) -> Result<Trainer> {
    let mut policy = ForcePolicy::new(config, corpus, train.seed)?;
    let (examples, normalizer) = build_examples(trajectories, &policy.config)?;
    policy.normalizer = normalizer;
    let mut t = Trainer::new(policy, train)?;
    t.run(&examples, log)?;
    Ok(t)
}

/// A loaded checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub policy: ForcePolicy,
    pub train: TrainConfig,
    pub step: u64,
    pub optimizer: Option<OptimizerState>,
}

fn floats(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

fn parse_floats(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|x| x.parse().map_err(|_| Error::Format(format!("bad number `{x}`"))))
        .collect()
}

/// Serializes `params` (laid out like `policy.params`) with the policy's
/// configuration, corpus and normalizer.
pub fn encode_checkpoint(
    policy: &ForcePolicy,
    params: &ParamSet,
    train: &TrainConfig,
    step: u64,
    optimizer: Option<&OptimizerState>,
) -> Result<Vec<u8>> {
    if params.len() != policy.params.len() {
        return Err(Error::dim("parameter set does not match the policy layout"));
    }
    let mut m = String::new();
    let _ = writeln!(m, "format={CHECKPOINT_FORMAT}");
    let _ = writeln!(m, "version={CHECKPOINT_VERSION}");
    let _ = writeln!(m, "seed={}", policy.seed);
    let _ = writeln!(m, "step={step}");
    for (k, v) in train.to_pairs() {
        let _ = writeln!(m, "train.{k}={v}");
    }
    for (k, v) in policy.config.to_pairs() {
        let _ = writeln!(m, "policy.{k}={v}");
    }
    for (i, c) in policy.corpus.iter().enumerate() {
        let mut parts = vec![c.task.clone()];
        parts.extend(c.force_prompts.iter().cloned());
        let _ = writeln!(m, "corpus.{i}={}", parts.join("|"));
    }
    let _ = writeln!(m, "normalizer.mean={}", floats(&policy.normalizer.mean));
    let _ = writeln!(m, "normalizer.std={}", floats(&policy.normalizer.std));
    for (i, (name, v)) in params.iter().enumerate() {
        let _ = writeln!(m, "param.{i}={name}:{}:{}", v.rows(), v.cols());
    }
    let mut payload = Vec::with_capacity(params.num_scalars() * 8 * 3);
    let mut push = |mats: &mut dyn Iterator<Item = &Matrix>| {
        for v in mats {
            for x in v.data() {
                payload.extend_from_slice(&x.to_le_bytes());
            }
        }
    };
    push(&mut params.iter().map(|(_, v)| v));
    if let Some(o) = optimizer {
        let _ = writeln!(m, "optimizer.step={}", o.step);
        push(&mut o.first_moment.iter());
        push(&mut o.second_moment.iter());
    }
    let _ = writeln!(m, "crc={:08x}", crc32fast::hash(&payload));
    m.push_str("---\n");
    let mut out = m.into_bytes();
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let (m, payload) = split_manifest(bytes)?;
    let get = |k: &str| m.get(k).map(String::as_str).ok_or_else(|| Error::Format(format!("checkpoint lacks `{k}`")));
    if get("format")? != CHECKPOINT_FORMAT {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let version = get("version")?;
    if version != CHECKPOINT_VERSION.to_string() {
        return Err(Error::Version { expected: CHECKPOINT_VERSION, found: version.into() });
    }
    let crc = u32::from_str_radix(get("crc")?, 16).map_err(|_| Error::Format("bad crc".into()))?;
    if crc32fast::hash(payload) != crc {
        return Err(Error::Checksum { stream: "parameters".into() });
    }
    let num = |k: &str| -> Result<u64> { get(k)?.parse().map_err(|_| Error::Format(format!("bad `{k}`"))) };
    let seed = num("seed")?;
    let step = num("step")?;
    let section = |prefix: &str| -> BTreeMap<String, String> {
        m.iter()
            .filter_map(|(k, v)| k.strip_prefix(prefix).map(|k| (k.to_string(), v.clone())))
            .collect()
    };
    let mut config = PolicyConfig::default();
    config.apply(&section("policy."))?;
    let mut train = TrainConfig::default();
    train.apply(&section("train."))?;
    let mut corpus = Vec::new();
    while let Some(line) = m.get(&format!("corpus.{}", corpus.len())) {
        let mut parts = line.split('|').map(str::to_string);
        let task = parts.next().unwrap_or_default();
        corpus.push(TaskPrompts { task, force_prompts: parts.collect() });
    }
    let mut policy = ForcePolicy::new(config, corpus, seed)?;
    policy.normalizer = ActionNormalizer {
        mean: parse_floats(get("normalizer.mean")?)?,
        std: parse_floats(get("normalizer.std")?)?,
    };
    if policy.normalizer.mean.len() != ACTION_DIM || policy.normalizer.std.len() != ACTION_DIM {
        return Err(Error::dim("normalizer width"));
    }
    let shapes: Vec<(String, usize, usize)> = (0..policy.params.len())
        .map(|i| {
            let v = get(&format!("param.{i}"))?;
            let mut it = v.rsplitn(3, ':');
            let cols = it.next().and_then(|c| c.parse().ok());
            let rows = it.next().and_then(|r| r.parse().ok());
            let name = it.next();
            match (name, rows, cols) {
                (Some(n), Some(r), Some(c)) => Ok((n.to_string(), r, c)),
                _ => Err(Error::Format(format!("bad parameter entry `{v}`"))),
            }
        })
        .collect::<Result<_>>()?;
    if m.contains_key(&format!("param.{}", policy.params.len())) {
        return Err(Error::dim("checkpoint has more parameters than the configured policy"));
    }
    for ((name, r, c), (pname, pv)) in shapes.iter().zip(policy.params.iter()) {
        if name != pname || (*r, *c) != pv.shape() {
            return Err(Error::dim(format!(
                "parameter `{name}` is {r}×{c}, policy expects `{pname}` {:?}",
                pv.shape()
            )));
        }
    }
    let n = policy.params.num_scalars();
    let has_moments = m.contains_key("optimizer.step");
    let expected = n * 8 * if has_moments { 3 } else { 1 };
    if payload.len() != expected {
        return Err(Error::Truncated {
            stream: "parameters".into(),
            detail: format!("{} bytes, expected {expected}", payload.len()),
        });
    }
    let values: Vec<f64> =
        payload.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
    policy.params.assign_flat(&values[..n])?;
    let optimizer = if has_moments {
        let mut o = OptimizerState::new(
            &policy.params,
            AdamWConfig { weight_decay: train.weight_decay, ..AdamWConfig::new(train.lr) },
        );
        o.step = num("optimizer.step")?;
        let mut tmp = policy.params.clone();
        tmp.assign_flat(&values[n..2 * n])?;
        o.first_moment = tmp.iter().map(|(_, v)| v.clone()).collect();
        tmp.assign_flat(&values[2 * n..])?;
        o.second_moment = tmp.iter().map(|(_, v)| v.clone()).collect();
        Some(o)
    } else {
        None
    };
    Ok(Checkpoint { policy, train, step, optimizer })
}

pub fn write_checkpoint(
    path: &Path,
    policy: &ForcePolicy,
    params: &ParamSet,
    train: &TrainConfig,
    step: u64,
    optimizer: Option<&OptimizerState>,
) -> Result<()> {
    let bytes = encode_checkpoint(policy, params, train, step, optimizer)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Plan matching a trajectory's task prompt in the policy corpus.
pub fn plan_for(corpus: &[TaskPrompts], task_prompt: &str) -> Result<SubtaskPlan> {
    let c = corpus
        .iter()
        .find(|c| c.task == task_prompt)
        .ok_or_else(|| Error::domain(format!("task `{task_prompt}` is not in the corpus")))?;
    let prompts: Vec<&str> = c.force_prompts.iter().map(String::as_str).collect();
    SubtaskPlan::from_prompts(&c.task, &prompts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::expert::generate_demonstration;
    use crate::sim::TaskKind;
    use crate::transition::TransitionParams;

    fn tiny() -> PolicyConfig {
        PolicyConfig { d_model: 8, chunk: 4, hidden: 32, time_dim: 4, blocks: 1, ..Default::default() }
    }

    fn demos(n: u64) -> Vec<Trajectory> {
        (0..n)
            .map(|s| generate_demonstration(TaskKind::Press, s, 40, TransitionParams::default()).unwrap())
            .collect()
    }

    #[test]
    fn examples_pad_chunks_and_normalize() {
        let d = demos(2);
        let (ex, norm) = build_examples(&d, &tiny()).unwrap();
        assert_eq!(ex.len(), 80);
        let mut last = ex[39].target.clone();
        norm.denormalize(&mut last);
        for j in 0..4 {
            for (a, b) in last[j * ACTION_DIM..(j + 1) * ACTION_DIM].iter().zip(&d[0].actions[39]) {
                assert!((a - b).abs() < 1e-9);
            }
        }
        let po = build_examples(&d, &PolicyConfig { position_only: true, ..tiny() }).unwrap();
        let mut t = po.0[10].target.clone();
        po.1.denormalize(&mut t);
        assert!(t[7..13].iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn loss_falls_and_training_is_deterministic() {
        let d = demos(3);
        let train = TrainConfig { steps: 60, batch_size: 16, lr: 3e-3, ..Default::default() };
        let mut losses = Vec::new();
        let a = train_policy(tiny(), crate::context::parse_prompt_corpus(crate::context::DEFAULT_CORPUS).unwrap(), &d, train.clone(), |r| losses.push(r.loss)).unwrap();
        let b = train_policy(tiny(), a.policy.corpus.clone(), &d, train, |_| {}).unwrap();
        assert_eq!(a.policy.params, b.policy.params);
        assert_eq!(a.ema, b.ema);
        let head: f64 = losses[..10].iter().sum::<f64>() / 10.0;
        let tail: f64 = losses[50..].iter().sum::<f64>() / 10.0;
        assert!(tail < head, "{head} -> {tail}");
    }

    #[test]
    fn checkpoint_round_trip_and_resume() {
        let d = demos(2);
        let train = TrainConfig { steps: 10, batch_size: 2, ..Default::default() };
        let corpus = crate::context::parse_prompt_corpus(crate::context::DEFAULT_CORPUS).unwrap();
        let full = train_policy(tiny(), corpus.clone(), &d, train.clone(), |_| {}).unwrap();
        let bytes = encode_checkpoint(&full.policy, &full.policy.params, &train, full.step, Some(&full.optimizer)).unwrap();
        let ck = decode_checkpoint(&bytes).unwrap();
        assert_eq!(ck.policy.params, full.policy.params);
        assert_eq!(ck.policy.normalizer, full.policy.normalizer);
        assert_eq!(ck.policy.config, full.policy.config);
        assert_eq!(ck.step, 10);
        assert_eq!(ck.optimizer.as_ref().unwrap(), &full.optimizer);

        // stop at 5, save, resume, and land on the same weights as 10 straight steps
        let short = TrainConfig { steps: 10, ..train.clone() };
        let mut policy = ForcePolicy::new(tiny(), corpus, short.seed).unwrap();
        let (ex, norm) = build_examples(&d, &policy.config).unwrap();
        policy.normalizer = norm;
        let mut t = Trainer::new(policy, short).unwrap();
        for _ in 0..5 {
            t.train_step(&ex).unwrap();
        }
        let bytes = encode_checkpoint(&t.policy, &t.policy.params, &t.config, t.step, Some(&t.optimizer)).unwrap();
        let ema = encode_checkpoint(&t.policy, &t.ema, &t.config, t.step, None).unwrap();
        let mut r =
            Trainer::resume(decode_checkpoint(&bytes).unwrap(), Some(decode_checkpoint(&ema).unwrap().policy.params))
                .unwrap();
        assert_eq!(r.step, 5);
        r.run(&ex, |_| {}).unwrap();
        assert_eq!(r.policy.params, full.policy.params);
        assert_eq!(r.ema, full.ema);

        let mut bad = bytes.clone();
        let last = bad.len() - 1;
        bad[last] ^= 1;
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Checksum { .. })));
        assert!(decode_checkpoint(&bytes[..bytes.len() - 8]).is_err());
        let split = bytes.windows(4).position(|w| w == b"---\n").unwrap();
        let manifest = String::from_utf8(bytes[..split].to_vec()).unwrap().replace("policy.d_model=8", "policy.d_model=4");
        let mut other = manifest.into_bytes();
        other.extend_from_slice(&bytes[split..]);
        assert!(matches!(decode_checkpoint(&other), Err(Error::Dimension(_))));
    }
}
