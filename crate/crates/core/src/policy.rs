//! The full action model: context encoder, state encoder with cross-modal
//! interaction, Cross-Scale MoE, pooling and the flow-matching head.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{parse_switch, KeyValues};
use crate::context::{
    parse_prompt_corpus, ContextConfig, ContextEncoder, PromptTokens, TaskPrompts, VisualObservation, Vocabulary,
    DEFAULT_CORPUS,
};
use crate::error::{Error, Result};
use crate::flow::{
    decompose_action, flow_matching_loss, sample_noise_with, ActionNormalizer, ActionVector, Pooling, VelocityField,
    ACTION_DIM, DEFAULT_CHUNK, DEFAULT_FLOW_STEPS,
};
use crate::geometry::{Pose, Wrench};
use crate::moe::{AblationMask, ExpertBank, RoutingMode};
use crate::nn::{Graph, Matrix, ParamSet, Var};
use crate::sim::scene::FEATURE_DIM;
use crate::sim::{Execution, Observation, Policy};
use crate::state::{apply_injection_variant, assemble_condition, InjectionVariant, StateEncoder, Wiring};

/// Component switches of the module ablation: force prompt (FP), multimodal
/// encoder (ME) and Cross-Scale MoE (CM).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Components {
    pub force_prompt: bool,
    pub multimodal_encoder: bool,
    pub cross_scale_moe: bool,
}

impl Components {
    pub const FULL: Components = Components {
        force_prompt: true,
        multimodal_encoder: true,
        cross_scale_moe: true,
    };
    pub const BASELINE: Components = Components {
        force_prompt: false,
        multimodal_encoder: false,
        cross_scale_moe: false,
    };

    /// Rows of the module ablation in table order.
    pub fn ablation_rows() -> [(&'static str, Components); 4] {
        [
            ("baseline", Self::BASELINE),
            ("+FP", Components { force_prompt: true, ..Self::BASELINE }),
            ("+FP+ME", Components { cross_scale_moe: false, ..Self::FULL }),
            ("full", Self::FULL),
        ]
    }
}

impl Default for Components {
    fn default() -> Self {
        Self::FULL
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyConfig {
    pub d_model: usize,
    pub heads: usize,
    pub blocks: usize,
    pub chunk: usize,
    pub flow_steps: usize,
    pub hidden: usize,
    pub time_dim: usize,
    pub injection: InjectionVariant,
    pub routing: RoutingMode,
    pub mask: AblationMask,
    pub components: Components,
    pub causal: bool,
    pub positional: bool,
    /// Force channel zeroed at the input and labels, pure position execution.
    pub position_only: bool,
    /// Also feed the current progress `s` to the velocity field.
    pub condition_on_progress: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            heads: 1,
            blocks: 2,
            chunk: DEFAULT_CHUNK,
            flow_steps: DEFAULT_FLOW_STEPS,
            hidden: 256,
            time_dim: 16,
            injection: InjectionVariant::StateFusion,
            routing: RoutingMode::Soft,
            mask: AblationMask::default(),
            components: Components::FULL,
            causal: false,
            positional: true,
            position_only: false,
            condition_on_progress: false,
        }
    }
}

fn switch(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

impl PolicyConfig {
    pub const KEYS: [&'static str; 18] = [
        "d_model",
        "heads",
        "blocks",
        "chunk",
        "flow_steps",
        "hidden",
        "time_dim",
        "injection",
        "routing",
        "moe_vm",
        "moe_fm",
        "force_prompt",
        "multimodal_encoder",
        "cross_scale_moe",
        "causal",
        "positional",
        "position_only",
        "condition_on_progress",
    ];

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("chunk", self.chunk),
            ("flow_steps", self.flow_steps),
            ("hidden", self.hidden),
            ("time_dim", self.time_dim),
        ] {
            if v == 0 {
                return Err(Error::domain(format!("{name} must be positive")));
            }
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::domain(format!("d_model {} not divisible by {} heads", self.d_model, self.heads)));
        }
        Ok(())
    }

    /// Force wiring after the component switches.
    pub fn wiring(&self) -> Wiring {
        if self.components.multimodal_encoder {
            apply_injection_variant(self.injection)
        } else {
            Wiring::NO_FORCE
        }
    }

    pub fn action_dim(&self) -> usize {
        self.chunk * ACTION_DIM
    }

    pub fn cond_dim(&self) -> usize {
        2 * self.d_model + usize::from(self.condition_on_progress)
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let v = [
            self.d_model.to_string(),
            self.heads.to_string(),
            self.blocks.to_string(),
            self.chunk.to_string(),
            self.flow_steps.to_string(),
            self.hidden.to_string(),
            self.time_dim.to_string(),
            self.injection.to_string(),
            self.routing.to_string(),
            switch(self.mask.enable_vm).into(),
            switch(self.mask.enable_fm).into(),
            switch(self.components.force_prompt).into(),
            switch(self.components.multimodal_encoder).into(),
            switch(self.components.cross_scale_moe).into(),
            switch(self.causal).into(),
            switch(self.positional).into(),
            switch(self.position_only).into(),
            switch(self.condition_on_progress).into(),
        ];
        Self::KEYS.iter().map(|k| k.to_string()).zip(v).collect()
    }

    /// Overrides fields present in `kv` (keys without prefix).
    pub fn apply(&mut self, kv: &BTreeMap<String, String>) -> Result<()> {
        let num = |k: &str, v: &str| -> Result<usize> {
            v.parse().map_err(|_| Error::Format(format!("bad value `{v}` for `{k}`")))
        };
        for (k, v) in kv {
            match k.as_str() {
                "d_model" => self.d_model = num(k, v)?,
                "heads" => self.heads = num(k, v)?,
                "blocks" => self.blocks = num(k, v)?,
                "chunk" => self.chunk = num(k, v)?,
                "flow_steps" => self.flow_steps = num(k, v)?,
                "hidden" => self.hidden = num(k, v)?,
                "time_dim" => self.time_dim = num(k, v)?,
                "injection" => self.injection = v.parse()?,
                "routing" => self.routing = v.parse()?,
                "moe_vm" => self.mask.enable_vm = parse_switch(v)?,
                "moe_fm" => self.mask.enable_fm = parse_switch(v)?,
                "force_prompt" => self.components.force_prompt = parse_switch(v)?,
                "multimodal_encoder" => self.components.multimodal_encoder = parse_switch(v)?,
                "cross_scale_moe" => self.components.cross_scale_moe = parse_switch(v)?,
                "causal" => self.causal = parse_switch(v)?,
                "positional" => self.positional = parse_switch(v)?,
                "position_only" => self.position_only = parse_switch(v)?,
                "condition_on_progress" => self.condition_on_progress = parse_switch(v)?,
                _ => return Err(Error::Format(format!("unknown policy key `{k}`"))),
            }
        }
        self.validate()
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let mut c = Self::default();
        c.apply(&kv.0)?;
        Ok(c)
    }
}

/// One conditioning input.
#[derive(Debug, Clone, Copy)]
pub struct PolicyInput<'a> {
    pub visual: &'a VisualObservation,
    pub pose: &'a Pose,
    pub wrench: &'a Wrench,
    pub task_prompt: &'a str,
    pub force_prompt: &'a str,
    pub progress: f64,
}

#[derive(Debug, Clone)]
pub struct ForcePolicy {
    pub config: PolicyConfig,
    pub corpus: Vec<TaskPrompts>,
    pub vocab: Vocabulary,
    pub seed: u64,
    pub params: ParamSet,
    pub normalizer: ActionNormalizer,
    context: ContextEncoder,
    state: StateEncoder,
    moe: ExpertBank,
    pooling: Pooling,
    field: VelocityField,
}

impl ForcePolicy {
    /// Fresh parameters drawn from `seed`. The layout depends only on
    /// `config` and the corpus vocabulary.
    pub fn new(config: PolicyConfig, corpus: Vec<TaskPrompts>, seed: u64) -> Result<Self> {
        config.validate()?;
        let vocab = Vocabulary::from_corpus(&corpus);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let d = config.d_model;
        let ctx_cfg = ContextConfig {
            blocks: config.blocks,
            heads: config.heads,
            causal: config.causal,
            positional: config.positional,
            ..ContextConfig::new(d, vocab.len(), FEATURE_DIM)
        };
        let context = ContextEncoder::new(&mut params, "context", ctx_cfg, &mut rng)?;
        let state = StateEncoder::new(&mut params, "state", d, config.heads, &mut rng)?;
        let moe = ExpertBank::new(&mut params, "moe", d, &mut rng)?;
        let pooling = Pooling::new(&mut params, "pool", d, &mut rng)?;
        let field = VelocityField::new(
            &mut params,
            "field",
            config.action_dim(),
            config.cond_dim(),
            config.hidden,
            config.time_dim,
            &mut rng,
        )?;
        let normalizer = ActionNormalizer::identity(ACTION_DIM);
        Ok(Self {
            config,
            corpus,
            vocab,
            seed,
            params,
            normalizer,
            context,
            state,
            moe,
            pooling,
            field,
        })
    }

    pub fn with_default_corpus(config: PolicyConfig, seed: u64) -> Result<Self> {
        Self::new(config, parse_prompt_corpus(DEFAULT_CORPUS)?, seed)
    }

    pub fn field(&self) -> &VelocityField {
        &self.field
    }

    fn prompts(&self, input: &PolicyInput<'_>) -> Result<PromptTokens> {
        let task = self.vocab.tokenize(input.task_prompt)?;
        let force = if self.config.components.force_prompt {
            self.vocab.tokenize(input.force_prompt)?
        } else {
            vec![0]
        };
        Ok(PromptTokens { task, force, vocab_size: self.vocab.len() })
    }

    /// Pooled `E_MoE` (plus `s` when enabled) as a `1 × cond_dim` node.
    pub fn condition(&self, g: &mut Graph<'_>, input: &PolicyInput<'_>) -> Result<Var> {
        let wrench = if self.config.position_only { Wrench::ZERO } else { *input.wrench };
        let e_f = self.state.encode_force(g, &wrench)?;
        self.condition_with_force(g, input, e_f)
    }

    /// As [`condition`](Self::condition) with a caller-supplied `E_F` node.
    pub fn condition_with_force(&self, g: &mut Graph<'_>, input: &PolicyInput<'_>, e_f: Var) -> Result<Var> {
        let wiring = self.config.wiring();
        let prompts = self.prompts(input)?;
        let extra = wiring.force_in_context.then_some(e_f);
        let e = self.context.forward(g, input.visual, &prompts, extra)?;
        let e_p = self.state.encode_pose(g, input.pose)?;
        let state = if wiring.force_state_token { g.vstack(&[e_p, e_f])? } else { e_p };
        let state = if self.config.components.multimodal_encoder {
            self.state.cross_modal_condition(g, state, e)?
        } else {
            state
        };
        let seq = assemble_condition(g, e, state, wiring.force_bypass.then_some(e_f))?;
        let fused = if self.config.components.cross_scale_moe {
            self.moe.forward(g, &seq, self.config.mask, self.config.routing)?
        } else {
            seq.tokens
        };
        let pooled = self.pooling.forward(g, fused)?;
        if self.config.condition_on_progress {
            let s = g.input(Matrix::row_vector(&[input.progress.clamp(0.0, 1.0)]));
            g.hstack(&[pooled, s])
        } else {
            Ok(pooled)
        }
    }

    /// Flow-matching loss over a batch; `targets` rows are normalized flat chunks.
    pub fn loss(
        &self,
        g: &mut Graph<'_>,
        inputs: &[PolicyInput<'_>],
        targets: &Matrix,
        noise: &Matrix,
        taus: &[f64],
    ) -> Result<Var> {
        if inputs.len() != targets.rows() {
            return Err(Error::dim(format!("{} inputs for {} targets", inputs.len(), targets.rows())));
        }
        let conds = inputs.iter().map(|i| self.condition(g, i)).collect::<Result<Vec<_>>>()?;
        let cond = g.vstack(&conds)?;
        flow_matching_loss(g, &self.field, cond, targets, noise, taus)
    }

    /// Conditioning row evaluated with `params`.
    pub fn condition_value(&self, params: &ParamSet, input: &PolicyInput<'_>) -> Result<Matrix> {
        let mut g = Graph::new(params);
        let c = self.condition(&mut g, input)?;
        Ok(g.value(c).clone())
    }

    /// Integrates one chunk from `noise` and decodes it.
    pub fn sample_chunk(&self, params: &ParamSet, input: &PolicyInput<'_>, noise: &[f64]) -> Result<Vec<ActionVector>> {
        if noise.len() != self.config.action_dim() {
            return Err(Error::dim(format!("noise length {} vs {}", noise.len(), self.config.action_dim())));
        }
        let cond = self.condition_value(params, input)?;
        let a0 = Matrix::row_vector(noise);
        let out = self.field.sample(params, &cond, &a0, self.config.flow_steps)?;
        let mut flat = out.into_data();
        self.normalizer.denormalize(&mut flat);
        flat.chunks(ACTION_DIM).map(decompose_action).collect()
    }

    /// Sim-facing runner using `params` (raw or EMA weights).
    pub fn runner<'a>(&'a self, params: &'a ParamSet, seed: u64) -> PolicyRunner<'a> {
        PolicyRunner {
            policy: self,
            params,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

/// Binds a policy to weights and a noise stream for rollouts.
pub struct PolicyRunner<'a> {
    policy: &'a ForcePolicy,
    params: &'a ParamSet,
    seed: u64,
    rng: ChaCha8Rng,
}

impl PolicyRunner<'_> {
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }
}

impl Policy for PolicyRunner<'_> {
    fn reset(&mut self) {
        self.rng = ChaCha8Rng::seed_from_u64(self.seed);
    }

    fn act(&mut self, obs: &Observation<'_>) -> Result<Vec<ActionVector>> {
        let input = PolicyInput {
            visual: obs.visual,
            pose: obs.pose,
            wrench: obs.wrench,
            task_prompt: obs.task_prompt,
            force_prompt: obs.force_prompt,
            progress: obs.progress,
        };
        let noise = sample_noise_with(self.policy.config.action_dim(), &mut self.rng);
        self.policy.sample_chunk(self.params, &input, &noise)
    }

    fn execution(&self) -> Execution {
        if self.policy.config.position_only {
            Execution::PositionOnly
        } else {
            Execution::Hybrid
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{finite_diff_check, value_and_grad};
    use crate::sim::{Scene, SimState, TaskKind};

    fn tiny() -> PolicyConfig {
        PolicyConfig { d_model: 4, chunk: 2, hidden: 8, time_dim: 4, blocks: 1, ..Default::default() }
    }

    fn observation(seed: u64) -> (VisualObservation, Pose, Wrench) {
        let scene = Scene::sample(TaskKind::Press, seed);
        let mut s = SimState::at_rest(scene.start, &scene.env);
        s.wrench = Wrench::from_force([1.0, -2.0, 15.0 + seed as f64]);
        (scene.render(&s), s.pose, s.wrench)
    }

    #[test]
    fn pipeline_gradients_match_finite_differences() {
        let p = ForcePolicy::with_default_corpus(tiny(), 3).unwrap();
        let (v, pose, w) = observation(1);
        let input = PolicyInput {
            visual: &v,
            pose: &pose,
            wrench: &w,
            task_prompt: "press the bottle",
            force_prompt: "press",
            progress: 0.2,
        };
        let dims = p.config.action_dim();
        let targets = Matrix::row_vector(&(0..dims).map(|i| (i as f64 * 0.3).sin()).collect::<Vec<_>>());
        let noise = Matrix::row_vector(&crate::flow::sample_noise(dims, 5));
        let loss_at = |params: &ParamSet| -> f64 {
            let mut g = Graph::new(params);
            let l = p.loss(&mut g, &[input], &targets, &noise, &[0.4]).unwrap();
            g.value(l).data()[0]
        };
        let (_, grads) = value_and_grad(&p.params, |g| p.loss(g, &[input], &targets, &noise, &[0.4])).unwrap();
        let point = p.params.flatten();
        let mut work = p.params.clone();
        let err = finite_diff_check(
            |x| {
                work.assign_flat(x).unwrap();
                loss_at(&work)
            },
            &grads.flatten(),
            &point,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn every_ablation_row_builds_and_samples() {
        let (v, pose, w) = observation(2);
        let input = PolicyInput {
            visual: &v,
            pose: &pose,
            wrench: &w,
            task_prompt: "press the bottle",
            force_prompt: "press",
            progress: 0.0,
        };
        let mut configs: Vec<PolicyConfig> =
            Components::ablation_rows().iter().map(|(_, c)| PolicyConfig { components: *c, ..tiny() }).collect();
        for inj in InjectionVariant::ALL {
            configs.push(PolicyConfig { injection: inj, ..tiny() });
        }
        for (vm, fm) in [(true, false), (false, true), (false, false)] {
            configs.push(PolicyConfig { mask: AblationMask { enable_vm: vm, enable_fm: fm }, ..tiny() });
        }
        configs.push(PolicyConfig { routing: RoutingMode::Top1, condition_on_progress: true, ..tiny() });
        configs.push(PolicyConfig { position_only: true, ..tiny() });
        for c in configs {
            let p = ForcePolicy::with_default_corpus(c.clone(), 1).unwrap();
            let noise = crate::flow::sample_noise(c.action_dim(), 0);
            let chunk = p.sample_chunk(&p.params, &input, &noise).unwrap();
            assert_eq!(chunk.len(), c.chunk, "{c:?}");
            assert!(chunk.iter().all(ActionVector::is_finite));
        }
    }

    #[test]
    fn force_prompt_switch_and_position_only_ignore_inputs() {
        let (v, pose, w) = observation(3);
        let base = PolicyInput {
            visual: &v,
            pose: &pose,
            wrench: &w,
            task_prompt: "press the bottle",
            force_prompt: "press",
            progress: 0.0,
        };
        let other = PolicyInput { force_prompt: "release", ..base };
        let full = ForcePolicy::with_default_corpus(tiny(), 1).unwrap();
        let a = full.condition_value(&full.params, &base).unwrap();
        assert_ne!(a, full.condition_value(&full.params, &other).unwrap());
        let c = PolicyConfig { components: Components { force_prompt: false, ..Components::FULL }, ..tiny() };
        let no_fp = ForcePolicy::with_default_corpus(c, 1).unwrap();
        assert_eq!(
            no_fp.condition_value(&no_fp.params, &base).unwrap(),
            no_fp.condition_value(&no_fp.params, &other).unwrap()
        );
        let po = ForcePolicy::with_default_corpus(PolicyConfig { position_only: true, ..tiny() }, 1).unwrap();
        let w2 = Wrench::from_force([0.0, 0.0, 80.0]);
        let pushed = PolicyInput { wrench: &w2, ..base };
        assert_eq!(po.condition_value(&po.params, &base).unwrap(), po.condition_value(&po.params, &pushed).unwrap());
        assert_ne!(
            full.condition_value(&full.params, &base).unwrap(),
            full.condition_value(&full.params, &pushed).unwrap()
        );
    }

    #[test]
    fn bypass_gives_a_direct_force_gradient() {
        let c = PolicyConfig { components: Components::FULL, ..tiny() };
        let p = ForcePolicy::with_default_corpus(c, 4).unwrap();
        let (v, pose, w) = observation(4);
        let input = PolicyInput {
            visual: &v,
            pose: &pose,
            wrench: &w,
            task_prompt: "press the bottle",
            force_prompt: "press",
            progress: 0.0,
        };
        let mut g = Graph::new(&p.params);
        let raw = p.state.force_input(&mut g, &w).unwrap();
        let e_f = p.state.force.forward(&mut g, raw).unwrap();
        let cond = p.condition_with_force(&mut g, &input, e_f).unwrap();
        let s = g.sum(cond);
        let back = g.backward(s).unwrap();
        let grad = back.grad(raw).unwrap();
        assert!(grad.data().iter().any(|v| v.abs() > 1e-8));
    }

    #[test]
    fn config_round_trips_through_pairs() {
        let c = PolicyConfig {
            injection: InjectionVariant::VlmPathway,
            routing: RoutingMode::Top1,
            mask: AblationMask { enable_vm: false, enable_fm: true },
            position_only: true,
            ..tiny()
        };
        let map: BTreeMap<String, String> = c.to_pairs().into_iter().collect();
        let mut d = PolicyConfig::default();
        d.apply(&map).unwrap();
        assert_eq!(c, d);
        let mut bad = BTreeMap::new();
        bad.insert("heads".to_string(), "3".to_string());
        assert!(PolicyConfig::default().apply(&bad).is_err());
    }
}
