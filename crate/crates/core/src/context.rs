//! Vision-language context encoder and the force-prompt state machine.
//!
//! Visual token grids and tokenized task/force prompts are embedded into a
//! shared width, concatenated as `[Z_v; Z_l]` and mixed by a small stack of
//! self-attention blocks into the context tokens `E`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{causal_mask, Attention, Graph, Linear, Matrix, Mlp, ParamId, ParamSet, Var};

/// One synthetic camera: `tokens × feature_dim` features.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraFrame {
    pub camera_id: u32,
    pub features: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisualObservation {
    pub cameras: Vec<CameraFrame>,
}

impl VisualObservation {
    pub fn validate(&self, feature_dim: usize) -> Result<()> {
        if self.cameras.is_empty() || self.cameras.iter().any(|c| c.features.rows() == 0) {
            return Err(Error::domain("visual observation has no tokens"));
        }
        for cam in &self.cameras {
            if cam.features.cols() != feature_dim {
                return Err(Error::dim(format!(
                    "camera {} has feature width {}, expected {feature_dim}",
                    cam.camera_id,
                    cam.features.cols()
                )));
            }
            if !cam.features.is_finite() {
                return Err(Error::numeric(format!("camera {} has non-finite features", cam.camera_id)));
            }
        }
        Ok(())
    }

    pub fn token_count(&self) -> usize {
        self.cameras.iter().map(|c| c.features.rows()).sum()
    }

    /// All camera tokens stacked in camera order.
    pub fn stacked(&self) -> Result<Matrix> {
        let parts: Vec<&Matrix> = self.cameras.iter().map(|c| &c.features).collect();
        Matrix::vstack(&parts)
    }
}

/// Word-level vocabulary. Ids are assigned in sorted word order after the
/// reserved `<none>` token at id 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: BTreeMap<String, usize>,
}

pub const NONE_TOKEN: &str = "<none>";

impl Vocabulary {
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut set = std::collections::BTreeSet::new();
        for t in texts {
            for w in t.split_whitespace() {
                set.insert(w.to_lowercase());
            }
        }
        let mut words = vec![NONE_TOKEN.to_string()];
        words.extend(set.into_iter().filter(|w| w != NONE_TOKEN));
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self { words, index }
    }

    pub fn from_corpus(corpus: &[TaskPrompts]) -> Self {
        Self::from_texts(
            corpus
                .iter()
                .flat_map(|t| std::iter::once(t.task.as_str()).chain(t.force_prompts.iter().map(String::as_str))),
        )
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<usize>> {
        let ids: Vec<usize> = text
            .split_whitespace()
            .map(|w| {
                self.index
                    .get(&w.to_lowercase())
                    .copied()
                    .ok_or_else(|| Error::domain(format!("word `{w}` is not in the vocabulary")))
            })
            .collect::<Result<_>>()?;
        if ids.is_empty() {
            return Ok(vec![0]);
        }
        Ok(ids)
    }
}

/// Token ids for the task prompt followed by the force prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTokens {
    pub task: Vec<usize>,
    pub force: Vec<usize>,
    pub vocab_size: usize,
}

impl PromptTokens {
    pub fn validate(&self) -> Result<()> {
        if self.task.is_empty() || self.force.is_empty() {
            return Err(Error::domain("task and force prompts need at least one token"));
        }
        if let Some(bad) = self.task.iter().chain(&self.force).find(|&&id| id >= self.vocab_size) {
            return Err(Error::domain(format!(
                "token id {bad} outside vocabulary of size {}",
                self.vocab_size
            )));
        }
        Ok(())
    }

    /// `[task; force]`
    pub fn concatenated(&self) -> Vec<usize> {
        self.task.iter().chain(&self.force).copied().collect()
    }

    pub fn len(&self) -> usize {
        self.task.len() + self.force.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subtask {
    pub id: String,
    pub force_prompt: String,
}

/// Ordered subtasks with a cursor. The final subtask is absorbing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubtaskPlan {
    pub task_prompt: String,
    subtasks: Vec<Subtask>,
    index: usize,
}

impl SubtaskPlan {
    pub fn new(task_prompt: impl Into<String>, subtasks: Vec<Subtask>) -> Result<Self> {
        if subtasks.is_empty() {
            return Err(Error::domain("a plan needs at least one subtask"));
        }
        Ok(Self {
            task_prompt: task_prompt.into(),
            subtasks,
            index: 0,
        })
    }

    /// Plan whose subtask ids are the prompts themselves.
    pub fn from_prompts(task_prompt: &str, prompts: &[&str]) -> Result<Self> {
        Self::new(
            task_prompt,
            prompts
                .iter()
                .map(|p| Subtask {
                    id: p.to_string(),
                    force_prompt: p.to_string(),
                })
                .collect(),
        )
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn len(&self) -> usize {
        self.subtasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subtasks.is_empty()
    }

    pub fn current(&self) -> &Subtask {
        &self.subtasks[self.index]
    }

    pub fn subtasks(&self) -> &[Subtask] {
        &self.subtasks
    }

    pub fn with_index(mut self, index: usize) -> Self {
        self.index = index.min(self.subtasks.len() - 1);
        self
    }
}

/// Moves to the next subtask, saturating at the last.
pub fn advance_subtask(plan: &SubtaskPlan) -> SubtaskPlan {
    let mut next = plan.clone();
    if next.index + 1 < next.subtasks.len() {
        next.index += 1;
    }
    next
}

/// Tokens of the current subtask's force prompt.
pub fn render_force_prompt(plan: &SubtaskPlan, vocab: &Vocabulary) -> Result<Vec<usize>> {
    vocab.tokenize(&plan.current().force_prompt)
}

/// Task prompt plus ordered per-subtask force prompts, as read from a
/// prompt corpus file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskPrompts {
    pub task: String,
    pub force_prompts: Vec<String>,
}

/// Parses blank-line separated blocks: first line is the task prompt, each
/// following line one force prompt.
pub fn parse_prompt_corpus(text: &str) -> Result<Vec<TaskPrompts>> {
    let mut out = Vec::new();
    let mut block: Vec<&str> = Vec::new();
    let flush = |block: &mut Vec<&str>, out: &mut Vec<TaskPrompts>| -> Result<()> {
        if block.is_empty() {
            return Ok(());
        }
        if block.len() < 2 {
            return Err(Error::Format(format!(
                "prompt block `{}` has no force prompts",
                block[0]
            )));
        }
        out.push(TaskPrompts {
            task: block[0].to_string(),
            force_prompts: block[1..].iter().map(|s| s.to_string()).collect(),
        });
        block.clear();
        Ok(())
    };
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            flush(&mut block, &mut out)?;
        } else {
            block.push(line);
        }
    }
    flush(&mut block, &mut out)?;
    if out.is_empty() {
        return Err(Error::Format("prompt corpus is empty".into()));
    }
    Ok(out)
}

pub fn format_prompt_corpus(corpus: &[TaskPrompts]) -> String {
    let mut s = String::new();
    for (i, t) in corpus.iter().enumerate() {
        if i > 0 {
            s.push('\n');
        }
        let _ = writeln!(s, "{}", t.task);
        for p in &t.force_prompts {
            let _ = writeln!(s, "{p}");
        }
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContextConfig {
    pub d_model: usize,
    pub vocab_size: usize,
    pub feature_dim: usize,
    pub max_positions: usize,
    pub blocks: usize,
    pub heads: usize,
    pub causal: bool,
    pub positional: bool,
}

impl ContextConfig {
    pub fn new(d_model: usize, vocab_size: usize, feature_dim: usize) -> Self {
        Self {
            d_model,
            vocab_size,
            feature_dim,
            max_positions: 64,
            blocks: 2,
            heads: 1,
            causal: false,
            positional: true,
        }
    }
}

#[derive(Debug, Clone)]
struct Block {
    attention: Attention,
    mlp: Mlp,
}

/// Stand-in for the pretrained vision-language backbone.
#[derive(Debug, Clone)]
pub struct ContextEncoder {
    pub config: ContextConfig,
    pub visual: Linear,
    pub embedding: ParamId,
    pub text: Linear,
    pub positions: ParamId,
    blocks: Vec<Block>,
}

impl ContextEncoder {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        config: ContextConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let d = config.d_model;
        let visual = Linear::new(params, &format!("{name}.visual"), config.feature_dim, d, rng)?;
        let embedding = params.add_uniform(format!("{name}.embedding"), config.vocab_size, d, 1, rng)?;
        let text = Linear::new(params, &format!("{name}.text"), d, d, rng)?;
        let positions = params.add_uniform(format!("{name}.positions"), config.max_positions, d, d, rng)?;
        let blocks = (0..config.blocks)
            .map(|i| {
                Ok(Block {
                    attention: Attention::new(params, &format!("{name}.block{i}.attn"), d, config.heads, rng)?,
                    mlp: Mlp::new(params, &format!("{name}.block{i}.mlp"), &[d, 2 * d, d], rng)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            config,
            visual,
            embedding,
            text,
            positions,
            blocks,
        })
    }

    /// `Z_v`: one row per visual token.
    pub fn encode_visual(&self, g: &mut Graph<'_>, obs: &VisualObservation) -> Result<Var> {
        obs.validate(self.config.feature_dim)?;
        let x = g.input(obs.stacked()?);
        self.visual.forward(g, x)
    }

    /// `Z_l`: embedding lookup of `[task; force]` passed through the text map.
    pub fn encode_text(&self, g: &mut Graph<'_>, prompts: &PromptTokens) -> Result<Var> {
        prompts.validate()?;
        if prompts.vocab_size != self.config.vocab_size {
            return Err(Error::dim(format!(
                "prompt vocabulary {} vs encoder vocabulary {}",
                prompts.vocab_size, self.config.vocab_size
            )));
        }
        let table = g.param(self.embedding);
        let rows = g.gather(table, &prompts.concatenated())?;
        self.text.forward(g, rows)
    }

    /// `E = blocks([Z_v; Z_l; extra])`, row count preserved.
    pub fn fuse_context(
        &self,
        g: &mut Graph<'_>,
        visual: Var,
        text: Var,
        extra: Option<Var>,
    ) -> Result<Var> {
        let mut parts = vec![visual, text];
        parts.extend(extra);
        let d = self.config.d_model;
        if parts.iter().any(|p| g.shape(*p).1 != d) {
            return Err(Error::dim(format!("context parts must all have width {d}")));
        }
        let mut x = g.vstack(&parts)?;
        let n = g.shape(x).0;
        if self.config.positional {
            if n > self.config.max_positions {
                return Err(Error::dim(format!(
                    "{n} context tokens exceed {} positions",
                    self.config.max_positions
                )));
            }
            let table = g.param(self.positions);
            let ids: Vec<usize> = (0..n).collect();
            let pos = g.gather(table, &ids)?;
            x = g.add(x, pos)?;
        }
        let mask = self.config.causal.then(|| causal_mask(n));
        for block in &self.blocks {
            let a = block.attention.forward(g, x, x, mask.as_ref())?;
            x = g.add(x, a)?;
            let m = block.mlp.forward(g, x)?;
            x = g.add(x, m)?;
        }
        Ok(x)
    }

    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        obs: &VisualObservation,
        prompts: &PromptTokens,
        extra: Option<Var>,
    ) -> Result<Var> {
        let zv = self.encode_visual(g, obs)?;
        let zl = self.encode_text(g, prompts)?;
        self.fuse_context(g, zv, zl, extra)
    }

    /// Zeroes the residual branches so every block is the identity.
    pub fn zero_blocks(&self, params: &mut ParamSet) {
        for b in &self.blocks {
            b.attention.output.zero(params);
            b.mlp.last().zero(params);
        }
    }

    #[cfg(test)]
    pub(crate) fn block_weights(&self) -> Vec<(&Attention, &Mlp)> {
        self.blocks.iter().map(|b| (&b.attention, &b.mlp)).collect()
    }
}

/// Built-in prompts for the synthetic tasks.
pub const DEFAULT_CORPUS: &str = "\
press the bottle
approach
press
release

wipe the board
approach
wipe
release

probe the surface
approach
probe
release
";
