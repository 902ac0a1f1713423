//! Environment config files: `key = value` overrides on a sampled scene.

use crate::config::{parse_switch, KeyValues};
use crate::error::{Error, Result};
use crate::geometry::{norm3, Vec3};
use crate::sim::env::DEFAULT_FORCE_LIMIT;
use crate::sim::scene::{Scene, TaskKind};

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub task: TaskKind,
    pub seed: u64,
    pub stiffness: Option<f64>,
    pub damping: Option<f64>,
    pub friction: Option<f64>,
    pub surface_height: Option<f64>,
    pub surface_normal: Option<Vec3>,
    pub force_limit: f64,
    pub base_drop: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            task: TaskKind::Press,
            seed: 42,
            stiffness: None,
            damping: None,
            friction: None,
            surface_height: None,
            surface_normal: None,
            force_limit: DEFAULT_FORCE_LIMIT,
            base_drop: false,
        }
    }
}

fn parse_vec3(s: &str) -> Result<Vec3> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Format(format!("expected `x, y, z`, got `{s}`")))?;
    match v.as_slice() {
        [x, y, z] => Ok([*x, *y, *z]),
        _ => Err(Error::Format(format!("expected three components, got `{s}`"))),
    }
}

impl EnvConfig {
    pub const KEYS: [&'static str; 9] = [
        "task",
        "seed",
        "stiffness",
        "damping",
        "friction",
        "surface_height",
        "surface_normal",
        "force_limit",
        "base_drop",
    ];

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_key_values(&KeyValues::parse(text)?)
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        kv.check_keys(&Self::KEYS)?;
        let d = Self::default();
        let cfg = Self {
            task: kv.get_or("task", d.task)?,
            seed: kv.get_or("seed", d.seed)?,
            stiffness: kv.get("stiffness")?,
            damping: kv.get("damping")?,
            friction: kv.get("friction")?,
            surface_height: kv.get("surface_height")?,
            surface_normal: kv.get_str("surface_normal").map(parse_vec3).transpose()?,
            force_limit: kv.get_or("force_limit", d.force_limit)?,
            base_drop: kv.get_str("base_drop").map(parse_switch).transpose()?.unwrap_or(false),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(n) = self.surface_normal {
            if !(norm3(n) > 0.0) {
                return Err(Error::domain("surface normal must be nonzero"));
            }
        }
        self.scene(0)?.env.validate()
    }

    /// Scene for episode `episode`: sampled from `seed + episode`, then overridden.
    pub fn scene(&self, episode: u64) -> Result<Scene> {
        let mut scene = Scene::sample(self.task, self.seed.wrapping_add(episode));
        if let Some(k) = self.stiffness {
            scene.env.stiffness = k;
        }
        if let Some(c) = self.damping {
            scene.env.damping = c;
        }
        if let Some(mu) = self.friction {
            scene.env.friction = mu;
        }
        if let Some(h) = self.surface_height {
            let lift = h - scene.object[2];
            scene.object[2] = h;
            scene.env.offset = h;
            scene.start.position[2] += lift;
        }
        if let Some(n) = self.surface_normal {
            let len = norm3(n);
            scene.env.normal = [n[0] / len, n[1] / len, n[2] / len];
        }
        scene.env.force_limit = self.force_limit;
        scene.env.validate()?;
        Ok(if self.base_drop { scene.with_base_drop() } else { scene })
    }
}
