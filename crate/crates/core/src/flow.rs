//! Flow-matching action head: linear probability path, velocity field,
//! Euler sampler and the hybrid action layout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::{Quaternion, Vec3, Wrench};
use crate::nn::{Attention, Graph, Linear, Matrix, Mlp, ParamId, ParamSet, Var};

pub const ACTION_DIM: usize = 14;
pub const DEFAULT_CHUNK: usize = 30;
pub const DEFAULT_FLOW_STEPS: usize = 10;
pub const PROGRESS_INDEX: usize = 13;

/// `[Δp (7); f (6); s]`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionVector {
    pub delta_pose: [f64; 7],
    pub wrench: Wrench,
    pub progress: f64,
}

impl ActionVector {
    pub const ZERO: ActionVector = ActionVector {
        delta_pose: [0.0; 7],
        wrench: Wrench::ZERO,
        progress: 0.0,
    };

    pub fn new(delta_position: Vec3, rotation: Quaternion, wrench: Wrench, progress: f64) -> Self {
        let q = rotation.0;
        Self {
            delta_pose: [delta_position[0], delta_position[1], delta_position[2], q[0], q[1], q[2], q[3]],
            wrench,
            progress,
        }
    }

    pub fn delta_position(&self) -> Vec3 {
        [self.delta_pose[0], self.delta_pose[1], self.delta_pose[2]]
    }

    /// Quaternion part of `Δp`, renormalized (zero maps to identity).
    pub fn delta_rotation(&self) -> Quaternion {
        let d = &self.delta_pose;
        Quaternion([d[3], d[4], d[5], d[6]]).normalized()
    }

    pub fn pack(&self) -> [f64; ACTION_DIM] {
        let mut out = [0.0; ACTION_DIM];
        out[..7].copy_from_slice(&self.delta_pose);
        out[7..13].copy_from_slice(&self.wrench.to_array());
        out[PROGRESS_INDEX] = self.progress;
        out
    }

    pub fn is_finite(&self) -> bool {
        self.pack().iter().all(|v| v.is_finite())
    }
}

/// Splits a 14-vector; `s` is clamped into [0, 1].
pub fn decompose_action(a: &[f64]) -> Result<ActionVector> {
    if a.len() != ACTION_DIM {
        return Err(Error::dim(format!("action needs {ACTION_DIM} values, got {}", a.len())));
    }
    let mut delta_pose = [0.0; 7];
    delta_pose.copy_from_slice(&a[..7]);
    Ok(ActionVector {
        delta_pose,
        wrench: Wrench::from_slice(&a[7..13])?,
        progress: if a[PROGRESS_INDEX].is_nan() { 0.0 } else { a[PROGRESS_INDEX].clamp(0.0, 1.0) },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionChunk {
    pub actions: Vec<ActionVector>,
}

impl ActionChunk {
    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.is_empty() || flat.len() % ACTION_DIM != 0 {
            return Err(Error::dim(format!("chunk length {} is not a positive multiple of {ACTION_DIM}", flat.len())));
        }
        Ok(Self {
            actions: flat.chunks(ACTION_DIM).map(decompose_action).collect::<Result<_>>()?,
        })
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.actions.iter().flat_map(|a| a.pack()).collect()
    }

    pub fn horizon(&self) -> usize {
        self.actions.len()
    }
}

/// Standard normal draws from a seeded ChaCha8 stream.
pub fn sample_noise(dims: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_noise_with(dims, &mut rng)
}

pub fn sample_noise_with<R: Rng + ?Sized>(dims: usize, rng: &mut R) -> Vec<f64> {
    (0..dims).map(|_| rng.sample(StandardNormal)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowSample {
    pub noise: Vec<f64>,
    pub tau: f64,
    pub interpolant: Vec<f64>,
    pub velocity: Vec<f64>,
}

/// `a_τ = (1 − τ)·noise + τ·action`, target velocity `action − noise`.
pub fn flow_train_target(action: &[f64], noise: &[f64], tau: f64) -> Result<FlowSample> {
    if action.len() != noise.len() {
        return Err(Error::dim(format!("action {} vs noise {}", action.len(), noise.len())));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::domain(format!("τ = {tau} outside [0, 1]")));
    }
    Ok(FlowSample {
        noise: noise.to_vec(),
        tau,
        interpolant: action.iter().zip(noise).map(|(a, n)| (1.0 - tau) * n + tau * a).collect(),
        velocity: action.iter().zip(noise).map(|(a, n)| a - n).collect(),
    })
}

/// `a ← a + Δτ·F(a, τ)` for `τ = 0, Δτ, …, 1 − Δτ`.
pub fn euler_integrate<F>(a0: &[f64], steps: usize, mut field: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], f64) -> Result<Vec<f64>>,
{
    if steps == 0 {
        return Err(Error::domain("Euler integration needs at least one step"));
    }
    let dt = 1.0 / steps as f64;
    let mut a = a0.to_vec();
    for i in 0..steps {
        let v = field(&a, i as f64 * dt)?;
        if v.len() != a.len() {
            return Err(Error::dim(format!("field returned {} values for a state of {}", v.len(), a.len())));
        }
        for (x, vi) in a.iter_mut().zip(&v) {
            *x += dt * vi;
        }
    }
    Ok(a)
}

/// Sinusoidal features of τ at harmonics of a quarter period over [0, 1].
pub fn time_embedding(tau: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let freq = |k: usize| std::f64::consts::FRAC_PI_2 * (k + 1) as f64;
    let mut out = Vec::with_capacity(dim);
    out.extend((0..half).map(|k| (freq(k) * tau).sin()));
    out.extend((0..dim - half).map(|k| (freq(k) * tau).cos()));
    out
}

/// Token pooling: mean over rows next to a learned-query attention readout.
#[derive(Debug, Clone)]
pub struct Pooling {
    pub query: ParamId,
    pub attention: Attention,
    pub d_model: usize,
}

impl Pooling {
    pub fn new<R: Rng + ?Sized>(params: &mut ParamSet, name: &str, d_model: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            query: params.add_uniform(format!("{name}.query"), 1, d_model, d_model, rng)?,
            attention: Attention::new(params, &format!("{name}.readout"), d_model, 1, rng)?,
            d_model,
        })
    }

    pub fn out_dim(&self) -> usize {
        2 * self.d_model
    }

    /// `1 × 2D` summary of `tokens`.
    pub fn forward(&self, g: &mut Graph<'_>, tokens: Var) -> Result<Var> {
        let mean = g.mean_rows(tokens)?;
        let q = g.param(self.query);
        let read = self.attention.forward(g, q, tokens, None)?;
        g.hstack(&[mean, read])
    }
}

/// `F_θ(a_τ, τ, c)` as an MLP over `[a_τ; emb(τ); c]`.
#[derive(Debug, Clone)]
/// The MLP output plus a per-coordinate, τ-dependent gain on `a_τ`.
pub struct VelocityField {
    pub mlp: Mlp,
    pub skip: Linear,
    pub action_dim: usize,
    pub cond_dim: usize,
    pub time_dim: usize,
}

impl VelocityField {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        action_dim: usize,
        cond_dim: usize,
        hidden: usize,
        time_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let input = action_dim + time_dim + cond_dim;
        Ok(Self {
            mlp: Mlp::new(params, name, &[input, hidden, hidden, action_dim], rng)?,
            skip: Linear::new(params, &format!("{name}.skip"), time_dim, action_dim, rng)?,
            action_dim,
            cond_dim,
            time_dim,
        })
    }

    pub fn zero_output(&self, params: &mut ParamSet) {
        self.mlp.last().zero(params);
        self.skip.zero(params);
    }

    /// Batched field: `a` is `B × A`, `cond` is `B × C`, one τ per row.
    pub fn forward(&self, g: &mut Graph<'_>, a: Var, taus: &[f64], cond: Var) -> Result<Var> {
        let (b, ad) = g.shape(a);
        let (bc, cd) = g.shape(cond);
        if ad != self.action_dim || cd != self.cond_dim || bc != b || taus.len() != b {
            return Err(Error::dim(format!(
                "velocity field expects {b}×{} actions, {b}×{} conditioning and {b} times; got {b}×{ad}, {bc}×{cd}, {}",
                self.action_dim,
                self.cond_dim,
                taus.len()
            )));
        }
        let mut emb = Matrix::zeros(b, self.time_dim);
        for (r, &t) in taus.iter().enumerate() {
            emb.row_mut(r).copy_from_slice(&time_embedding(t, self.time_dim));
        }
        let emb = g.input(emb);
        let x = g.hstack(&[a, emb, cond])?;
        let out = self.mlp.forward(g, x)?;
        let gain = self.skip.forward(g, emb)?;
        let gated = g.mul(gain, a)?;
        g.add(out, gated)
    }

    /// Velocities for a batch of states sharing no graph with training.
    pub fn evaluate(&self, params: &ParamSet, a: &Matrix, tau: f64, cond: &Matrix) -> Result<Matrix> {
        let mut g = Graph::new(params);
        let av = g.input(a.clone());
        let cv = g.input(cond.clone());
        let taus = vec![tau; a.rows()];
        let v = self.forward(&mut g, av, &taus, cv)?;
        Ok(g.value(v).clone())
    }

    /// Integrates every row of `noise` from τ = 0 to 1 under its own conditioning row.
    pub fn sample(&self, params: &ParamSet, cond: &Matrix, noise: &Matrix, steps: usize) -> Result<Matrix> {
        let rows = noise.rows();
        let flat = euler_integrate(noise.data(), steps, |a, tau| {
            let m = Matrix::new(rows, self.action_dim, a.to_vec())?;
            Ok(self.evaluate(params, &m, tau, cond)?.into_data())
        })?;
        Matrix::new(rows, self.action_dim, flat)
    }
}

/// Mean squared error between `F_θ(a_τ, τ, c)` and `action − noise`.
pub fn flow_matching_loss(
    g: &mut Graph<'_>,
    field: &VelocityField,
    cond: Var,
    actions: &Matrix,
    noise: &Matrix,
    taus: &[f64],
) -> Result<Var> {
    if actions.shape() != noise.shape() || taus.len() != actions.rows() {
        return Err(Error::dim("actions, noise and τ batch sizes differ"));
    }
    if actions.rows() == 0 {
        return Err(Error::domain("empty batch"));
    }
    let mut interp = Matrix::zeros(actions.rows(), actions.cols());
    for r in 0..actions.rows() {
        let s = flow_train_target(actions.row(r), noise.row(r), taus[r])?;
        interp.row_mut(r).copy_from_slice(&s.interpolant);
    }
    let target = actions.zip_map(noise, |a, n| a - n)?;
    let a = g.input(interp);
    let pred = field.forward(g, a, taus, cond)?;
    let target = g.input(target);
    g.mse(pred, target)
}

/// Per-dimension standardization of action vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionNormalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ActionNormalizer {
    pub const STD_FLOOR: f64 = 1e-3;

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Fits mean and standard deviation per coordinate; tiny spreads are floored.
    pub fn fit<'a>(samples: impl IntoIterator<Item = &'a [f64]>, dim: usize, floor: f64) -> Result<Self> {
        let mut n = 0usize;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for s in samples {
            if s.len() != dim {
                return Err(Error::dim(format!("sample of {} values, expected {dim}", s.len())));
            }
            n += 1;
            for i in 0..dim {
                sum[i] += s[i];
                sq[i] += s[i] * s[i];
            }
        }
        if n == 0 {
            return Err(Error::domain("cannot fit a normalizer on no samples"));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = (0..dim)
            .map(|i| (sq[i] / n as f64 - mean[i] * mean[i]).max(0.0).sqrt().max(floor))
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Standardizes a flat chunk in place; coordinates cycle through the stats.
    pub fn normalize(&self, flat: &mut [f64]) {
        let d = self.dim();
        for (i, v) in flat.iter_mut().enumerate() {
            *v = (*v - self.mean[i % d]) / self.std[i % d];
        }
    }

    pub fn denormalize(&self, flat: &mut [f64]) {
        let d = self.dim();
        for (i, v) in flat.iter_mut().enumerate() {
            *v = *v * self.std[i % d] + self.mean[i % d];
        }
    }
}
