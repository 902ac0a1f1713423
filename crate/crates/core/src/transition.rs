//! Subtask-completion statistics and the closed-form transition probability.
//!
//! Given the observed orientation alignment θ, remaining distance l and
//! contact force f, the label is the joint probability
//! `P(Θ ≤ θ, L ≥ l, F ≤ f)` under `Θ ~ Beta(α, 1)`, `L ~ Exp(λ)` and
//! `F ~ Uniform(n, m)`, which factorizes into
//! `Γ(α+1)/(α·Γ(α)) · θ^α · e^(−λl) · (f − n)/(m − n)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Exp, Uniform};

use crate::error::{Error, Result};
use crate::geometry::{norm3, sub3, Vec3, Wrench};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionParams {
    /// Beta shape for Θ.
    pub alpha: f64,
    /// Exponential rate for L, per meter.
    pub lambda: f64,
    /// Uniform lower force bound, newtons.
    pub n: f64,
    /// Uniform upper force bound, newtons.
    pub m: f64,
}

impl Default for TransitionParams {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            lambda: 2.0,
            n: 0.0,
            m: 100.0,
        }
    }
}

impl TransitionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::domain(format!("alpha = {} must be positive", self.alpha)));
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::domain(format!("lambda = {} must be positive", self.lambda)));
        }
        if !(self.n < self.m) || !self.n.is_finite() || !self.m.is_finite() {
            return Err(Error::domain(format!("need n < m, got n = {}, m = {}", self.n, self.m)));
        }
        Ok(())
    }
}

/// Observed (θ, l, f) together with the distribution parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionObservation {
    pub theta: f64,
    pub distance: f64,
    pub force: f64,
    pub params: TransitionParams,
}

impl TransitionObservation {
    pub fn new(theta: f64, distance: f64, force: f64, params: TransitionParams) -> Self {
        Self {
            theta,
            distance,
            force,
            params,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::domain(format!("theta = {} outside [0, 1]", self.theta)));
        }
        if !(self.distance >= 0.0) || !self.distance.is_finite() {
            return Err(Error::domain(format!("distance = {} must be >= 0", self.distance)));
        }
        let TransitionParams { n, m, .. } = self.params;
        if !(self.force >= n && self.force <= m) {
            return Err(Error::domain(format!("force {} outside [{n}, {m}]", self.force)));
        }
        Ok(())
    }
}

/// Orientation alignment `½(cos∠(e, e_t) + 1)`: 1 aligned, 0 opposite.
pub fn orientation_alignment(e: Vec3, e_target: Vec3) -> Result<f64> {
    let (a, b) = (norm3(e), norm3(e_target));
    if a < 1e-12 || b < 1e-12 {
        return Err(Error::domain("orientation vector has zero length"));
    }
    let cos = (e[0] * e_target[0] + e[1] * e_target[1] + e[2] * e_target[2]) / (a * b);
    Ok((0.5 * (cos.clamp(-1.0, 1.0) + 1.0)).clamp(0.0, 1.0))
}

pub fn remaining_distance(position: Vec3, target: Vec3) -> f64 {
    norm3(sub3(target, position))
}

/// Norm of the force part, clipped into `[n, m]`.
pub fn force_magnitude(w: &Wrench, n: f64, m: f64) -> f64 {
    w.force_norm().clamp(n, m)
}

/// Γ(x) by the Lanczos approximation (g = 7, 9 terms), with an exact
/// factorial for small positive integers.
pub fn gamma(x: f64) -> f64 {
    if x == x.floor() && x > 0.0 && x <= 171.0 {
        return (1..x as u64).fold(1.0, |acc, k| acc * k as f64);
    }
    if x < 0.5 {
        // reflection
        return std::f64::consts::PI / ((std::f64::consts::PI * x).sin() * gamma(1.0 - x));
    }
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + G + 0.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    (2.0 * std::f64::consts::PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * a
}

/// Closed-form `ŝ` including the `Γ(α+1)/(α·Γ(α))` normalizer.
pub fn transition_probability(obs: &TransitionObservation) -> Result<f64> {
    obs.validate()?;
    let TransitionParams { alpha, lambda, n, m } = obs.params;
    let normalizer = gamma(alpha + 1.0) / (alpha * gamma(alpha));
    let s = normalizer
        * obs.theta.powf(alpha)
        * (-lambda * obs.distance).exp()
        * (obs.force - n)
        / (m - n);
    Ok(s.clamp(0.0, 1.0))
}

/// `θ^α · e^(−λl) · (f − n)/(m − n)`; equal to [`transition_probability`]
/// because the Gamma normalizer is identically one.
pub fn transition_probability_simplified(obs: &TransitionObservation) -> Result<f64> {
    obs.validate()?;
    let TransitionParams { alpha, lambda, n, m } = obs.params;
    Ok(obs.theta.powf(alpha) * (-lambda * obs.distance).exp() * (obs.force - n) / (m - n))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub samples: usize,
}

/// Empirical frequency of `{Θ ≤ θ, L ≥ l, F ≤ f}` under independent draws.
pub fn mc_transition_oracle(
    obs: &TransitionObservation,
    samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    if samples < 10_000 {
        return Err(Error::domain(format!("need at least 1e4 samples, got {samples}")));
    }
    obs.validate()?;
    let TransitionParams { alpha, lambda, n, m } = obs.params;
    let beta = Beta::new(alpha, 1.0).map_err(|e| Error::domain(e.to_string()))?;
    let exp = Exp::new(lambda).map_err(|e| Error::domain(e.to_string()))?;
    let uni = Uniform::new(n, m).map_err(|e| Error::domain(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut hits = 0usize;
    for _ in 0..samples {
        let th: f64 = beta.sample(&mut rng);
        let l: f64 = exp.sample(&mut rng);
        let f: f64 = uni.sample(&mut rng);
        if th <= obs.theta && l >= obs.distance && f <= obs.force {
            hits += 1;
        }
    }
    let p = hits as f64 / samples as f64;
    Ok(McEstimate {
        estimate: p,
        stderr: (p * (1.0 - p) / samples as f64).sqrt(),
        samples,
    })
}

/// Progress-driven subtask state machine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionState {
    pub index: usize,
    pub num_subtasks: usize,
    pub progress: f64,
    pub threshold: f64,
}

pub const DEFAULT_THRESHOLD: f64 = 0.9;

impl TransitionState {
    pub fn new(num_subtasks: usize, threshold: f64) -> Result<Self> {
        if num_subtasks == 0 {
            return Err(Error::domain("plan has no subtasks"));
        }
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(Error::domain(format!("threshold {threshold} outside (0, 1]")));
        }
        Ok(Self {
            index: 0,
            num_subtasks,
            progress: 0.0,
            threshold,
        })
    }

    pub fn is_terminal(&self) -> bool {
        self.index + 1 >= self.num_subtasks
    }
}

/// Advances when the predicted progress reaches the threshold. The last
/// subtask is absorbing.
pub fn subtask_step(state: TransitionState, predicted: f64) -> TransitionState {
    let s = predicted.clamp(0.0, 1.0);
    let mut next = state;
    if s >= state.threshold {
        if !state.is_terminal() {
            next.index += 1;
            next.progress = 0.0;
        } else {
            next.progress = s;
        }
    } else {
        next.progress = s;
    }
    next
}
