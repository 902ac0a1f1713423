//! Controllability of the linearized contact system: Jacobian of the
//! contact law, input matrices for position-only and hybrid control, the
//! controllability matrix, numerical rank and reachable-set dimension.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::sim::env::{env_force, step_position_only, EnvParams, SimState};
use crate::geometry::Pose;

pub const POSE_DIM: usize = 6;
pub const STATE_DIM: usize = 12;
pub const FD_STEP: f64 = 1e-6;
/// Relative singular-value cutoff for sampled reachable sets.
pub const REACHABLE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlMode {
    PositionOnly,
    Hybrid,
}

impl ControlMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::PositionOnly => "position_only",
            Self::Hybrid => "hybrid",
        }
    }
}

impl FromStr for ControlMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "position_only" => Ok(Self::PositionOnly),
            "hybrid" => Ok(Self::Hybrid),
            _ => Err(Error::domain(format!("unknown control mode `{s}`"))),
        }
    }
}

/// `z(k+1) = A z(k) + B u(k)` over `z = [p_e; f]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub a: Matrix,
    pub b: Matrix,
    pub mode: ControlMode,
}

impl LinearSystem {
    pub const LABELS: [&'static str; STATE_DIM] =
        ["x", "y", "z", "rx", "ry", "rz", "fx", "fy", "fz", "tx", "ty", "tz"];

    pub fn validate(&self) -> Result<()> {
        let n = self.a.rows();
        if self.a.cols() != n || self.b.rows() != n || self.b.cols() == 0 {
            return Err(Error::dim(format!(
                "A is {:?} and B is {:?}",
                self.a.shape(),
                self.b.shape()
            )));
        }
        Ok(())
    }
}

/// `J[i][j] = ∂f_i/∂p_j` at rest by central differences.
pub fn linearize_env(params: &EnvParams, point: [f64; POSE_DIM]) -> Result<Matrix> {
    params.validate()?;
    if point.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite operating point"));
    }
    let zero = [0.0; 6];
    let mut j = Matrix::zeros(POSE_DIM, POSE_DIM);
    for c in 0..POSE_DIM {
        let mut hi = point;
        let mut lo = point;
        hi[c] += FD_STEP;
        lo[c] -= FD_STEP;
        let fh = env_force(&hi, &zero, params).to_array();
        let fl = env_force(&lo, &zero, params).to_array();
        for r in 0..POSE_DIM {
            j.row_mut(r)[c] = (fh[r] - fl[r]) / (2.0 * FD_STEP);
        }
    }
    Ok(j)
}

/// `diag(gain, …, gain, 0, …, 0)` with `axes` controlled force channels.
pub fn force_authority(axes: usize, gain: f64) -> Matrix {
    let mut k = Matrix::zeros(POSE_DIM, POSE_DIM);
    for i in 0..axes.min(POSE_DIM) {
        k.row_mut(i)[i] = gain;
    }
    k
}

/// Position-only: `A = 0`, `B = [I₆; J]`. Hybrid: `B = [[I₆, 0], [J, I₆]]`.
pub fn build_system(j: &Matrix, mode: ControlMode) -> Result<LinearSystem> {
    match mode {
        ControlMode::PositionOnly => {
            if j.shape() != (POSE_DIM, POSE_DIM) {
                return Err(Error::dim(format!("Jacobian must be 6×6, got {:?}", j.shape())));
            }
            Ok(LinearSystem {
                a: Matrix::zeros(STATE_DIM, STATE_DIM),
                b: Matrix::vstack(&[&Matrix::identity(POSE_DIM), j])?,
                mode,
            })
        }
        ControlMode::Hybrid => build_hybrid(j, &Matrix::identity(POSE_DIM)),
    }
}

/// Hybrid input matrix with force authority `K`.
pub fn build_hybrid(j: &Matrix, k: &Matrix) -> Result<LinearSystem> {
    if j.shape() != (POSE_DIM, POSE_DIM) || k.shape() != (POSE_DIM, POSE_DIM) {
        return Err(Error::dim("Jacobian and force authority must be 6×6"));
    }
    let top = Matrix::hstack(&[&Matrix::identity(POSE_DIM), &Matrix::zeros(POSE_DIM, POSE_DIM)])?;
    let bottom = Matrix::hstack(&[j, k])?;
    Ok(LinearSystem {
        a: Matrix::zeros(STATE_DIM, STATE_DIM),
        b: Matrix::vstack(&[&top, &bottom])?,
        mode: ControlMode::Hybrid,
    })
}

/// `C = [B, AB, …, Aⁿ⁻¹B]`.
pub fn controllability_matrix(sys: &LinearSystem) -> Result<Matrix> {
    sys.validate()?;
    let n = sys.a.rows();
    let mut blocks = Vec::with_capacity(n);
    let mut cur = sys.b.clone();
    for _ in 0..n {
        let next = sys.a.matmul(&cur)?;
        blocks.push(cur);
        cur = next;
    }
    let refs: Vec<&Matrix> = blocks.iter().collect();
    Matrix::hstack(&refs)
}

/// Singular values in descending order by one-sided Jacobi rotations.
pub fn singular_values(m: &Matrix) -> Result<Vec<f64>> {
    if !m.is_finite() {
        return Err(Error::numeric("matrix has non-finite entries"));
    }
    let work = if m.rows() >= m.cols() { m.clone() } else { m.transpose() };
    let (rows, cols) = work.shape();
    // column-major copy
    let mut a: Vec<Vec<f64>> = (0..cols).map(|c| (0..rows).map(|r| work.row(r)[c]).collect()).collect();
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let (alpha, beta, gamma) = a[p].iter().zip(&a[q]).fold((0.0, 0.0, 0.0), |(x, y, z), (u, v)| {
                    (x + u * u, y + v * v, z + u * v)
                });
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (lo, hi) = a.split_at_mut(q);
                for (u, v) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
                    let (x, y) = (*u, *v);
                    *u = c * x - s * y;
                    *v = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut s: Vec<f64> = a.iter().map(|col| col.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    s.sort_by(|x, y| y.total_cmp(x));
    Ok(s)
}

/// Default rank tolerance `max(m, n)·ε·σ_max`.
pub fn default_tolerance(m: &Matrix, sigma_max: f64) -> f64 {
    m.rows().max(m.cols()) as f64 * f64::EPSILON * sigma_max
}

/// Singular values above `tol` (default rule when `None`).
pub fn numerical_rank(m: &Matrix, tol: Option<f64>) -> Result<usize> {
    let s = singular_values(m)?;
    let sigma_max = s.first().copied().unwrap_or(0.0);
    let tol = match tol {
        Some(t) if !(t > 0.0) => return Err(Error::domain(format!("rank tolerance {t} must be positive"))),
        Some(t) => t,
        None => default_tolerance(m, sigma_max),
    };
    Ok(s.iter().filter(|&&v| v > tol).count())
}

/// `κ = dim(R) / dim(Z)`
pub fn controllability_index(reachable_dim: usize, task_dim: usize) -> Result<f64> {
    if task_dim == 0 {
        return Err(Error::domain("task dimension must be positive"));
    }
    if reachable_dim == 0 || reachable_dim > task_dim {
        return Err(Error::domain(format!("reachable dimension {reachable_dim} outside (0, {task_dim}]")));
    }
    Ok(reachable_dim as f64 / task_dim as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllabilityReport {
    pub operating_point: [f64; POSE_DIM],
    pub mode: ControlMode,
    pub c: Matrix,
    pub rank: usize,
    pub singular_values: Vec<f64>,
    pub reachable_dim: usize,
    pub kappa: f64,
}

/// Rank and κ of the linearized system at `point`.
pub fn analyze(params: &EnvParams, point: [f64; POSE_DIM], mode: ControlMode) -> Result<ControllabilityReport> {
    let j = linearize_env(params, point)?;
    let sys = build_system(&j, mode)?;
    let c = controllability_matrix(&sys)?;
    let singular_values = singular_values(&c)?;
    let rank = numerical_rank(&c, None)?;
    Ok(ControllabilityReport {
        operating_point: point,
        mode,
        c,
        rank,
        singular_values,
        reachable_dim: rank,
        kappa: controllability_index(rank, STATE_DIM)?,
    })
}

pub fn reports_csv(reports: &[ControllabilityReport]) -> String {
    let mut s = String::from("x,y,z,rx,ry,rz,mode,rank,kappa,singular_values\n");
    for r in reports {
        let p: Vec<String> = r.operating_point.iter().map(|v| format!("{v}")).collect();
        let sv: Vec<String> = r.singular_values.iter().map(|v| format!("{v:.6e}")).collect();
        let _ = writeln!(s, "{},{},{},{},{}", p.join(","), r.mode.as_str(), r.rank, r.kappa, sv.join(";"));
    }
    s
}

/// Which command channels the sampled controller may use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReachController {
    /// Pose targets executed by ideal tracking; force is whatever the surface returns.
    PositionOnly,
    /// Pose targets plus a force command applied through authority `gain`,
    /// the idealized inverse model of the hybrid head.
    HybridIdealized { gain: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReachableEstimate {
    pub dim: usize,
    pub singular_values: Vec<f64>,
    /// First singular value below the cutoff over `σ_max` (0 when none).
    pub tail_ratio: f64,
    /// All samples coincided.
    pub degenerate: bool,
}

/// Samples `(p_e, f)` pairs around `center` and counts the singular values
/// of the centered sample matrix above `1e-6·σ_max`. Position-only samples
/// are settled: the target is held for a second step so velocity is zero.
pub fn reachable_dim_estimate(
    env: &EnvParams,
    center: [f64; POSE_DIM],
    controller: ReachController,
    n_samples: usize,
    seed: u64,
) -> Result<ReachableEstimate> {
    if n_samples < 100 {
        return Err(Error::domain(format!("need at least 100 samples, got {n_samples}")));
    }
    env.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n_samples);
    let rest = SimState::at_rest(Pose::from_pose6(center), env);
    for _ in 0..n_samples {
        let mut target = center;
        for (i, t) in target.iter_mut().enumerate() {
            let scale = if i < 3 { 2e-3 } else { 1e-2 };
            *t += rng.random_range(-scale..scale);
        }
        let pose = Pose::from_pose6(target);
        let moved = step_position_only(&rest, &pose, env)?;
        let settled = step_position_only(&moved, &pose, env)?;
        let mut f = settled.wrench.to_array();
        if let ReachController::HybridIdealized { gain } = controller {
            for v in f.iter_mut() {
                *v += gain * rng.random_range(-1.0..1.0);
            }
        }
        let mut row = settled.pose.to_pose6().to_vec();
        row.extend_from_slice(&f);
        rows.push(row);
    }
    let mut mean = [0.0; STATE_DIM];
    for r in &rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n_samples as f64;
        }
    }
    for r in rows.iter_mut() {
        for (v, m) in r.iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let x = Matrix::from_rows(&rows)?;
    let s = singular_values(&x)?;
    let sigma_max = s[0];
    if sigma_max == 0.0 {
        eprintln!("warning: reachable-set samples are all identical");
        return Ok(ReachableEstimate { dim: 0, singular_values: s, tail_ratio: 0.0, degenerate: true });
    }
    let dim = s.iter().filter(|&&v| v > REACHABLE_TOLERANCE * sigma_max).count();
    let tail_ratio = s.get(dim).map_or(0.0, |v| v / sigma_max);
    Ok(ReachableEstimate { dim, singular_values: s, tail_ratio, degenerate: false })
}
