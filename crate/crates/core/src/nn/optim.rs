use super::matrix::Matrix;
use super::params::{Gradients, ParamSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamWConfig {
    pub fn new(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// Moment accumulators for [`adamw_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    pub step: u64,
    pub first_moment: Vec<Matrix>,
    pub second_moment: Vec<Matrix>,
}

impl OptimizerState {
    pub fn new(params: &ParamSet, config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
        }
    }
}

/// One bias-corrected AdamW update with decoupled weight decay, at learning
/// rate `lr` (the schedule's value for this step).
pub fn adamw_step(
    params: &mut ParamSet,
    grads: &Gradients,
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    if !(lr >= 0.0) {
        return Err(Error::domain(format!("learning rate {lr} must be non-negative")));
    }
    if grads.0.len() != params.len() || state.first_moment.len() != params.len() {
        return Err(Error::dim("gradient/state count does not match parameters"));
    }
    for (g, p) in grads.0.iter().zip(params.values()) {
        if g.shape() != p.shape() {
            return Err(Error::dim(format!(
                "gradient {:?} for parameter {:?}",
                g.shape(),
                p.shape()
            )));
        }
        if !g.is_finite() {
            return Err(Error::numeric("non-finite gradient"));
        }
    }

    state.step += 1;
    let cfg = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);

    let moments = state.first_moment.iter_mut().zip(state.second_moment.iter_mut());
    for ((p, g), (m, v)) in params.values_mut_all().iter_mut().zip(&grads.0).zip(moments) {
        let pd = p.data_mut();
        let (md, vd) = (m.data_mut(), v.data_mut());
        for i in 0..pd.len() {
            let gi = g.data()[i];
            md[i] = cfg.beta1 * md[i] + (1.0 - cfg.beta1) * gi;
            vd[i] = cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = md[i] / c1;
            let v_hat = vd[i] / c2;
            pd[i] -= lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * pd[i]);
        }
    }
    Ok(())
}

/// Cosine decay from `base` to zero over `total` steps. Steps past `total`
/// clamp to the final value.
pub fn cosine_lr(step: u64, total: u64, base: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::domain("cosine schedule needs total > 0"));
    }
    let progress = step.min(total) as f64 / total as f64;
    Ok(0.5 * base * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// `shadow ← decay·shadow + (1 − decay)·params`
pub fn ema_update(shadow: &mut ParamSet, params: &ParamSet, decay: f64) -> Result<()> {
    if !(0.0..1.0).contains(&decay) {
        return Err(Error::domain(format!("EMA decay {decay} outside [0, 1)")));
    }
    if shadow.len() != params.len() {
        return Err(Error::dim("EMA shadow and parameters differ in count"));
    }
    for (s, p) in shadow.values_mut_all().iter_mut().zip(params.values()) {
        if s.shape() != p.shape() {
            return Err(Error::dim("EMA shadow shape mismatch"));
        }
        for (a, b) in s.data_mut().iter_mut().zip(p.data()) {
            *a = decay * *a + (1.0 - decay) * b;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> (ParamSet, Gradients) {
        let mut p = ParamSet::new();
        p.add("p", Matrix::row_vector(&[v])).unwrap();
        (p, Gradients(vec![Matrix::row_vector(&[0.0])]))
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut p, _) = scalar(1.0);
        let grads = Gradients(vec![Matrix::row_vector(&[1.0])]);
        let mut st = OptimizerState::new(&p, AdamWConfig::default());
        adamw_step(&mut p, &grads, &mut st, 0.1).unwrap();
        // m̂ = 1, v̂ = 1 after bias correction
        let expected = 1.0 - 0.1 * (1.0 / (1.0 + 1e-8));
        assert!((p.flatten()[0] - expected).abs() < 1e-15);
        assert!((p.flatten()[0] - 0.9).abs() < 1e-8);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_gradient_cases() {
        let (mut p, zero) = scalar(2.0);
        let mut st = OptimizerState::new(&p, AdamWConfig::default());
        adamw_step(&mut p, &zero, &mut st, 0.1).unwrap();
        assert_eq!(p.flatten()[0], 2.0);

        let cfg = AdamWConfig {
            weight_decay: 0.01,
            ..AdamWConfig::default()
        };
        let mut st = OptimizerState::new(&p, cfg);
        adamw_step(&mut p, &zero, &mut st, 0.1).unwrap();
        assert!((p.flatten()[0] - 2.0 * (1.0 - 0.1 * 0.01)).abs() < 1e-15);
    }

    #[test]
    fn rejects_nan_and_negative_lr() {
        let (mut p, _) = scalar(1.0);
        let mut st = OptimizerState::new(&p, AdamWConfig::default());
        let nan = Gradients(vec![Matrix::from_raw(1, 1, vec![f64::NAN])]);
        assert!(matches!(adamw_step(&mut p, &nan, &mut st, 0.1), Err(Error::Numeric(_))));
        let ok = Gradients(vec![Matrix::row_vector(&[1.0])]);
        assert!(adamw_step(&mut p, &ok, &mut st, -1.0).is_err());
        assert_eq!(st.step, 0);
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 100, 0.5).unwrap(), 0.5);
        assert!(cosine_lr(100, 100, 0.5).unwrap().abs() < 1e-17);
        assert!((cosine_lr(50, 100, 0.5).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(cosine_lr(150, 100, 0.5).unwrap(), cosine_lr(100, 100, 0.5).unwrap());
        assert!(cosine_lr(0, 0, 0.5).is_err());
    }

    #[test]
    fn ema_cases() {
        let (mut shadow, _) = scalar(0.0);
        let (target, _) = scalar(1.0);
        ema_update(&mut shadow, &target, 0.99).unwrap();
        assert!((shadow.flatten()[0] - 0.01).abs() < 1e-15);

        let (mut fixed, _) = scalar(3.0);
        let (same, _) = scalar(3.0);
        ema_update(&mut fixed, &same, 0.99).unwrap();
        assert_eq!(fixed.flatten()[0], 3.0);

        // error after k steps is 0.99^k of the initial error
        let (mut s, _) = scalar(0.0);
        let mut prev = 1.0;
        for k in 1..=200 {
            ema_update(&mut s, &target, 0.99).unwrap();
            let err = 1.0 - s.flatten()[0];
            assert!((err - 0.99f64.powi(k)).abs() < 1e-12);
            assert!((err / prev - 0.99).abs() < 1e-9);
            prev = err;
        }
        assert!(ema_update(&mut s, &target, 1.0).is_err());
    }
}
