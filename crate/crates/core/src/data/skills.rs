//! Window-level skill labels from position and force signatures.

use std::fmt;
use std::str::FromStr;

use crate::data::trajectory::Trajectory;
use crate::error::{Error, Result};
use crate::geometry::{norm3, Vec3};

pub const DEFAULT_WINDOW: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SkillLabel {
    Wipe,
    Push,
    Grasp,
    Rotate,
    Explore,
}

impl SkillLabel {
    pub const ALL: [SkillLabel; 5] = [Self::Wipe, Self::Push, Self::Grasp, Self::Rotate, Self::Explore];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Wipe => "wipe",
            Self::Push => "push",
            Self::Grasp => "grasp",
            Self::Rotate => "rotate",
            Self::Explore => "explore",
        }
    }
}

impl fmt::Display for SkillLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SkillLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::Format(format!("unknown skill label `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkillThresholds {
    pub wipe_position: f64,
    pub wipe_force: f64,
    pub push_z: f64,
    pub push_force_z: f64,
    pub grasp_z: f64,
    pub grasp_force: f64,
    pub rotate_axis_force: f64,
}

impl Default for SkillThresholds {
    fn default() -> Self {
        Self {
            wipe_position: 0.05,
            wipe_force: 10.0,
            push_z: 0.05,
            push_force_z: 5.0,
            grasp_z: 0.1,
            grasp_force: 5.0,
            rotate_axis_force: 1.0,
        }
    }
}

/// Max − min summaries of one window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowFeatures {
    pub position_change: Vec3,
    pub force_change: Vec3,
    pub force_norm_amplitude: f64,
}

impl WindowFeatures {
    pub fn from_samples(positions: &[Vec3], forces: &[Vec3]) -> Self {
        let range = |vals: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            if hi >= lo {
                hi - lo
            } else {
                0.0
            }
        };
        Self {
            position_change: std::array::from_fn(|i| range(&mut positions.iter().map(|p| p[i]))),
            force_change: std::array::from_fn(|i| range(&mut forces.iter().map(|f| f[i]))),
            force_norm_amplitude: range(&mut forces.iter().map(|f| norm3(*f))),
        }
    }

    pub fn max_position_change(&self) -> f64 {
        self.position_change.iter().copied().fold(0.0, f64::max)
    }
}

/// Evaluates Wipe → Push → Grasp → Rotate and falls back to Explore.
pub fn classify_window(w: &WindowFeatures, t: &SkillThresholds) -> SkillLabel {
    if w.max_position_change() > t.wipe_position && w.force_norm_amplitude > t.wipe_force {
        SkillLabel::Wipe
    } else if w.position_change[2] > t.push_z && w.force_change[2] > t.push_force_z {
        SkillLabel::Push
    } else if w.position_change[2] > t.grasp_z && w.force_norm_amplitude > t.grasp_force {
        SkillLabel::Grasp
    } else if w.force_change.iter().all(|&c| c > t.rotate_axis_force) {
        SkillLabel::Rotate
    } else {
        SkillLabel::Explore
    }
}

/// One label per non-overlapping window; a short tail forms its own window.
pub fn segment_skills(t: &Trajectory, window: usize, thresholds: &SkillThresholds) -> Result<Vec<SkillLabel>> {
    if window < 2 {
        return Err(Error::domain(format!("window {window} must be at least 2 steps")));
    }
    let positions: Vec<Vec3> = t.poses.iter().map(|p| p.position).collect();
    let forces: Vec<Vec3> = t.wrenches.iter().map(|w| w.force).collect();
    Ok(positions
        .chunks(window)
        .zip(forces.chunks(window))
        .map(|(p, f)| classify_window(&WindowFeatures::from_samples(p, f), thresholds))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn features(dpos: Vec3, dforce: Vec3, norm_amp: f64) -> WindowFeatures {
        WindowFeatures { position_change: dpos, force_change: dforce, force_norm_amplitude: norm_amp }
    }

    #[test]
    fn rule_examples() {
        let t = SkillThresholds::default();
        assert_eq!(classify_window(&features([0.06, 0.0, 0.0], [0.0, 0.0, 12.0], 12.0), &t), SkillLabel::Wipe);
        assert_eq!(classify_window(&features([0.0, 0.0, 0.06], [0.0, 0.0, 6.0], 8.0), &t), SkillLabel::Push);
        assert_eq!(classify_window(&features([0.01, 0.0, 0.0], [0.5; 3], 0.5), &t), SkillLabel::Explore);
        assert_eq!(classify_window(&features([0.0, 0.0, 0.12], [4.0, 4.0, 2.0], 6.0), &t), SkillLabel::Grasp);
        assert_eq!(classify_window(&features([0.0; 3], [1.5; 3], 2.0), &t), SkillLabel::Rotate);
    }

    #[test]
    fn window_features_from_samples() {
        let p = [[0.0, 0.0, 0.0], [0.02, -0.03, 0.1], [0.01, 0.0, 0.05]];
        let f = [[0.0, 0.0, 3.0], [0.0, 4.0, 0.0], [1.0, 0.0, 0.0]];
        let w = WindowFeatures::from_samples(&p, &f);
        assert!((w.position_change[1] - 0.03).abs() < 1e-15);
        assert_eq!(w.force_change, [1.0, 4.0, 3.0]);
        assert_eq!(w.force_norm_amplitude, 3.0);
        assert_eq!(WindowFeatures::from_samples(&[], &[]).max_position_change(), 0.0);
    }

    #[test]
    fn labels_parse() {
        for l in SkillLabel::ALL {
            assert_eq!(l.as_str().parse::<SkillLabel>().unwrap(), l);
        }
        assert!("dance".parse::<SkillLabel>().is_err());
    }
}
