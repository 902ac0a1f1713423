//! Resampling of the wrench and pose streams onto the camera timeline.

use crate::context::VisualObservation;
use crate::error::{Error, Result};
use crate::geometry::{Pose, Wrench};

pub const WRENCH_RATE_HZ: f64 = 300.0;
pub const CAMERA_RATE_HZ: f64 = 30.0;
/// Gaps longer than this many frame periods are errors.
pub const MAX_GAP_PERIODS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Synchronized {
    pub timestamps: Vec<f64>,
    pub frames: Vec<VisualObservation>,
    pub poses: Vec<Pose>,
    pub wrenches: Vec<Wrench>,
}

fn check_increasing(name: &str, times: impl Iterator<Item = f64>, max_gap: f64) -> Result<()> {
    let mut prev: Option<f64> = None;
    for t in times {
        if !t.is_finite() {
            return Err(Error::numeric(format!("non-finite timestamp in {name}")));
        }
        if let Some(p) = prev {
            if t <= p {
                return Err(Error::domain(format!("{name} timestamps are not increasing at t={t}")));
            }
            if t - p > max_gap {
                return Err(Error::Gap { start: p, end: t });
            }
        }
        prev = Some(t);
    }
    if prev.is_none() {
        return Err(Error::domain(format!("{name} stream is empty")));
    }
    Ok(())
}

fn nearest(times: &[f64], t: f64) -> usize {
    let i = times.partition_point(|&x| x < t);
    if i == 0 {
        0
    } else if i == times.len() {
        times.len() - 1
    } else if t - times[i - 1] <= times[i] - t {
        i - 1
    } else {
        i
    }
}

/// Frame `k` at `t_k` receives the mean wrench over `[t_k, t_k + T)` and the
/// pose closest to `t_k` within `±T/2`.
pub fn synchronize_streams(
    wrenches: &[(f64, Wrench)],
    frames: &[(f64, VisualObservation)],
    poses: &[(f64, Pose)],
    frame_period: f64,
) -> Result<Synchronized> {
    if !(frame_period > 0.0) {
        return Err(Error::domain("frame period must be positive"));
    }
    let max_gap = MAX_GAP_PERIODS * frame_period;
    check_increasing("wrench", wrenches.iter().map(|s| s.0), max_gap)?;
    check_increasing("frame", frames.iter().map(|s| s.0), max_gap)?;
    check_increasing("pose", poses.iter().map(|s| s.0), max_gap)?;

    let wt: Vec<f64> = wrenches.iter().map(|s| s.0).collect();
    let pt: Vec<f64> = poses.iter().map(|s| s.0).collect();
    let mut out = Synchronized {
        timestamps: Vec::with_capacity(frames.len()),
        frames: Vec::with_capacity(frames.len()),
        poses: Vec::with_capacity(frames.len()),
        wrenches: Vec::with_capacity(frames.len()),
    };
    for (t, frame) in frames {
        let (lo, hi) = (*t, t + frame_period);
        let a = wt.partition_point(|&x| x < lo);
        let b = wt.partition_point(|&x| x < hi);
        let wrench = if b > a {
            let mut acc = [0.0; 6];
            for (_, w) in &wrenches[a..b] {
                for (s, v) in acc.iter_mut().zip(w.to_array()) {
                    *s += v;
                }
            }
            let n = (b - a) as f64;
            Wrench::from_slice(&acc.map(|s| s / n))?
        } else {
            let j = nearest(&wt, lo);
            let d = if wt[j] < lo { lo - wt[j] } else { wt[j] - hi };
            if d > max_gap {
                let (s, e) = if wt[j] < lo { (wt[j], lo) } else { (hi, wt[j]) };
                return Err(Error::Gap { start: s, end: e });
            }
            wrenches[j].1
        };
        let j = nearest(&pt, *t);
        if (pt[j] - t).abs() > frame_period / 2.0 {
            let (s, e) = if pt[j] < *t { (pt[j], *t) } else { (*t, pt[j]) };
            return Err(Error::Gap { start: s, end: e });
        }
        out.timestamps.push(*t);
        out.frames.push(frame.clone());
        out.poses.push(poses[j].1);
        out.wrenches.push(wrench);
    }
    Ok(out)
}
