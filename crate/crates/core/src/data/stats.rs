//! Dataset-level histograms and label distributions as CSV.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::skills::SkillLabel;
use crate::data::trajectory::{read_trajectory, Trajectory};
use crate::error::Result;
use crate::state::normalize_wrench;

pub const HISTOGRAM_BINS: usize = 50;
pub const AXES: [&str; 6] = ["fx", "fy", "fz", "tx", "ty", "tz"];

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    /// `histograms[axis][bin]` over normalized values in [-1, 1].
    pub histograms: [[u64; HISTOGRAM_BINS]; 6],
    pub skills: BTreeMap<SkillLabel, u64>,
    /// Task name → (trajectories, steps).
    pub tasks: BTreeMap<String, (u64, u64)>,
    pub unreadable: Vec<(PathBuf, String)>,
}

impl Default for DatasetStats {
    fn default() -> Self {
        Self {
            histograms: [[0; HISTOGRAM_BINS]; 6],
            skills: BTreeMap::new(),
            tasks: BTreeMap::new(),
            unreadable: Vec::new(),
        }
    }
}

pub fn histogram_bin(v: f64) -> usize {
    let x = ((v.clamp(-1.0, 1.0) + 1.0) / 2.0 * HISTOGRAM_BINS as f64).floor() as usize;
    x.min(HISTOGRAM_BINS - 1)
}

impl DatasetStats {
    pub fn add(&mut self, t: &Trajectory) {
        for w in &t.wrenches {
            for (axis, v) in normalize_wrench(w).iter().enumerate() {
                self.histograms[axis][histogram_bin(*v)] += 1;
            }
        }
        for s in &t.skills {
            *self.skills.entry(*s).or_default() += 1;
        }
        let e = self.tasks.entry(t.task.clone()).or_default();
        e.0 += 1;
        e.1 += t.len() as u64;
    }

    pub fn skill_fractions(&self) -> Vec<(SkillLabel, f64)> {
        let total: u64 = self.skills.values().sum();
        SkillLabel::ALL
            .iter()
            .map(|l| {
                let c = self.skills.get(l).copied().unwrap_or(0);
                (*l, if total == 0 { 0.0 } else { c as f64 / total as f64 })
            })
            .collect()
    }

    /// Rows `section,key,value[,extra]`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("section,key,value,extra\n");
        for (axis, name) in AXES.iter().enumerate() {
            for (b, c) in self.histograms[axis].iter().enumerate() {
                let lo = -1.0 + 2.0 * b as f64 / HISTOGRAM_BINS as f64;
                let _ = writeln!(s, "histogram,{name},{c},{lo:.2}");
            }
        }
        for (l, f) in self.skill_fractions() {
            let c = self.skills.get(&l).copied().unwrap_or(0);
            let _ = writeln!(s, "skill,{l},{c},{f:.6}");
        }
        for (task, (n, steps)) in &self.tasks {
            let _ = writeln!(s, "task,{task},{n},{steps}");
        }
        for (p, e) in &self.unreadable {
            let _ = writeln!(s, "unreadable,{},0,{}", p.display(), e.replace(',', ";"));
        }
        s
    }
}

/// Reads every path in order; unreadable files are recorded and skipped.
pub fn dataset_stats(paths: &[impl AsRef<Path>]) -> Result<DatasetStats> {
    if paths.is_empty() {
        return Err(crate::error::Error::domain("no trajectories given"));
    }
    let mut stats = DatasetStats::default();
    for p in paths {
        match read_trajectory(p.as_ref()) {
            Ok(t) => stats.add(&t),
            Err(e) => stats.unreadable.push((p.as_ref().to_path_buf(), e.to_string())),
        }
    }
    Ok(stats)
}
