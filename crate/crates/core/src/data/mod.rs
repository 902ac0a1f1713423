//! Trajectory storage, stream synchronization, skill segmentation and labels.

pub mod annotate;
pub mod skills;
pub mod stats;
pub mod sync;
pub mod trajectory;

pub use crate::state::normalize_wrench;
pub use annotate::{annotate_transitions, transition_observation};
pub use skills::{classify_window, segment_skills, SkillLabel, SkillThresholds, WindowFeatures, DEFAULT_WINDOW};
pub use stats::{dataset_stats, DatasetStats};
pub use sync::{synchronize_streams, Synchronized, CAMERA_RATE_HZ, WRENCH_RATE_HZ};
pub use trajectory::{
    decode_trajectory, encode_trajectory, read_trajectory, write_trajectory, ForceCondition, SubtaskSegment,
    Trajectory, FORMAT_VERSION,
};

/// Per-dataset constants recorded next to the trajectory files.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub version: u32,
    pub trajectories: usize,
    pub wrench_rate_hz: f64,
    pub camera_rate_hz: f64,
    pub force_scale: f64,
    pub torque_scale: f64,
    pub corpus: String,
}

impl DatasetManifest {
    pub fn new(trajectories: usize, corpus: impl Into<String>) -> Self {
        Self {
            version: FORMAT_VERSION,
            trajectories,
            wrench_rate_hz: WRENCH_RATE_HZ,
            camera_rate_hz: CAMERA_RATE_HZ,
            force_scale: crate::state::FORCE_SCALE,
            torque_scale: crate::state::TORQUE_SCALE,
            corpus: corpus.into(),
        }
    }

    pub fn to_text(&self) -> String {
        format!(
            "version={}\ntrajectories={}\nwrench_rate_hz={}\ncamera_rate_hz={}\nforce_scale={}\ntorque_scale={}\ncorpus={}\n",
            self.version,
            self.trajectories,
            self.wrench_rate_hz,
            self.camera_rate_hz,
            self.force_scale,
            self.torque_scale,
            self.corpus
        )
    }
}
