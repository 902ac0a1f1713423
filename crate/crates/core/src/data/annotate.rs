//! Per-step transition labels `ŝ` from the closed-form model.

use crate::data::trajectory::{ForceCondition, Trajectory};
use crate::error::{Error, Result};
use crate::transition::{
    force_magnitude, orientation_alignment, remaining_distance, transition_probability, TransitionObservation,
    TransitionParams,
};

/// Observation for step `k` against the end pose of its segment.
pub fn transition_observation(t: &Trajectory, k: usize, params: TransitionParams) -> Result<TransitionObservation> {
    let seg = t
        .segment_at(k)
        .map(|i| &t.segments[i])
        .ok_or_else(|| Error::Annotation(format!("step {k} lies in no subtask segment")))?;
    let target = &t.poses[seg.end - 1];
    let pose = &t.poses[k];
    let theta = orientation_alignment(pose.orientation.forward_axis(), target.orientation.forward_axis())?;
    let distance = remaining_distance(pose.position, target.position);
    let (params, force) = match seg.force {
        ForceCondition::Ignored => (params, params.m),
        ForceCondition::Range { n, m } => {
            let p = TransitionParams { n, m, ..params };
            (p, force_magnitude(&t.wrenches[k], n, m))
        }
    };
    Ok(TransitionObservation::new(theta, distance, force, params))
}

/// `ŝ` for every step of `t`.
pub fn annotate_transitions(t: &Trajectory, params: TransitionParams) -> Result<Vec<f64>> {
    if t.segments.is_empty() {
        return Err(Error::Annotation("trajectory has no subtask boundaries".into()));
    }
    (0..t.len())
        .map(|k| transition_probability(&transition_observation(t, k, params)?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::trajectory::tests::sample;
    use crate::geometry::Wrench;

    #[test]
    fn saturates_at_target_and_decays_far_away() {
        let mut t = sample(6);
        t.segments[1].force = ForceCondition::Range { n: 0.0, m: 5.0 };
        t.wrenches[5] = Wrench::from_force([0.0, 0.0, 5.0]);
        let s = annotate_transitions(&t, TransitionParams::default()).unwrap();
        assert_eq!(s[5], 1.0);
        assert_eq!(s[2], 1.0);
        // step 0 sits 2 m from its segment end
        assert!((s[0] - (-4.0f64).exp()).abs() < 1e-12);
        t.segments.clear();
        assert!(matches!(annotate_transitions(&t, TransitionParams::default()), Err(Error::Annotation(_))));
    }
}
