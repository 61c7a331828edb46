//! Joint-error tracking and cross-joint compensation.
//!
//! Per cycle, for every joint, a raw tracking error is computed against the
//! request that is expected to be executing right now (issued `D` cycles
//! ago, matching the motor delay). A short-horizon prediction and a
//! sign/magnitude filter turn it into the applied error, which keyframe
//! rules then distribute onto other joints as additive target offsets.
//! Offsets ramp in with keyframe progress: at 10% execution time only 10%
//! of the correction is applied.

use std::collections::VecDeque;

use crate::joints::{JointId, JointLimits, JointVector, JOINT_COUNT};
use crate::script::{CompensationRule, Interpolation};

/// Motor delay expressed in control cycles.
pub const DEFAULT_DELAY_CYCLES: usize = 3;

/// Raw tracking error: delayed request minus measured position.
#[inline]
pub fn raw_error(request_past: f64, measured: f64) -> f64 {
    request_past - measured
}

/// Predicted error: extrapolates the last raw-error change over the motor
/// delay (three cycles) ahead of the current raw error.
#[inline]
pub fn predict_error(delta_t: f64, delta_prev: f64) -> f64 {
    3.0 * (delta_t - delta_prev) + delta_t
}

/// Combines raw and predicted error, keeping the value closest to zero.
///
/// Opposite signs mean the prediction says the error is vanishing, so zero
/// is used; otherwise the smaller magnitude of the two wins. The result
/// never exceeds the raw error in magnitude and never flips its sign.
#[inline]
pub fn filter_error(delta_hat: f64, delta_t: f64) -> f64 {
    if delta_hat * delta_t <= 0.0 {
        0.0
    } else if delta_hat.abs() < delta_t.abs() {
        delta_hat
    } else {
        delta_t
    }
}

/// Ring buffer of the last `D` issued joint requests.
///
/// The oldest entry is the command expected to be executing now.
#[derive(Debug, Clone)]
pub struct RequestHistory {
    depth: usize,
    buf: VecDeque<JointVector>,
}

impl RequestHistory {
    /// Pre-filled with `initial` so the delayed view is defined from the
    /// first cycle on.
    pub fn new(depth: usize, initial: JointVector) -> Self {
        assert!(depth >= 1, "delay must be at least one cycle");
        let mut buf = VecDeque::with_capacity(depth);
        for _ in 0..depth {
            buf.push_back(initial);
        }
        RequestHistory { depth, buf }
    }

    /// The request issued `depth` cycles ago.
    pub fn oldest(&self) -> &JointVector {
        self.buf.front().expect("history is never empty")
    }

    /// Record this cycle's issued request, dropping the oldest.
    pub fn push(&mut self, request: JointVector) {
        self.buf.push_back(request);
        if self.buf.len() > self.depth {
            self.buf.pop_front();
        }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }
}

/// Error pipeline values for one joint.
#[derive(Debug, Clone, Copy, Default)]
pub struct JointError {
    /// Raw error of the current cycle.
    pub delta_t: f64,
    /// Raw error of the previous cycle.
    pub delta_prev: f64,
    /// Predicted error.
    pub delta_hat: f64,
    /// Applied error after filtering and the activation deadband.
    pub delta: f64,
}

/// Per-joint error state advanced once per cycle.
#[derive(Debug, Clone)]
pub struct ErrorState {
    entries: [JointError; JOINT_COUNT],
}

impl Default for ErrorState {
    fn default() -> Self {
        ErrorState {
            entries: [JointError::default(); JOINT_COUNT],
        }
    }
}

impl ErrorState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn joint(&self, j: JointId) -> &JointError {
        &self.entries[j.index()]
    }

    /// Advance the pipeline one cycle.
    ///
    /// `thresholds` carries the activation deadband for joints watched by
    /// an active rule; for those, the applied error is zeroed while the
    /// raw error stays below it. Joints without an active rule keep an
    /// applied error of zero.
    pub fn update(
        &mut self,
        history: &RequestHistory,
        measured: &JointVector,
        thresholds: &[Option<f64>; JOINT_COUNT],
    ) {
        let expected = history.oldest();
        for j in JointId::all() {
            let e = &mut self.entries[j.index()];
            e.delta_prev = e.delta_t;
            e.delta_t = raw_error(expected[j], measured[j]);
            e.delta_hat = predict_error(e.delta_t, e.delta_prev);
            e.delta = match thresholds[j.index()] {
                Some(threshold) if e.delta_t.abs() >= threshold => {
                    filter_error(e.delta_hat, e.delta_t)
                }
                _ => 0.0,
            };
        }
    }

    pub fn reset(&mut self) {
        self.entries = [JointError::default(); JOINT_COUNT];
    }
}

/// Collect the activation thresholds of all rules watching each joint.
///
/// When both the current and the previous keyframe watch a joint, the
/// current keyframe's threshold wins.
pub fn active_thresholds(
    current_rules: &[CompensationRule],
    previous_rules: &[CompensationRule],
) -> [Option<f64>; JOINT_COUNT] {
    let mut t = [None; JOINT_COUNT];
    for rule in previous_rules.iter().chain(current_rules.iter()) {
        t[rule.watched.index()] = Some(rule.activation_threshold);
    }
    t
}

/// Full-strength additive corrections for the active keyframe.
///
/// End offsets follow the current keyframe's rules against its end
/// targets; start offsets follow the previous keyframe's rules against the
/// start pose. Both use the applied errors of this cycle.
#[derive(Debug, Clone, Default)]
pub struct CompensationFrame {
    end_offsets: [f64; JOINT_COUNT],
    start_offsets: [f64; JOINT_COUNT],
}

impl CompensationFrame {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn end_offset(&self, j: JointId) -> f64 {
        self.end_offsets[j.index()]
    }

    pub fn start_offset(&self, j: JointId) -> f64 {
        self.start_offsets[j.index()]
    }

    pub fn is_zero(&self) -> bool {
        self.end_offsets.iter().all(|o| *o == 0.0) && self.start_offsets.iter().all(|o| *o == 0.0)
    }
}

fn accumulate(
    rules: &[CompensationRule],
    errors: &ErrorState,
    targets: &JointVector,
    limits: &JointLimits,
    out: &mut [f64; JOINT_COUNT],
) {
    for rule in rules {
        let delta = errors.joint(rule.watched).delta;
        if delta == 0.0 {
            continue;
        }
        for target in &rule.targets {
            out[target.joint.index()] += delta * target.factor;
        }
    }
    // Keep the fully corrected target inside the joint's legal range.
    for j in JointId::all() {
        let i = j.index();
        if out[i] != 0.0 {
            let range = limits.range(j);
            out[i] = (targets[j] + out[i]).clamp(range.min, range.max) - targets[j];
        }
    }
}

/// Compute the frame of full-strength corrections for this cycle.
///
/// Contributions of several watched joints onto the same target sum.
pub fn apply_compensation(
    rules: &[CompensationRule],
    errors: &ErrorState,
    end_targets: &JointVector,
    start_targets: &JointVector,
    prev_rules: &[CompensationRule],
    limits: &JointLimits,
) -> CompensationFrame {
    let mut frame = CompensationFrame::zero();
    accumulate(rules, errors, end_targets, limits, &mut frame.end_offsets);
    accumulate(
        prev_rules,
        errors,
        start_targets,
        limits,
        &mut frame.start_offsets,
    );
    frame
}

/// Interpolation weight for the base trajectory.
#[inline]
pub fn interpolation_weight(kind: Interpolation, s: f64) -> f64 {
    match kind {
        Interpolation::Linear => s,
        Interpolation::Cosine => 0.5 * (1.0 - (std::f64::consts::PI * s).cos()),
    }
}

/// One joint's request at keyframe phase `s`.
///
/// The base interpolates from the start pose to the end target; the start
/// correction fades out while the end correction fades in linearly with
/// time, so the request leaves exactly from the previous keyframe's
/// compensated end and arrives at the compensated target.
pub fn ramped_target(
    start: f64,
    end: f64,
    start_offset: f64,
    end_offset: f64,
    s: f64,
    kind: Interpolation,
) -> f64 {
    let s = s.clamp(0.0, 1.0);
    let base = start + interpolation_weight(kind, s) * (end - start);
    base + (1.0 - s) * start_offset + s * end_offset
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::script::CompensationTarget;
    use proptest::prelude::*;

    const DEG: f64 = std::f64::consts::PI / 180.0;

    #[test]
    fn raw_error_is_plain_difference() {
        assert_eq!(raw_error(0.5, 0.3), 0.2);
        assert_eq!(raw_error(0.123, 0.123), 0.0);
        assert_eq!(raw_error(-0.1, 0.1), -0.2);
    }

    #[test]
    fn predict_error_spot_values() {
        assert!((predict_error(0.20, 0.25) - 0.05).abs() < 1e-15);
        assert!((predict_error(0.2, 0.1) - 0.5).abs() < 1e-15);
        for c in [-0.4, 0.0, 0.7] {
            assert_eq!(predict_error(c, c), c);
        }
    }

    #[test]
    fn filter_error_cases() {
        assert_eq!(filter_error(-0.05, 0.20), 0.0);
        assert_eq!(filter_error(0.05, 0.20), 0.05);
        assert_eq!(filter_error(0.30, 0.20), 0.20);
        assert_eq!(filter_error(0.0, 0.0), 0.0);
    }

    /// Independent exhaustive case analysis: of the candidates {0, raw,
    /// predicted}, pick zero on sign disagreement, otherwise the smaller
    /// magnitude, raw on ties.
    fn filter_oracle(delta_hat: f64, delta_t: f64) -> f64 {
        let same_sign = (delta_hat > 0.0 && delta_t > 0.0) || (delta_hat < 0.0 && delta_t < 0.0);
        if !same_sign {
            return 0.0;
        }
        if delta_hat.abs() < delta_t.abs() {
            delta_hat
        } else {
            delta_t
        }
    }

    #[test]
    fn filter_error_matches_oracle_on_full_grid() {
        // (delta_hat, delta_t) over [-30 deg, 30 deg]^2 at 0.5 deg steps.
        let mut checked = 0usize;
        for i in -60..=60 {
            for k in -60..=60 {
                let dh = i as f64 * 0.5 * DEG;
                let dt = k as f64 * 0.5 * DEG;
                let got = filter_error(dh, dt);
                let want = filter_oracle(dh, dt);
                assert_eq!(got, want, "mismatch at ({i}, {k})");
                checked += 1;
            }
        }
        assert_eq!(checked, 121 * 121);
    }

    proptest! {
        #[test]
        fn filter_never_grows_and_keeps_sign(dh in -1.0f64..1.0, dt in -1.0f64..1.0) {
            let f = filter_error(dh, dt);
            prop_assert!(f.abs() <= dt.abs());
            prop_assert!(f * dt >= 0.0);
            prop_assert!(f == 0.0 || f == dh || f == dt);
        }

        #[test]
        fn ramp_boundaries(start in -1.0f64..1.0, end in -1.0f64..1.0,
                           so in -0.3f64..0.3, eo in -0.3f64..0.3) {
            let at0 = ramped_target(start, end, so, eo, 0.0, Interpolation::Linear);
            let at1 = ramped_target(start, end, so, eo, 1.0, Interpolation::Linear);
            prop_assert!((at0 - (start + so)).abs() < 1e-12);
            prop_assert!((at1 - (end + eo)).abs() < 1e-12);
            let c0 = ramped_target(start, end, so, eo, 0.0, Interpolation::Cosine);
            let c1 = ramped_target(start, end, so, eo, 1.0, Interpolation::Cosine);
            prop_assert!((c0 - at0).abs() < 1e-12);
            prop_assert!((c1 - at1).abs() < 1e-12);
        }
    }

    #[test]
    fn ramp_applies_ten_percent_correction_at_ten_percent_time() {
        let end_offset = 5.0 * DEG;
        let plain = ramped_target(0.0, 1.0, 0.0, 0.0, 0.1, Interpolation::Linear);
        let ramped = ramped_target(0.0, 1.0, 0.0, end_offset, 0.1, Interpolation::Linear);
        let correction = ramped - plain;
        let expected = 0.1 * end_offset;
        assert!(
            ((correction - expected) / expected).abs() < 1e-9,
            "correction {correction} vs {expected}"
        );
    }

    fn thresholds_for(joint: JointId, threshold: f64) -> [Option<f64>; JOINT_COUNT] {
        let mut t = [None; JOINT_COUNT];
        t[joint.index()] = Some(threshold);
        t
    }

    #[test]
    fn tracking_requests_give_zero_delta_everywhere() {
        let mut history = RequestHistory::new(3, JointVector::zeros());
        let mut state = ErrorState::new();
        let thresholds = thresholds_for(JointId::HipYawPitch, 0.0);
        for cycle in 0..20 {
            let v = JointVector::from_fn(|j| (cycle as f64 * 0.01) + j.index() as f64 * 1e-3);
            // measured tracks the delayed request exactly
            let measured = *history.oldest();
            state.update(&history, &measured, &thresholds);
            history.push(v);
            for j in JointId::all() {
                assert_eq!(state.joint(j).delta, 0.0);
            }
        }
    }

    #[test]
    fn frozen_joint_error_grows_monotonically_after_threshold() {
        // Request ramps 0 -> 0.3 rad over 10 cycles while the joint holds 0.
        let watched = JointId::LKneePitch;
        let threshold = 2.0 * DEG;
        let mut history = RequestHistory::new(3, JointVector::zeros());
        let mut state = ErrorState::new();
        let thresholds = thresholds_for(watched, threshold);
        let measured = JointVector::zeros();
        let mut last_delta = 0.0;
        let mut crossed = false;
        for cycle in 0..20 {
            state.update(&history, &measured, &thresholds);
            let d = state.joint(watched).delta;
            if crossed {
                assert!(d >= last_delta - 1e-12, "cycle {cycle}: {d} < {last_delta}");
            }
            if d > 0.0 {
                crossed = true;
            }
            last_delta = d;
            let mut req = JointVector::zeros();
            req[watched] = ((cycle + 1) as f64 / 10.0 * 0.3).min(0.3);
            history.push(req);
        }
        assert!(crossed, "deadband never crossed");
        assert!((last_delta - 0.3).abs() < 1e-12, "final delta {last_delta}");
    }

    #[test]
    fn released_joint_collapses_delta_without_sign_overshoot() {
        // Joint stuck at 0 against a request of 0.3, then snaps to target.
        let watched = JointId::HipYawPitch;
        let mut history = RequestHistory::new(3, JointVector::zeros());
        let mut state = ErrorState::new();
        let thresholds = thresholds_for(watched, 1.0 * DEG);
        let mut req = JointVector::zeros();
        req[watched] = 0.3;
        let mut measured = JointVector::zeros();
        for _ in 0..10 {
            state.update(&history, &measured, &thresholds);
            history.push(req);
        }
        assert!(state.joint(watched).delta > 0.25);
        // Release: measured moves to the request in a few steps.
        let mut zero_since = None;
        for cycle in 0..10 {
            measured[watched] = (measured[watched] + 0.15).min(0.3);
            state.update(&history, &measured, &thresholds);
            let d = state.joint(watched).delta;
            assert!(d >= 0.0, "sign overshoot at cycle {cycle}: {d}");
            if state.joint(watched).delta_t == 0.0 && zero_since.is_none() {
                zero_since = Some(cycle);
            }
            if let Some(z) = zero_since {
                if cycle >= z {
                    assert_eq!(d, 0.0, "delta lingering after raw error reached zero");
                }
            }
        }
        assert!(zero_since.is_some());
    }

    fn rule(watched: JointId, targets: &[(JointId, f64)]) -> CompensationRule {
        CompensationRule {
            watched,
            activation_threshold: 0.0,
            targets: targets
                .iter()
                .map(|(joint, factor)| CompensationTarget {
                    joint: *joint,
                    factor: *factor,
                })
                .collect(),
        }
    }

    fn state_with_delta(joint: JointId, delta: f64) -> ErrorState {
        let mut history = RequestHistory::new(3, JointVector::zeros());
        let mut req = JointVector::zeros();
        req[joint] = delta;
        // Constant error: delta_hat == delta_t == delta, filter keeps it.
        let mut state = ErrorState::new();
        let thresholds = thresholds_for(joint, 0.0);
        let measured = JointVector::zeros();
        for _ in 0..5 {
            state.update(&history, &measured, &thresholds);
            history.push(req);
        }
        assert!((state.joint(joint).delta - delta).abs() < 1e-12);
        state
    }

    #[test]
    fn compensation_offsets_scale_by_factor() {
        let limits = JointLimits::default();
        let errors = state_with_delta(JointId::HipYawPitch, 10.0 * DEG);
        let rules = vec![rule(JointId::HipYawPitch, &[(JointId::LAnklePitch, 0.5)])];
        let frame = apply_compensation(
            &rules,
            &errors,
            &JointVector::zeros(),
            &JointVector::zeros(),
            &[],
            &limits,
        );
        assert!((frame.end_offset(JointId::LAnklePitch) - 5.0 * DEG).abs() < 1e-12);
        assert_eq!(frame.start_offset(JointId::LAnklePitch), 0.0);
    }

    #[test]
    fn zero_errors_give_zero_frame() {
        let limits = JointLimits::default();
        let errors = ErrorState::new();
        let rules = vec![rule(JointId::HipYawPitch, &[(JointId::LAnklePitch, 0.5)])];
        let frame = apply_compensation(
            &rules,
            &errors,
            &JointVector::zeros(),
            &JointVector::zeros(),
            &rules,
            &limits,
        );
        assert!(frame.is_zero());
    }

    #[test]
    fn contributions_to_same_target_sum() {
        let limits = JointLimits::default();
        let mut history = RequestHistory::new(3, JointVector::zeros());
        let mut req = JointVector::zeros();
        req[JointId::HipYawPitch] = 4.0 * DEG;
        req[JointId::LKneePitch] = 1.0 * DEG;
        let mut state = ErrorState::new();
        let mut thresholds = [None; JOINT_COUNT];
        thresholds[JointId::HipYawPitch.index()] = Some(0.0);
        thresholds[JointId::LKneePitch.index()] = Some(0.0);
        let measured = JointVector::zeros();
        for _ in 0..5 {
            state.update(&history, &measured, &thresholds);
            history.push(req);
        }
        let rules = vec![
            rule(JointId::HipYawPitch, &[(JointId::LAnklePitch, 0.5)]),
            rule(JointId::LKneePitch, &[(JointId::LAnklePitch, -0.5)]),
        ];
        let frame = apply_compensation(
            &rules,
            &state,
            &JointVector::zeros(),
            &JointVector::zeros(),
            &[],
            &limits,
        );
        // 4 deg * 0.5 + 1 deg * -0.5 = 1.5 deg
        assert!((frame.end_offset(JointId::LAnklePitch) - 1.5 * DEG).abs() < 1e-12);
    }

    #[test]
    fn offsets_clamp_corrected_target_to_joint_range() {
        let limits = JointLimits::default();
        let errors = state_with_delta(JointId::HipYawPitch, 30.0 * DEG);
        let rules = vec![rule(JointId::HipYawPitch, &[(JointId::LKneePitch, -4.0)])];
        // Knee target at the lower end of its range; a -120 deg offset must clamp.
        let mut targets = JointVector::zeros();
        targets[JointId::LKneePitch] = 0.0;
        let frame = apply_compensation(&rules, &errors, &targets, &targets, &[], &limits);
        let corrected = targets[JointId::LKneePitch] + frame.end_offset(JointId::LKneePitch);
        assert!(limits.contains(JointId::LKneePitch, corrected));
        assert!((corrected - limits.range(JointId::LKneePitch).min).abs() < 1e-12);
    }

    #[test]
    fn history_oldest_is_delayed_by_depth() {
        let mut h = RequestHistory::new(3, JointVector::zeros());
        for cycle in 0..10 {
            let mut v = JointVector::zeros();
            v[JointId::HeadYaw] = cycle as f64;
            assert_eq!(
                h.oldest()[JointId::HeadYaw],
                (cycle as i64 - 3).max(0) as f64
            );
            h.push(v);
        }
    }
}
