//! Joint identifiers, joint vectors and the configured angle ranges.
//!
//! The joint set models a NAO-like humanoid: one shared `HipYawPitch`
//! motor drives both leg chains, so there is exactly one entry for it.

use std::fmt;
use std::ops::{Index, IndexMut};
use std::str::FromStr;

/// Controllable joints, in canonical order.
///
/// The order is stable and used for trace columns, iteration and
/// serialization everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(usize)]
pub enum JointId {
    HeadYaw,
    HeadPitch,
    LShoulderPitch,
    LShoulderRoll,
    LElbowYaw,
    LElbowRoll,
    LWristYaw,
    RShoulderPitch,
    RShoulderRoll,
    RElbowYaw,
    RElbowRoll,
    RWristYaw,
    HipYawPitch,
    LHipRoll,
    LHipPitch,
    LKneePitch,
    LAnklePitch,
    LAnkleRoll,
    RHipRoll,
    RHipPitch,
    RKneePitch,
    RAnklePitch,
    RAnkleRoll,
}

/// Number of controllable joints.
pub const JOINT_COUNT: usize = 23;

const ALL_JOINTS: [JointId; JOINT_COUNT] = [
    JointId::HeadYaw,
    JointId::HeadPitch,
    JointId::LShoulderPitch,
    JointId::LShoulderRoll,
    JointId::LElbowYaw,
    JointId::LElbowRoll,
    JointId::LWristYaw,
    JointId::RShoulderPitch,
    JointId::RShoulderRoll,
    JointId::RElbowYaw,
    JointId::RElbowRoll,
    JointId::RWristYaw,
    JointId::HipYawPitch,
    JointId::LHipRoll,
    JointId::LHipPitch,
    JointId::LKneePitch,
    JointId::LAnklePitch,
    JointId::LAnkleRoll,
    JointId::RHipRoll,
    JointId::RHipPitch,
    JointId::RKneePitch,
    JointId::RAnklePitch,
    JointId::RAnkleRoll,
];

impl JointId {
    /// All joints in canonical order.
    pub fn all() -> impl Iterator<Item = JointId> {
        ALL_JOINTS.iter().copied()
    }

    /// Canonical index, 0..JOINT_COUNT.
    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            JointId::HeadYaw => "HeadYaw",
            JointId::HeadPitch => "HeadPitch",
            JointId::LShoulderPitch => "LShoulderPitch",
            JointId::LShoulderRoll => "LShoulderRoll",
            JointId::LElbowYaw => "LElbowYaw",
            JointId::LElbowRoll => "LElbowRoll",
            JointId::LWristYaw => "LWristYaw",
            JointId::RShoulderPitch => "RShoulderPitch",
            JointId::RShoulderRoll => "RShoulderRoll",
            JointId::RElbowYaw => "RElbowYaw",
            JointId::RElbowRoll => "RElbowRoll",
            JointId::RWristYaw => "RWristYaw",
            JointId::HipYawPitch => "HipYawPitch",
            JointId::LHipRoll => "LHipRoll",
            JointId::LHipPitch => "LHipPitch",
            JointId::LKneePitch => "LKneePitch",
            JointId::LAnklePitch => "LAnklePitch",
            JointId::LAnkleRoll => "LAnkleRoll",
            JointId::RHipRoll => "RHipRoll",
            JointId::RHipPitch => "RHipPitch",
            JointId::RKneePitch => "RKneePitch",
            JointId::RAnklePitch => "RAnklePitch",
            JointId::RAnkleRoll => "RAnkleRoll",
        }
    }
}

impl fmt::Display for JointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Error returned when a joint name does not match any [`JointId`].
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown joint name `{0}`")]
pub struct UnknownJoint(pub String);

impl FromStr for JointId {
    type Err = UnknownJoint;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        JointId::all()
            .find(|j| j.name() == s)
            .ok_or_else(|| UnknownJoint(s.to_string()))
    }
}

/// A full assignment of angles (radians) to the controllable joint set.
///
/// Carries requested, measured or target semantics depending on context.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointVector {
    angles: [f64; JOINT_COUNT],
}

impl JointVector {
    /// The all-zero pose.
    pub fn zeros() -> Self {
        JointVector {
            angles: [0.0; JOINT_COUNT],
        }
    }

    pub fn from_fn(mut f: impl FnMut(JointId) -> f64) -> Self {
        let mut v = JointVector::zeros();
        for j in JointId::all() {
            v[j] = f(j);
        }
        v
    }

    /// True if every entry is finite.
    pub fn is_finite(&self) -> bool {
        self.angles.iter().all(|a| a.is_finite())
    }

    /// Largest absolute difference to `other` over all joints.
    pub fn max_abs_diff(&self, other: &JointVector) -> f64 {
        JointId::all()
            .map(|j| (self[j] - other[j]).abs())
            .fold(0.0, f64::max)
    }

    pub fn iter(&self) -> impl Iterator<Item = (JointId, f64)> + '_ {
        JointId::all().map(move |j| (j, self[j]))
    }
}

impl Index<JointId> for JointVector {
    type Output = f64;

    #[inline]
    fn index(&self, j: JointId) -> &f64 {
        &self.angles[j.index()]
    }
}

impl IndexMut<JointId> for JointVector {
    #[inline]
    fn index_mut(&mut self, j: JointId) -> &mut f64 {
        &mut self.angles[j.index()]
    }
}

/// A partial assignment of angles: entries may be unset.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PartialJointVector {
    angles: [Option<f64>; JOINT_COUNT],
}

impl PartialJointVector {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn set(&mut self, j: JointId, angle: f64) {
        self.angles[j.index()] = Some(angle);
    }

    pub fn get(&self, j: JointId) -> Option<f64> {
        self.angles[j.index()]
    }

    pub fn is_empty(&self) -> bool {
        self.angles.iter().all(|a| a.is_none())
    }

    pub fn iter(&self) -> impl Iterator<Item = (JointId, f64)> + '_ {
        JointId::all().filter_map(move |j| self.get(j).map(|a| (j, a)))
    }

    /// Fill unset entries from `base`, yielding a total vector.
    pub fn resolve_over(&self, base: &JointVector) -> JointVector {
        JointVector::from_fn(|j| self.get(j).unwrap_or(base[j]))
    }
}

/// Closed angle interval, radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleRange {
    pub min: f64,
    pub max: f64,
}

impl AngleRange {
    pub fn new(min: f64, max: f64) -> Self {
        AngleRange { min, max }
    }

    pub fn from_degrees(min_deg: f64, max_deg: f64) -> Self {
        AngleRange {
            min: min_deg.to_radians(),
            max: max_deg.to_radians(),
        }
    }

    pub fn contains(&self, a: f64) -> bool {
        a >= self.min && a <= self.max
    }

    pub fn clamp(&self, a: f64) -> f64 {
        a.clamp(self.min, self.max)
    }

    pub fn is_valid(&self) -> bool {
        self.min.is_finite() && self.max.is_finite() && self.min <= self.max
    }
}

/// Configured angle range per joint plus validation bounds.
///
/// The ranges are NAO-like. They are not meant to match real hardware to
/// the last digit; internal consistency (every shipped script target lies
/// inside, the zero pose is legal) is the contract.
#[derive(Debug, Clone)]
pub struct JointLimits {
    ranges: [AngleRange; JOINT_COUNT],
    /// Upper bound accepted for a keyframe's conditional wait, ms.
    pub max_wait_cap_ms: u32,
    /// Sanity bound on |p| for compensation factors.
    pub max_compensation_factor: f64,
}

impl Default for JointLimits {
    fn default() -> Self {
        let deg = AngleRange::from_degrees;
        let mut ranges = [AngleRange::new(-std::f64::consts::PI, std::f64::consts::PI); JOINT_COUNT];
        let table: [(JointId, AngleRange); JOINT_COUNT] = [
            (JointId::HeadYaw, deg(-119.5, 119.5)),
            (JointId::HeadPitch, deg(-38.5, 29.5)),
            (JointId::LShoulderPitch, deg(-119.5, 119.5)),
            (JointId::LShoulderRoll, deg(-18.0, 76.0)),
            (JointId::LElbowYaw, deg(-119.5, 119.5)),
            (JointId::LElbowRoll, deg(-88.5, 0.0)),
            (JointId::LWristYaw, deg(-104.5, 104.5)),
            (JointId::RShoulderPitch, deg(-119.5, 119.5)),
            (JointId::RShoulderRoll, deg(-76.0, 18.0)),
            (JointId::RElbowYaw, deg(-119.5, 119.5)),
            (JointId::RElbowRoll, deg(0.0, 88.5)),
            (JointId::RWristYaw, deg(-104.5, 104.5)),
            (JointId::HipYawPitch, deg(-65.62, 42.44)),
            (JointId::LHipRoll, deg(-21.74, 45.29)),
            (JointId::LHipPitch, deg(-88.0, 27.73)),
            (JointId::LKneePitch, deg(-5.9, 121.04)),
            (JointId::LAnklePitch, deg(-68.15, 52.86)),
            (JointId::LAnkleRoll, deg(-22.79, 44.06)),
            (JointId::RHipRoll, deg(-45.29, 21.74)),
            (JointId::RHipPitch, deg(-88.0, 27.73)),
            (JointId::RKneePitch, deg(-5.9, 121.04)),
            (JointId::RAnklePitch, deg(-68.15, 52.86)),
            (JointId::RAnkleRoll, deg(-44.06, 22.79)),
        ];
        for (j, r) in table {
            ranges[j.index()] = r;
        }
        JointLimits {
            ranges,
            max_wait_cap_ms: 2000,
            max_compensation_factor: 4.0,
        }
    }
}

impl JointLimits {
    pub fn range(&self, j: JointId) -> AngleRange {
        self.ranges[j.index()]
    }

    /// Clamp every entry of `v` into its joint range.
    pub fn clamp_vector(&self, v: &JointVector) -> JointVector {
        JointVector::from_fn(|j| self.range(j).clamp(v[j]))
    }

    pub fn contains(&self, j: JointId, angle: f64) -> bool {
        self.range(j).contains(angle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn joint_order_is_stable() {
        assert_eq!(JointId::all().count(), JOINT_COUNT);
        assert_eq!(JointId::HeadYaw.index(), 0);
        assert_eq!(JointId::RAnkleRoll.index(), JOINT_COUNT - 1);
        for (i, j) in JointId::all().enumerate() {
            assert_eq!(j.index(), i);
        }
    }

    #[test]
    fn joint_names_round_trip() {
        for j in JointId::all() {
            assert_eq!(j.name().parse::<JointId>().unwrap(), j);
        }
        assert!("HipYawPitc".parse::<JointId>().is_err());
    }

    #[test]
    fn single_hip_yaw_pitch() {
        let hyp: Vec<_> = JointId::all().filter(|j| j.name().contains("HipYawPitch")).collect();
        assert_eq!(hyp, vec![JointId::HipYawPitch]);
    }

    #[test]
    fn zero_pose_is_inside_all_ranges() {
        let limits = JointLimits::default();
        for j in JointId::all() {
            assert!(limits.contains(j, 0.0), "{j} range excludes zero");
        }
    }

    #[test]
    fn ranges_are_valid_intervals() {
        let limits = JointLimits::default();
        for j in JointId::all() {
            assert!(limits.range(j).is_valid(), "{j}");
        }
    }

    #[test]
    fn knee_range_matches_configured_table() {
        let limits = JointLimits::default();
        let r = limits.range(JointId::LKneePitch);
        assert!((r.min.to_degrees() - -5.9).abs() < 1e-12);
        assert!((r.max.to_degrees() - 121.04).abs() < 1e-12);
    }

    #[test]
    fn partial_resolution_inherits_base() {
        let mut p = PartialJointVector::empty();
        p.set(JointId::HipYawPitch, -0.5);
        let base = JointVector::from_fn(|j| j.index() as f64 * 0.01);
        let total = p.resolve_over(&base);
        assert_eq!(total[JointId::HipYawPitch], -0.5);
        assert_eq!(total[JointId::HeadYaw], 0.0);
        assert_eq!(total[JointId::RAnkleRoll], base[JointId::RAnkleRoll]);
    }
}
