//! CoM balancing: exponential PD controller on the center-of-mass
//! reference trajectory, plus the small ankle-roll oscillation used while
//! standing on the soles.

use crate::joints::{JointId, JointVector};
use crate::script::ComPoint;

/// Gains and output shaping of the balancer.
///
/// The proportional term is a sign-preserving power law `kp * |e|^alpha`;
/// `alpha = 1` reduces it to a classical PD controller. Outputs are
/// clamped per axis and split equally over the actuated joints: ankle
/// pitch for the sagittal (x) axis, ankle roll for the lateral (y) axis.
#[derive(Debug, Clone)]
pub struct BalanceConfig {
    /// Proportional gain, radians per mm^alpha.
    pub kp: f64,
    /// Differential gain, radians per mm of error change per cycle.
    pub kd: f64,
    /// Exponent of the power-law proportional term, >= 1.
    pub alpha: f64,
    /// Per-axis output clamp, radians.
    pub clamp: f64,
    /// Errors below this are treated as zero (mm).
    pub deadband_mm: f64,
    /// Joints actuated for the sagittal axis.
    pub pitch_joints: Vec<JointId>,
    /// Joints actuated for the lateral axis.
    pub roll_joints: Vec<JointId>,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        BalanceConfig {
            kp: 0.0004,
            kd: 0.001,
            alpha: 2.0,
            clamp: 8.0f64.to_radians(),
            deadband_mm: 6.0,
            pitch_joints: vec![JointId::LAnklePitch, JointId::RAnklePitch],
            roll_joints: vec![JointId::LAnkleRoll, JointId::RAnkleRoll],
        }
    }
}

/// CoM reference across one keyframe: previous end and current end.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComReference {
    pub prev: ComPoint,
    pub end: ComPoint,
}

/// Linear interpolation of the reference at keyframe phase `s`.
pub fn com_reference_at(reference: &ComReference, s: f64) -> ComPoint {
    let s = s.clamp(0.0, 1.0);
    ComPoint {
        x_mm: reference.prev.x_mm + s * (reference.end.x_mm - reference.prev.x_mm),
        y_mm: reference.prev.y_mm + s * (reference.end.y_mm - reference.prev.y_mm),
    }
}

/// Per-axis control value: sign-preserving power law plus derivative of the
/// proportional error, clamped.
fn pd_axis(error: f64, prev_error: f64, cfg: &BalanceConfig) -> f64 {
    if error.abs() < cfg.deadband_mm {
        return 0.0;
    }
    let p = error.signum() * cfg.kp * error.abs().powf(cfg.alpha);
    let d = cfg.kd * (error - prev_error);
    (p + d).clamp(-cfg.clamp, cfg.clamp)
}

/// Balance offsets for one cycle.
///
/// `expected` and `measured` are CoM positions in the torso-projected
/// ground frame; `prev_error` is last cycle's error for the derivative
/// part. Positive x error (CoM behind its reference) commands the ankle
/// pitch offsets negative, rotating the support face so the torso leans
/// forward; the lateral axis works the same way through the ankle rolls.
pub fn pd_balance(
    expected: ComPoint,
    measured: ComPoint,
    prev_error: ComPoint,
    cfg: &BalanceConfig,
) -> BalanceOutput {
    let error = ComPoint {
        x_mm: expected.x_mm - measured.x_mm,
        y_mm: expected.y_mm - measured.y_mm,
    };
    let ux = pd_axis(error.x_mm, prev_error.x_mm, cfg);
    let uy = pd_axis(error.y_mm, prev_error.y_mm, cfg);

    let mut offsets = JointVector::zeros();
    if !cfg.pitch_joints.is_empty() {
        let per_joint = -ux / cfg.pitch_joints.len() as f64;
        for j in &cfg.pitch_joints {
            offsets[*j] = per_joint;
        }
    }
    if !cfg.roll_joints.is_empty() {
        let per_joint = uy / cfg.roll_joints.len() as f64;
        for j in &cfg.roll_joints {
            offsets[*j] = per_joint;
        }
    }
    BalanceOutput { offsets, error }
}

/// Result of one balance step: joint offsets plus the error to carry into
/// the next cycle's derivative term.
#[derive(Debug, Clone, Copy)]
pub struct BalanceOutput {
    pub offsets: JointVector,
    pub error: ComPoint,
}

impl BalanceOutput {
    pub fn zero() -> Self {
        BalanceOutput {
            offsets: JointVector::zeros(),
            error: ComPoint { x_mm: 0.0, y_mm: 0.0 },
        }
    }
}

/// Sine oscillation on the ankle rolls, used to keep the soles from
/// sticking to the ground while standing.
#[derive(Debug, Clone)]
pub struct OscillatorState {
    /// Peak offset, radians (at most 1 degree by default).
    pub amplitude: f64,
    /// Full sine period, ms.
    pub period_ms: f64,
    /// Advances only while the oscillation is active.
    pub clock_ms: f64,
}

impl Default for OscillatorState {
    fn default() -> Self {
        OscillatorState {
            amplitude: 1.0f64.to_radians(),
            period_ms: 200.0,
            clock_ms: 0.0,
        }
    }
}

impl OscillatorState {
    pub fn reset(&mut self) {
        self.clock_ms = 0.0;
    }

    pub fn advance(&mut self, dt_ms: f64) {
        self.clock_ms += dt_ms;
    }
}

/// Roll offset at the given clock; applied with opposite signs to the left
/// and right ankle roll.
pub fn ankle_oscillation(clock_ms: f64, osc: &OscillatorState) -> f64 {
    osc.amplitude * (2.0 * std::f64::consts::PI * clock_ms / osc.period_ms).sin()
}
