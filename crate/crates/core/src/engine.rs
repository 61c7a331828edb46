//! The per-cycle stand-up state machine: interpolation, compensation,
//! balancing, checks and waiting, combined into joint requests.
//!
//! `step` is a pure function of the engine state, the cycle input and the
//! configuration: no clocks, no randomness. Replaying a recorded input
//! trace reproduces the output trace exactly.

use crate::balance::{ankle_oscillation, com_reference_at, pd_balance, ComReference, OscillatorState};
use crate::compensation::{active_thresholds, apply_compensation, ramped_target, ErrorState, RequestHistory};
use crate::config::{EngineConfig, VariantFlags};
use crate::joints::{JointId, JointLimits, JointVector, JOINT_COUNT};
use crate::plant::SupportKind;
use crate::script::{
    ArmCheck, ArmCheckAction, ComPoint, CompensationRule, EntryCondition, Keyframe, MotionScript,
    ScriptLibrary,
};

/// State-machine position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    DecideAction,
    Working,
    Waiting,
    BreakUp,
    Finished,
    HelpMe,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::DecideAction => "decide_action",
            Mode::Working => "working",
            Mode::Waiting => "waiting",
            Mode::BreakUp => "break_up",
            Mode::Finished => "finished",
            Mode::HelpMe => "help_me",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "decide_action" => Mode::DecideAction,
            "working" => Mode::Working,
            "waiting" => Mode::Waiting,
            "break_up" => Mode::BreakUp,
            "finished" => Mode::Finished,
            "help_me" => Mode::HelpMe,
            other => return Err(format!("unknown mode `{other}`")),
        })
    }
}

/// Sensor readings for one cycle.
#[derive(Debug, Clone, Copy)]
pub struct CycleInput {
    pub measured: JointVector,
    pub torso_pitch: f64,
    pub torso_roll: f64,
    /// CoM in the torso-projected ground frame of the active support, mm.
    pub com: ComPoint,
    pub cycle: u64,
}

/// Joint commands plus bookkeeping for one cycle.
#[derive(Debug, Clone)]
pub struct CycleOutput {
    /// Final requests, always within joint ranges.
    pub requested: JointVector,
    /// Interpolation base without compensation, balancing or oscillation.
    pub base: JointVector,
    pub stiffness: [f64; JOINT_COUNT],
    pub mode: Mode,
    pub keyframe: Option<String>,
    pub support: SupportKind,
    /// Applied error per watched joint this cycle.
    pub deltas: Vec<(JointId, f64)>,
    /// Balance offsets added onto the requests.
    pub balance_offsets: JointVector,
    /// Ankle-roll oscillation value (+left / -right).
    pub oscillation: f64,
}

/// Outcome of an end-of-keyframe arm check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ArmCheckResult {
    Pass,
    Retry(String),
    FreeArms(String),
}

/// Compare requested and measured positions of the watched joints.
/// Fails only when the largest error is strictly above the threshold.
pub fn evaluate_arm_check(
    check: &ArmCheck,
    requested: &JointVector,
    measured: &JointVector,
) -> ArmCheckResult {
    let worst = check
        .watched
        .iter()
        .map(|j| (requested[*j] - measured[*j]).abs())
        .fold(0.0, f64::max);
    if worst <= check.error_threshold {
        ArmCheckResult::Pass
    } else {
        match &check.action {
            ArmCheckAction::Retry(kf) => ArmCheckResult::Retry(kf.clone()),
            ArmCheckAction::FreeArms(motion) => ArmCheckResult::FreeArms(motion.clone()),
        }
    }
}

/// What `decide_action` picked for the current orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Front,
    Back,
    SideLeft,
    SideRight,
    /// Near upright: nothing to do.
    Upright,
}

#[derive(Debug, Clone)]
struct ActiveScript {
    script: usize,
    is_recovery: bool,
    kf: usize,
    /// End targets per keyframe, resolved at activation over the measured pose.
    resolved: Vec<JointVector>,
    kf_clock_ms: u32,
    wait_clock_ms: u32,
    start_pose: JointVector,
    start_rules: Vec<CompensationRule>,
    start_balance: Option<ComPoint>,
    /// Measured CoM at the keyframe's first balance cycle; reference
    /// anchor when the previous keyframe carried no balance com.
    balance_anchor: Option<ComPoint>,
    retries: u32,
}

#[derive(Debug, Clone)]
struct BreakupState {
    clock_ms: u32,
    pose: JointVector,
    failure_cap: u32,
}

/// The stand-up engine. One instance drives one robot; instances are
/// independent and single-threaded.
#[derive(Debug, Clone)]
pub struct Engine {
    library: ScriptLibrary,
    config: EngineConfig,
    flags: VariantFlags,
    limits: JointLimits,
    watched: Vec<JointId>,
    mode: Mode,
    active: Option<ActiveScript>,
    breakup: Option<BreakupState>,
    consecutive_failures: u32,
    history: Option<RequestHistory>,
    errors: ErrorState,
    balance_prev_error: Option<ComPoint>,
    oscillator: OscillatorState,
    broken_ms: [u32; JOINT_COUNT],
    broken_joint: Option<JointId>,
    last_request: JointVector,
}

impl Engine {
    pub fn new(library: ScriptLibrary, config: EngineConfig, flags: VariantFlags) -> Engine {
        let watched = library.watched_joints();
        let oscillator = OscillatorState {
            amplitude: config.oscillation_amplitude,
            ..OscillatorState::default()
        };
        Engine {
            library,
            config,
            flags,
            limits: JointLimits::default(),
            watched,
            mode: Mode::DecideAction,
            active: None,
            breakup: None,
            consecutive_failures: 0,
            history: None,
            errors: ErrorState::new(),
            balance_prev_error: None,
            oscillator,
            broken_ms: [0; JOINT_COUNT],
            broken_joint: None,
            last_request: JointVector::zeros(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn consecutive_failures(&self) -> u32 {
        self.consecutive_failures
    }

    pub fn library(&self) -> &ScriptLibrary {
        &self.library
    }

    /// Joint flagged as dysfunctional, if any.
    pub fn broken_joint(&self) -> Option<JointId> {
        self.broken_joint
    }

    /// External reset: leaves HelpMe and starts over.
    pub fn reset(&mut self) {
        self.mode = Mode::DecideAction;
        self.active = None;
        self.breakup = None;
        self.consecutive_failures = 0;
        self.history = None;
        self.errors.reset();
        self.balance_prev_error = None;
        self.oscillator.reset();
        self.broken_ms = [0; JOINT_COUNT];
        self.broken_joint = None;
    }

    /// Pick a script for the measured orientation.
    pub fn decide(&self, torso_pitch: f64, torso_roll: f64) -> Decision {
        if torso_roll >= self.config.side_threshold {
            Decision::SideLeft
        } else if torso_roll <= -self.config.side_threshold {
            Decision::SideRight
        } else if torso_pitch >= self.config.facedown_threshold {
            Decision::Front
        } else if torso_pitch <= -self.config.facedown_threshold {
            Decision::Back
        } else {
            Decision::Upright
        }
    }

    fn script(&self, index: usize) -> &MotionScript {
        &self.library.scripts()[index]
    }

    fn script_index(&self, name: &str) -> Option<usize> {
        self.library
            .scripts()
            .iter()
            .position(|s| s.name == name)
    }

    fn activate(&mut self, script: usize, is_recovery: bool, measured: &JointVector) {
        let resolved = self.script(script).resolved_targets(measured);
        self.active = Some(ActiveScript {
            script,
            is_recovery,
            kf: 0,
            resolved,
            kf_clock_ms: 0,
            wait_clock_ms: 0,
            start_pose: *measured,
            start_rules: Vec::new(),
            start_balance: None,
            balance_anchor: None,
            retries: 0,
        });
        self.balance_prev_error = None;
        self.oscillator.reset();
        self.mode = Mode::Working;
    }

    fn uniform_stiffness(value: f64) -> [f64; JOINT_COUNT] {
        [value; JOINT_COUNT]
    }

    fn hold_output(&self, request: JointVector, stiffness: f64) -> CycleOutput {
        CycleOutput {
            requested: self.limits.clamp_vector(&request),
            base: request,
            stiffness: Self::uniform_stiffness(stiffness),
            mode: self.mode,
            keyframe: None,
            support: SupportKind::Falling,
            deltas: self.watched_deltas(),
            balance_offsets: JointVector::zeros(),
            oscillation: 0.0,
        }
    }

    fn watched_deltas(&self) -> Vec<(JointId, f64)> {
        self.watched
            .iter()
            .map(|j| (*j, self.errors.joint(*j).delta))
            .collect()
    }

    /// Advance one control cycle.
    pub fn step(&mut self, input: &CycleInput) -> CycleOutput {
        // First contact with the plant: seed history with the measured pose.
        if self.history.is_none() {
            self.history = Some(RequestHistory::new(
                self.config.delay_cycles,
                input.measured,
            ));
            self.last_request = input.measured;
        }

        self.update_errors(input);
        self.track_broken_joints(input);

        if self.broken_joint.is_some() && self.mode != Mode::HelpMe {
            self.mode = Mode::HelpMe;
            self.active = None;
            self.breakup = None;
        }

        let output = match self.mode {
            Mode::DecideAction => self.step_decide(input),
            Mode::Working | Mode::Waiting => self.step_active(input),
            Mode::BreakUp => self.step_breakup(input),
            Mode::Finished => self.hold_output(self.last_request, 1.0),
            Mode::HelpMe => self.hold_output(input.measured, 0.2),
        };

        self.history
            .as_mut()
            .expect("history initialized above")
            .push(output.requested);
        self.last_request = output.requested;
        output
    }

    fn update_errors(&mut self, input: &CycleInput) {
        let thresholds = match (&self.active, self.mode) {
            (Some(active), Mode::Working | Mode::Waiting) => {
                let kf = &self.script(active.script).keyframes[active.kf];
                active_thresholds(&kf.compensation_rules, &active.start_rules)
            }
            _ => active_thresholds(&[], &[]),
        };
        let history = self.history.as_ref().expect("history initialized");
        self.errors.update(history, &input.measured, &thresholds);
    }

    /// A joint whose raw error stays above the configured bound for the
    /// configured driving time counts as broken. Phases where the engine
    /// does not drive the joints (breakup, decide) pause the clock; only
    /// successful tracking while driven resets it.
    fn track_broken_joints(&mut self, _input: &CycleInput) {
        if !matches!(self.mode, Mode::Working | Mode::Waiting) {
            return;
        }
        for j in JointId::all() {
            let i = j.index();
            if self.errors.joint(j).delta_t.abs() > self.config.broken_joint_error {
                self.broken_ms[i] = self.broken_ms[i].saturating_add(self.config.cycle_ms);
                if self.broken_ms[i] >= self.config.broken_joint_hold_ms && self.broken_joint.is_none()
                {
                    self.broken_joint = Some(j);
                }
            } else {
                self.broken_ms[i] = 0;
            }
        }
    }

    fn step_decide(&mut self, input: &CycleInput) -> CycleOutput {
        match self.decide(input.torso_pitch, input.torso_roll) {
            Decision::Upright => {
                self.mode = Mode::Finished;
                self.consecutive_failures = 0;
                self.hold_output(input.measured, 1.0)
            }
            decision => {
                let configured = |name: &str, entry: EntryCondition| -> String {
                    if self.script_index(name).is_some() {
                        name.to_string()
                    } else {
                        self.library
                            .for_entry(entry)
                            .map(|s| s.name.clone())
                            .unwrap_or_default()
                    }
                };
                let (name_owned, is_recovery): (String, bool) = match decision {
                    Decision::Front => (
                        configured(&self.config.front_script.clone(), EntryCondition::Front),
                        false,
                    ),
                    Decision::Back => (
                        configured(&self.config.back_script.clone(), EntryCondition::Back),
                        false,
                    ),
                    Decision::SideLeft => (self.config.side_script_left.clone(), true),
                    Decision::SideRight => (self.config.side_script_right.clone(), true),
                    Decision::Upright => unreachable!(),
                };
                match self.script_index(&name_owned) {
                    Some(idx) => {
                        self.activate(idx, is_recovery, &input.measured);
                        let mut out = self.hold_output(input.measured, 1.0);
                        out.mode = Mode::DecideAction;
                        out
                    }
                    None => {
                        // No script can handle this orientation: give up
                        // rather than loop.
                        self.mode = Mode::HelpMe;
                        self.hold_output(input.measured, 0.2)
                    }
                }
            }
        }
    }

    fn enter_breakup(&mut self, input: &CycleInput) -> CycleOutput {
        let failure_cap = self
            .active
            .as_ref()
            .map(|a| self.script(a.script).max_consecutive_failures)
            .unwrap_or(self.config.max_failures);
        self.consecutive_failures += 1;
        self.active = None;
        self.breakup = Some(BreakupState {
            clock_ms: 0,
            pose: input.measured,
            failure_cap,
        });
        self.mode = Mode::BreakUp;
        self.hold_output(input.measured, 0.1)
    }

    fn step_breakup(&mut self, _input: &CycleInput) -> CycleOutput {
        let state = self.breakup.as_mut().expect("breakup state present");
        state.clock_ms += self.config.cycle_ms;
        let pose = state.pose;
        let cap = state.failure_cap;
        if state.clock_ms >= self.config.breakup_duration_ms {
            self.breakup = None;
            self.mode = if self.consecutive_failures >= cap {
                Mode::HelpMe
            } else {
                Mode::DecideAction
            };
        }
        let stiffness: f64 = if self.mode == Mode::HelpMe { 0.2 } else { 0.1 };
        self.hold_output(pose, stiffness)
    }

    fn step_active(&mut self, input: &CycleInput) -> CycleOutput {
        let active = self.active.as_ref().expect("active script present");
        let script_idx = active.script;
        let kf_idx = active.kf;
        let kf = &self.script(script_idx).keyframes[kf_idx].clone();

        // Torso orientation guard applies in Working and Waiting alike.
        if !kf.torso_pitch_range.contains(input.torso_pitch)
            || !kf.torso_roll_range.contains(input.torso_roll)
        {
            return self.enter_breakup(input);
        }

        if self.mode == Mode::Waiting {
            return self.step_waiting(input, kf);
        }

        let active = self.active.as_mut().expect("active script present");
        active.kf_clock_ms += self.config.cycle_ms;
        let s = (active.kf_clock_ms as f64 / kf.duration_ms as f64).min(1.0);

        let mut output = self.compute_requests(kf, s, input);

        if s >= 1.0 {
            self.finish_keyframe(kf, input, &mut output);
        }
        output
    }

    fn step_waiting(&mut self, input: &CycleInput, kf: &Keyframe) -> CycleOutput {
        let wait = kf.wait.as_ref().expect("waiting needs a wait condition");
        let max_wait = wait.max_wait_ms;
        let pitch_ok = wait.torso_pitch.contains(input.torso_pitch);
        let budget_left = {
            let active = self.active.as_ref().expect("active script present");
            active.wait_clock_ms + self.config.cycle_ms <= max_wait
        };

        // Ramp phase stays frozen at the end of the keyframe; balancing
        // (and the error pipeline) keep running.
        let mut output = self.compute_requests(kf, 1.0, input);

        if pitch_ok || !budget_left {
            self.advance_keyframe(input, &mut output);
        } else {
            let active = self.active.as_mut().expect("active script present");
            active.wait_clock_ms += self.config.cycle_ms;
        }
        output
    }

    fn finish_keyframe(&mut self, kf: &Keyframe, input: &CycleInput, output: &mut CycleOutput) {
        if let Some(check) = &kf.arm_check {
            match evaluate_arm_check(check, &output.requested, &input.measured) {
                ArmCheckResult::Pass => {}
                ArmCheckResult::Retry(target) => {
                    self.retry_keyframe(&target, input, output);
                    return;
                }
                ArmCheckResult::FreeArms(motion) => {
                    self.insert_motion(&motion, input, output);
                    return;
                }
            }
        }
        if let Some(wait) = &kf.wait {
            if self.flags.waiting && !wait.torso_pitch.contains(input.torso_pitch) {
                let active = self.active.as_mut().expect("active script present");
                active.wait_clock_ms = 0;
                self.mode = Mode::Waiting;
                output.mode = Mode::Working;
                return;
            }
        }
        self.advance_keyframe(input, output);
    }

    fn retry_keyframe(&mut self, target: &str, input: &CycleInput, output: &mut CycleOutput) {
        let active = self.active.as_mut().expect("active script present");
        let script = &self.library.scripts()[active.script];
        let cap = script.max_consecutive_failures;
        active.retries += 1;
        if active.retries > cap {
            *output = self.enter_breakup(input);
            return;
        }
        if let Some(idx) = script.keyframe_index(target) {
            // Restart from the current requests so the transition stays
            // continuous; the retried keyframe ramps from here.
            active.kf = idx;
            active.kf_clock_ms = 0;
            active.wait_clock_ms = 0;
            active.start_pose = output.requested;
            active.start_rules = Vec::new();
            active.start_balance = None;
            active.balance_anchor = None;
            self.mode = Mode::Working;
        } else {
            *output = self.enter_breakup(input);
        }
    }

    fn insert_motion(&mut self, motion: &str, input: &CycleInput, output: &mut CycleOutput) {
        match self.script_index(motion) {
            Some(idx) => {
                // The inserted motion starts where the requests are now and
                // reports back to decide_action when done.
                let start = output.requested;
                self.activate(idx, true, &start);
                self.mode = Mode::Working;
            }
            None => *output = self.enter_breakup(input),
        }
    }

    fn advance_keyframe(&mut self, _input: &CycleInput, output: &mut CycleOutput) {
        let active = self.active.as_mut().expect("active script present");
        let script = &self.library.scripts()[active.script];
        let last = active.kf + 1 >= script.keyframes.len();
        if last {
            let was_recovery = active.is_recovery;
            self.active = None;
            if was_recovery {
                self.mode = Mode::DecideAction;
                output.mode = Mode::DecideAction;
            } else {
                self.mode = Mode::Finished;
                self.consecutive_failures = 0;
                output.mode = Mode::Finished;
            }
        } else {
            let finished = &script.keyframes[active.kf];
            active.start_pose = active.resolved[active.kf];
            active.start_rules = finished.compensation_rules.clone();
            active.start_balance = finished.balance_ref;
            active.balance_anchor = None;
            active.kf += 1;
            active.kf_clock_ms = 0;
            active.wait_clock_ms = 0;
            active.retries = 0;
            self.mode = Mode::Working;
            output.mode = Mode::Working;
        }
    }

    /// Interpolated, compensated, balanced and clamped requests at phase `s`.
    fn compute_requests(&mut self, kf: &Keyframe, s: f64, input: &CycleInput) -> CycleOutput {
        let active = self.active.as_ref().expect("active script present");
        let end_targets = active.resolved[active.kf];
        let start_pose = active.start_pose;

        let empty: [CompensationRule; 0] = [];
        let (rules, prev_rules): (&[CompensationRule], &[CompensationRule]) =
            if self.flags.compensation {
                (&kf.compensation_rules, &active.start_rules)
            } else {
                (&empty, &empty)
            };
        let frame = apply_compensation(
            rules,
            &self.errors,
            &end_targets,
            &start_pose,
            prev_rules,
            &self.limits,
        );

        let mut base = JointVector::zeros();
        let mut requested = JointVector::zeros();
        for j in JointId::all() {
            base[j] = ramped_target(start_pose[j], end_targets[j], 0.0, 0.0, s, kf.interpolation);
            requested[j] = ramped_target(
                start_pose[j],
                end_targets[j],
                frame.start_offset(j),
                frame.end_offset(j),
                s,
                kf.interpolation,
            );
        }

        let mut balance_offsets = JointVector::zeros();
        let balancing = self.flags.balancing && kf.balance_ref.is_some();
        if balancing {
            let end_ref = kf.balance_ref.expect("balance_ref checked above");
            // Anchor the reference start at the previous keyframe's
            // recorded CoM, or at the first measurement of this keyframe.
            let anchor = {
                let active = self.active.as_mut().expect("active script present");
                *active.balance_anchor.get_or_insert(input.com)
            };
            let reference = ComReference {
                prev: self
                    .active
                    .as_ref()
                    .and_then(|a| a.start_balance)
                    .unwrap_or(anchor),
                end: end_ref,
            };
            let expected = com_reference_at(&reference, s);
            let prev_error = self.balance_prev_error.unwrap_or(ComPoint {
                x_mm: expected.x_mm - input.com.x_mm,
                y_mm: expected.y_mm - input.com.y_mm,
            });
            let out = pd_balance(expected, input.com, prev_error, &self.config.balance);
            self.balance_prev_error = Some(out.error);
            balance_offsets = out.offsets;
            for j in JointId::all() {
                requested[j] += balance_offsets[j];
            }
        } else {
            self.balance_prev_error = None;
        }

        let mut oscillation = 0.0;
        let oscillating =
            self.flags.oscillation && kf.oscillate && balancing && kf.support.on_soles();
        if oscillating {
            oscillation = ankle_oscillation(self.oscillator.clock_ms, &self.oscillator);
            self.oscillator.advance(self.config.cycle_ms as f64);
            requested[JointId::LAnkleRoll] += oscillation;
            requested[JointId::RAnkleRoll] -= oscillation;
        } else {
            self.oscillator.reset();
        }

        CycleOutput {
            requested: self.limits.clamp_vector(&requested),
            base,
            stiffness: Self::uniform_stiffness(1.0),
            mode: self.mode,
            keyframe: Some(kf.name.clone()),
            support: SupportKind::Mode(kf.support),
            deltas: self.watched_deltas(),
            balance_offsets,
            oscillation,
        }
    }
}
