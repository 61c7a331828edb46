//! Deterministic simulated robot: per-joint servo models (command delay,
//! velocity limit, fault gating, seeded measurement noise), forward
//! kinematic center of mass and a reduced 2-DoF torso-orientation model.
//!
//! The torso model is not contact physics. It projects the CoM into the
//! active support frame: inside the support interval the torso relaxes
//! toward the pitch implied by the support face, outside it the pitch rate
//! integrates a fall gain times the overhang. That is enough to exercise
//! checks, waiting, balancing and compensation deterministically.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::joints::{JointId, JointLimits, JointVector, JOINT_COUNT};
use crate::kinematics::{Fk, LinkTable, Vec3};
use crate::scenario::{Fault, FaultUntil, InitialPosture, Scenario, StuckMode};
use crate::script::{ComPoint, SupportMode};

/// What currently carries the robot, from the engine's point of view.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SupportKind {
    Mode(SupportMode),
    /// No controlled support: breakup, decide, help-me.
    Falling,
}

/// Plant tunables.
#[derive(Debug, Clone)]
pub struct PlantConfig {
    /// Default servo speed limit, rad per cycle.
    pub max_speed: f64,
    /// Per-joint overrides of the speed limit.
    pub speed_overrides: Vec<(JointId, f64)>,
    /// Fall gain: pitch/roll acceleration per mm of CoM overhang, rad/s²/mm.
    pub k_fall: f64,
    /// Righting time constant while supported, ms.
    pub tau_right_ms: f64,
    /// Relaxation time constant toward a lying pose while falling, ms.
    pub tau_fall_ms: f64,
    /// Decay constant of residual pitch/roll rate while supported, ms.
    pub rate_damp_ms: f64,
    /// Orientation saturation (lying flat), rad.
    pub saturation: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig {
            max_speed: 0.12,
            speed_overrides: Vec::new(),
            k_fall: 0.03,
            tau_right_ms: 350.0,
            tau_fall_ms: 250.0,
            rate_damp_ms: 50.0,
            saturation: 96.0f64.to_radians(),
        }
    }
}

/// One joint's servo: delay line, slew limit and fault gating.
#[derive(Debug, Clone)]
pub struct ServoModel {
    position: f64,
    pending: VecDeque<f64>,
    max_speed: f64,
}

impl ServoModel {
    pub fn new(initial: f64, delay_cycles: usize, max_speed: f64) -> ServoModel {
        assert!(delay_cycles >= 1);
        let mut pending = VecDeque::with_capacity(delay_cycles + 1);
        for _ in 0..delay_cycles {
            pending.push_back(initial);
        }
        ServoModel {
            position: initial,
            pending,
            max_speed,
        }
    }

    pub fn position(&self) -> f64 {
        self.position
    }

    /// Command expected to execute this cycle (head of the delay line).
    fn pop_delayed(&mut self, command: f64) -> f64 {
        self.pending.push_back(command);
        self.pending.pop_front().expect("delay line is never empty")
    }

    fn slew_toward(&mut self, target: f64) {
        let step = target - self.position;
        if step.abs() <= self.max_speed {
            self.position = target;
        } else {
            self.position += step.signum() * self.max_speed;
        }
    }
}

#[derive(Debug, Clone)]
struct FaultRuntime {
    spec: Fault,
    engaged: bool,
    released: bool,
    /// Error reached the release threshold at least once while stuck.
    armed: bool,
    hold_at: f64,
}

impl FaultRuntime {
    fn new(spec: Fault) -> Self {
        FaultRuntime {
            spec,
            engaged: false,
            released: false,
            armed: false,
            hold_at: 0.0,
        }
    }
}

/// Torso orientation state of the reduced body model.
#[derive(Debug, Clone, Copy, Default)]
pub struct BodyState {
    pub pitch: f64,
    pub roll: f64,
    pub pitch_rate: f64,
    pub roll_rate: f64,
}

/// Geometry of one support configuration.
#[derive(Debug, Clone, Copy)]
pub struct SupportFrame {
    /// CoM relative to the support pivot, torso frame, mm.
    pub com_rel: Vec3,
    /// Torso pitch the support face implies when flat on the ground.
    pub implied_pitch: f64,
    pub implied_roll: f64,
    /// Sagittal support interval around the pivot, mm.
    pub sagittal: (f64, f64),
    /// Lateral support interval around the pivot, mm.
    pub lateral: (f64, f64),
}

fn support_intervals(mode: SupportMode) -> ((f64, f64), (f64, f64)) {
    match mode {
        SupportMode::FrontLying | SupportMode::BackLying => ((-250.0, 250.0), (-150.0, 150.0)),
        SupportMode::ArmsHead => ((-180.0, 180.0), (-140.0, 140.0)),
        SupportMode::Sitting => ((-160.0, 220.0), (-130.0, 130.0)),
        // Spread feet extend the polygon backward past the heels.
        SupportMode::Soles => ((-75.0, 85.0), (-70.0, 70.0)),
        SupportMode::LeftLeg | SupportMode::RightLeg => ((-75.0, 85.0), (-50.0, 50.0)),
    }
}

/// Sole center in the foot link frame, mm.
const SOLE_CENTER: Vec3 = Vec3 {
    x: 25.0,
    y: 0.0,
    z: -40.0,
};

/// Evolve torso pitch/roll one step of `dt` seconds.
///
/// Exposed for direct testing; [`Plant::step`] assembles the frame from
/// forward kinematics and the active support mode.
pub fn body_step(state: &mut BodyState, frame: &SupportFrame, ground_tilt: f64, dt: f64, cfg: &PlantConfig) {
    // CoM in the ground frame, rotated by the current orientation.
    let (sp, cp) = state.pitch.sin_cos();
    let (sr, cr) = state.roll.sin_cos();
    let x_g = cp * frame.com_rel.x + sp * frame.com_rel.z;
    let z_g = -sp * frame.com_rel.x + cp * frame.com_rel.z;
    let y_g = cr * frame.com_rel.y + sr * frame.com_rel.z;
    let x_eff = x_g + z_g * ground_tilt.tan();

    let relax = 1.0 - (-dt * 1000.0 / cfg.tau_right_ms).exp();
    let damp = (-dt * 1000.0 / cfg.rate_damp_ms).exp();

    if x_eff >= frame.sagittal.0 && x_eff <= frame.sagittal.1 {
        state.pitch_rate *= damp;
        // The support face rests on tilted ground, so the settled torso
        // pitch carries the ramp angle.
        let target = frame.implied_pitch + ground_tilt;
        state.pitch += (target - state.pitch) * relax + state.pitch_rate * dt;
    } else {
        let over = x_eff - x_eff.clamp(frame.sagittal.0, frame.sagittal.1);
        state.pitch_rate += cfg.k_fall * over * dt;
        state.pitch += state.pitch_rate * dt;
    }

    if y_g >= frame.lateral.0 && y_g <= frame.lateral.1 {
        state.roll_rate *= damp;
        state.roll += (frame.implied_roll - state.roll) * relax + state.roll_rate * dt;
    } else {
        let over = y_g - y_g.clamp(frame.lateral.0, frame.lateral.1);
        state.roll_rate += cfg.k_fall * over * dt;
        state.roll += state.roll_rate * dt;
    }

    saturate(state, cfg.saturation);
}

/// Uncontrolled fall: relax toward the nearest resting orientation.
fn body_fall(state: &mut BodyState, dt: f64, cfg: &PlantConfig) {
    let relax = 1.0 - (-dt * 1000.0 / cfg.tau_fall_ms).exp();
    let damp = (-dt * 1000.0 / cfg.rate_damp_ms).exp();
    let half_pi = std::f64::consts::FRAC_PI_2;
    let target_pitch = if state.pitch.abs() > 15.0f64.to_radians() {
        state.pitch.signum() * half_pi
    } else {
        0.0
    };
    let target_roll = if state.roll.abs() > 50.0f64.to_radians() {
        state.roll.signum() * half_pi
    } else {
        0.0
    };
    state.pitch += (target_pitch - state.pitch) * relax + state.pitch_rate * dt;
    state.roll += (target_roll - state.roll) * relax + state.roll_rate * dt;
    state.pitch_rate *= damp;
    state.roll_rate *= damp;
    saturate(state, cfg.saturation);
}

fn saturate(state: &mut BodyState, limit: f64) {
    if state.pitch.abs() > limit {
        state.pitch = state.pitch.signum() * limit;
        state.pitch_rate = 0.0;
    }
    if state.roll.abs() > limit {
        state.roll = state.roll.signum() * limit;
        state.roll_rate = 0.0;
    }
}

/// Joint pose the robot wakes up in, per starting posture: legs straight,
/// arms along the body.
pub fn initial_pose(posture: InitialPosture) -> JointVector {
    let _ = posture;
    let mut pose = JointVector::zeros();
    pose[JointId::LShoulderPitch] = 90.0f64.to_radians();
    pose[JointId::RShoulderPitch] = 90.0f64.to_radians();
    pose
}

fn initial_orientation(posture: InitialPosture) -> BodyState {
    let half_pi = std::f64::consts::FRAC_PI_2;
    let (pitch, roll) = match posture {
        InitialPosture::Front => (half_pi, 0.0),
        InitialPosture::Back => (-half_pi, 0.0),
        InitialPosture::SideLeft => (0.0, half_pi),
        InitialPosture::SideRight => (0.0, -half_pi),
    };
    BodyState {
        pitch,
        roll,
        pitch_rate: 0.0,
        roll_rate: 0.0,
    }
}

/// The whole simulated robot for one scenario.
#[derive(Debug, Clone)]
pub struct Plant {
    table: LinkTable,
    cfg: PlantConfig,
    limits: JointLimits,
    servos: Vec<ServoModel>,
    faults: Vec<FaultRuntime>,
    body: BodyState,
    ground_tilt: f64,
    pushes: Vec<(u64, f64)>,
    noise_sigma: f64,
    rng: ChaCha8Rng,
    cycle: u64,
    cycle_ms: u32,
    fk: Fk,
    l_foot: usize,
    r_foot: usize,
    rejected_commands: u64,
}

impl Plant {
    pub fn new(
        table: LinkTable,
        scenario: &Scenario,
        cfg: PlantConfig,
        delay_cycles: usize,
        cycle_ms: u32,
    ) -> Plant {
        let pose = initial_pose(scenario.initial);
        let servos = JointId::all()
            .map(|j| {
                let speed = cfg
                    .speed_overrides
                    .iter()
                    .find(|(joint, _)| *joint == j)
                    .map(|(_, s)| *s)
                    .unwrap_or(cfg.max_speed);
                ServoModel::new(pose[j], delay_cycles, speed)
            })
            .collect();
        let fk = table.forward(&pose);
        let l_foot = table.link_index("l_foot").expect("table needs l_foot");
        let r_foot = table.link_index("r_foot").expect("table needs r_foot");
        Plant {
            cfg,
            limits: JointLimits::default(),
            servos,
            faults: scenario.faults.iter().copied().map(FaultRuntime::new).collect(),
            body: initial_orientation(scenario.initial),
            ground_tilt: scenario.ground_tilt,
            pushes: scenario.pushes.iter().map(|p| (p.at_ms, p.pitch_rad_s)).collect(),
            noise_sigma: scenario.noise_sigma,
            rng: ChaCha8Rng::seed_from_u64(scenario.seed),
            cycle: 0,
            cycle_ms,
            fk,
            l_foot,
            r_foot,
            table,
            rejected_commands: 0,
        }
    }

    /// True (noise-free) servo positions.
    pub fn true_positions(&self) -> JointVector {
        JointVector::from_fn(|j| self.servos[j.index()].position())
    }

    /// Measured positions: true positions plus seeded Gaussian noise.
    pub fn measured(&mut self) -> JointVector {
        let sigma = self.noise_sigma;
        if sigma == 0.0 {
            return self.true_positions();
        }
        JointVector::from_fn(|j| self.servos[j.index()].position() + sigma * self.gaussian())
    }

    /// Box-Muller draw from the scenario RNG.
    fn gaussian(&mut self) -> f64 {
        let u1: f64 = self.rng.random::<f64>().max(1e-12);
        let u2: f64 = self.rng.random();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    pub fn orientation(&self) -> (f64, f64) {
        (self.body.pitch, self.body.roll)
    }

    pub fn body(&self) -> &BodyState {
        &self.body
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    /// Commands rejected so far for being outside the joint range; any
    /// nonzero value signals an engine clamping bug.
    pub fn rejected_commands(&self) -> u64 {
        self.rejected_commands
    }

    fn pivot(&self, mode: SupportMode) -> Vec3 {
        match mode {
            SupportMode::FrontLying | SupportMode::BackLying | SupportMode::ArmsHead => Vec3::ZERO,
            SupportMode::Sitting => Vec3::new(-20.0, 0.0, -100.0),
            SupportMode::Soles => {
                let l = self.fk.pose(self.l_foot).transform_point(SOLE_CENTER);
                let r = self.fk.pose(self.r_foot).transform_point(SOLE_CENTER);
                l.add(r).scale(0.5)
            }
            SupportMode::LeftLeg => self.fk.pose(self.l_foot).transform_point(SOLE_CENTER),
            SupportMode::RightLeg => self.fk.pose(self.r_foot).transform_point(SOLE_CENTER),
        }
    }

    fn implied_orientation(&self, mode: SupportMode) -> (f64, f64) {
        let foot_pitch = |idx: usize| self.fk.pose(idx).rot.pitch_of_x_axis();
        let foot_roll = |idx: usize| self.fk.pose(idx).rot.roll_of_y_axis();
        match mode {
            SupportMode::FrontLying => (std::f64::consts::FRAC_PI_2, 0.0),
            SupportMode::BackLying => (-std::f64::consts::FRAC_PI_2, 0.0),
            SupportMode::ArmsHead => (25.0f64.to_radians(), 0.0),
            SupportMode::Sitting => ((-2.0f64).to_radians(), 0.0),
            SupportMode::Soles => (
                -(foot_pitch(self.l_foot) + foot_pitch(self.r_foot)) / 2.0,
                -(foot_roll(self.l_foot) + foot_roll(self.r_foot)) / 2.0,
            ),
            SupportMode::LeftLeg => (-foot_pitch(self.l_foot), -foot_roll(self.l_foot)),
            SupportMode::RightLeg => (-foot_pitch(self.r_foot), -foot_roll(self.r_foot)),
        }
    }

    /// Support frame for the current kinematic state.
    pub fn support_frame(&self, mode: SupportMode) -> SupportFrame {
        let (sagittal, lateral) = support_intervals(mode);
        let (implied_pitch, implied_roll) = self.implied_orientation(mode);
        SupportFrame {
            com_rel: self.fk.com.sub(self.pivot(mode)),
            implied_pitch,
            implied_roll,
            sagittal,
            lateral,
        }
    }

    /// CoM in the torso-projected ground frame, mm, anchored at the mean
    /// sole center. One frame for the whole run, so balance references
    /// recorded at keyframe ends stay comparable across support changes.
    pub fn com_ground(&self) -> ComPoint {
        let pivot = self.pivot(SupportMode::Soles);
        let rel = self.fk.com.sub(pivot);
        let (sp, cp) = self.body.pitch.sin_cos();
        let (sr, cr) = self.body.roll.sin_cos();
        ComPoint {
            x_mm: cp * rel.x + sp * rel.z,
            y_mm: cr * rel.y + sr * rel.z,
        }
    }

    /// Whole-body CoM in the torso frame, mm.
    pub fn com_torso(&self) -> Vec3 {
        self.fk.com
    }

    fn fault_active(&mut self, j: JointId, delayed: f64) -> Option<f64> {
        let position = self.servos[j.index()].position();
        let cycle = self.cycle;
        for fault in self.faults.iter_mut().filter(|f| f.spec.joint == j) {
            if fault.released || cycle < fault.spec.from_cycle {
                continue;
            }
            if !fault.engaged {
                fault.engaged = true;
                fault.hold_at = match fault.spec.stuck {
                    StuckMode::HoldCurrent => position,
                    StuckMode::At(p) => p,
                };
            }
            let error = (delayed - position).abs();
            match fault.spec.until {
                FaultUntil::Cycle(n) => {
                    if cycle >= n {
                        fault.released = true;
                        continue;
                    }
                }
                FaultUntil::ErrorBelow(threshold) => {
                    if error >= threshold {
                        fault.armed = true;
                    } else if fault.armed {
                        fault.released = true;
                        continue;
                    }
                }
                FaultUntil::ErrorAbove(threshold) => {
                    if error > threshold {
                        fault.released = true;
                        continue;
                    }
                }
            }
            let hold = match fault.spec.slip {
                // Stick-slip: once the command pulls more than the bound
                // away, the joint slips along at that constant lag.
                Some(bound) => {
                    let err = delayed - position;
                    if err.abs() > bound {
                        delayed - err.signum() * bound
                    } else {
                        position
                    }
                }
                None => fault.hold_at,
            };
            return Some(hold);
        }
        None
    }

    /// Advance servos and torso one cycle.
    ///
    /// `commands` are this cycle's requested positions, `stiffness` per
    /// joint in [0, 1] (below 0.5 the servo coasts), `support` the active
    /// support configuration.
    pub fn step(&mut self, commands: &JointVector, stiffness: &[f64; JOINT_COUNT], support: SupportKind) {
        for j in JointId::all() {
            let mut command = commands[j];
            if !self.limits.contains(j, command) {
                self.rejected_commands += 1;
                command = self.limits.range(j).clamp(command);
            }
            let delayed = self.servos[j.index()].pop_delayed(command);
            if let Some(hold) = self.fault_active(j, delayed) {
                // Stuck: move toward the hold point if not there, never
                // toward the command.
                let servo = &mut self.servos[j.index()];
                servo.slew_toward(hold);
            } else if stiffness[j.index()] >= 0.5 {
                self.servos[j.index()].slew_toward(delayed);
            }
            // Low stiffness: the joint coasts where it is.
        }

        self.fk = self.table.forward(&self.true_positions());

        let dt = self.cycle_ms as f64 / 1000.0;
        let now_ms = self.cycle * self.cycle_ms as u64;
        for (at_ms, impulse) in &self.pushes {
            if *at_ms >= now_ms && *at_ms < now_ms + self.cycle_ms as u64 {
                self.body.pitch_rate += impulse;
            }
        }
        match support {
            SupportKind::Mode(mode) => {
                let frame = self.support_frame(mode);
                body_step(&mut self.body, &frame, self.ground_tilt, dt, &self.cfg);
            }
            SupportKind::Falling => body_fall(&mut self.body, dt, &self.cfg),
        }

        self.cycle += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Scenario;
    use proptest::prelude::*;

    fn plant(scenario: &Scenario) -> Plant {
        Plant::new(LinkTable::builtin(), scenario, PlantConfig::default(), 3, 12)
    }

    fn full_stiffness() -> [f64; JOINT_COUNT] {
        [1.0; JOINT_COUNT]
    }

    #[test]
    fn step_command_slews_after_delay() {
        let scenario = Scenario::nominal("t", InitialPosture::Back);
        let mut servo = ServoModel::new(0.0, 3, 0.05);
        let mut measured = Vec::new();
        for _ in 0..5 {
            let delayed = servo.pop_delayed(0.1);
            servo.slew_toward(delayed);
            measured.push(servo.position());
        }
        assert_eq!(measured, vec![0.0, 0.0, 0.0, 0.05, 0.1]);
        drop(scenario);
    }

    #[test]
    fn delay_is_exactly_three_cycles_with_infinite_slew() {
        let scenario = Scenario::nominal("t", InitialPosture::Back);
        let mut p = Plant::new(
            LinkTable::builtin(),
            &scenario,
            PlantConfig {
                max_speed: 1e9,
                ..PlantConfig::default()
            },
            3,
            12,
        );
        let mut commands = Vec::new();
        let mut measured = Vec::new();
        let j = JointId::LKneePitch;
        for t in 0..40u64 {
            let mut cmd = initial_pose(InitialPosture::Back);
            cmd[j] = 0.3 * ((t as f64) * 0.37).sin().abs();
            commands.push(cmd[j]);
            p.step(&cmd, &full_stiffness(), SupportKind::Mode(SupportMode::BackLying));
            measured.push(p.true_positions()[j]);
        }
        for t in 3..40 {
            assert_eq!(measured[t], commands[t - 3], "cycle {t}");
        }
        // Cross-correlation peaks at lag 3 exactly.
        let score = |lag: usize| -> f64 {
            (lag..40).map(|t| measured[t] * commands[t - lag]).sum()
        };
        let best = (0..6).max_by(|a, b| score(*a).total_cmp(&score(*b))).unwrap();
        assert_eq!(best, 3);
    }

    #[test]
    fn hold_fault_freezes_position() {
        let mut scenario = Scenario::nominal("t", InitialPosture::Back);
        scenario.faults.push(Fault {
            joint: JointId::LKneePitch,
            stuck: StuckMode::HoldCurrent,
            from_cycle: 0,
            until: FaultUntil::Cycle(u64::MAX),
            slip: None,
        });
        let mut p = plant(&scenario);
        let before = p.true_positions()[JointId::LKneePitch];
        for _ in 0..50 {
            let mut cmd = initial_pose(InitialPosture::Back);
            cmd[JointId::LKneePitch] = 1.0;
            p.step(&cmd, &full_stiffness(), SupportKind::Mode(SupportMode::BackLying));
        }
        assert_eq!(p.true_positions()[JointId::LKneePitch], before);
    }

    #[test]
    fn fault_release_on_cycle_resumes_tracking() {
        let mut scenario = Scenario::nominal("t", InitialPosture::Back);
        scenario.faults.push(Fault {
            joint: JointId::LKneePitch,
            stuck: StuckMode::HoldCurrent,
            from_cycle: 0,
            until: FaultUntil::Cycle(20),
            slip: None,
        });
        let mut p = plant(&scenario);
        for _ in 0..60 {
            let mut cmd = initial_pose(InitialPosture::Back);
            cmd[JointId::LKneePitch] = 1.0;
            p.step(&cmd, &full_stiffness(), SupportKind::Mode(SupportMode::BackLying));
        }
        assert!((p.true_positions()[JointId::LKneePitch] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_noise_zero_commands_hold_initial_position() {
        let scenario = Scenario::nominal("t", InitialPosture::Back);
        let mut p = plant(&scenario);
        let initial = p.true_positions();
        for _ in 0..20 {
            p.step(&initial, &full_stiffness(), SupportKind::Mode(SupportMode::BackLying));
        }
        assert_eq!(p.measured(), initial);
    }

    #[test]
    fn noise_is_deterministic_per_seed() {
        let mut scenario = Scenario::nominal("t", InitialPosture::Back);
        scenario.noise_sigma = 0.01;
        scenario.seed = 7;
        let mut a = plant(&scenario);
        let mut b = plant(&scenario);
        for _ in 0..10 {
            let cmd = initial_pose(InitialPosture::Back);
            a.step(&cmd, &full_stiffness(), SupportKind::Mode(SupportMode::BackLying));
            b.step(&cmd, &full_stiffness(), SupportKind::Mode(SupportMode::BackLying));
            assert_eq!(a.measured(), b.measured());
        }
    }

    proptest! {
        /// No overshoot: with zero noise the position stays between its
        /// previous value and the delayed command.
        #[test]
        fn servo_is_energy_free(target in -1.0f64..1.0, speed in 0.01f64..0.5) {
            let mut servo = ServoModel::new(0.0, 3, speed);
            let mut prev = servo.position();
            for _ in 0..30 {
                let delayed = servo.pop_delayed(target);
                servo.slew_toward(delayed);
                let pos = servo.position();
                let lo = prev.min(delayed);
                let hi = prev.max(delayed);
                prop_assert!(pos >= lo - 1e-12 && pos <= hi + 1e-12);
                prev = pos;
            }
        }
    }

    #[test]
    fn fall_rate_grows_with_stated_gain() {
        // CoM 30 mm beyond the front edge at pivot height: the pitch rate
        // must grow by k_fall * 30 per second.
        let cfg = PlantConfig {
            k_fall: 0.002,
            ..PlantConfig::default()
        };
        let mut state = BodyState::default();
        let frame = SupportFrame {
            com_rel: Vec3::new(105.0, 0.0, 0.0),
            implied_pitch: 0.0,
            implied_roll: 0.0,
            sagittal: (-55.0, 75.0),
            lateral: (-70.0, 70.0),
        };
        let dt = 0.01;
        for _ in 0..100 {
            body_step(&mut state, &frame, 0.0, dt, &cfg);
        }
        let expected = 0.002 * 30.0;
        assert!(
            (state.pitch_rate - expected).abs() < expected * 0.05,
            "rate {} vs {}",
            state.pitch_rate,
            expected
        );
    }

    #[test]
    fn supported_com_relaxes_to_implied_pitch() {
        let cfg = PlantConfig::default();
        let mut state = BodyState {
            pitch: 0.3,
            ..BodyState::default()
        };
        let frame = SupportFrame {
            com_rel: Vec3::new(10.0, 0.0, 200.0),
            implied_pitch: -0.1,
            implied_roll: 0.0,
            sagittal: (-55.0, 75.0),
            lateral: (-70.0, 70.0),
        };
        for _ in 0..200 {
            body_step(&mut state, &frame, 0.0, 0.012, &cfg);
        }
        assert!((state.pitch - -0.1).abs() < 0.01, "pitch {}", state.pitch);
    }

    #[test]
    fn equilibrium_is_stable() {
        let cfg = PlantConfig::default();
        let mut state = BodyState::default();
        let frame = SupportFrame {
            com_rel: Vec3::new(10.0, 0.0, 200.0),
            implied_pitch: 0.0,
            implied_roll: 0.0,
            sagittal: (-55.0, 75.0),
            lateral: (-70.0, 70.0),
        };
        for _ in 0..100 {
            body_step(&mut state, &frame, 0.0, 0.012, &cfg);
        }
        assert!(state.pitch.abs() < 1e-9);
        assert!(state.roll.abs() < 1e-9);
    }

    #[test]
    fn out_of_range_commands_are_rejected_and_counted() {
        let scenario = Scenario::nominal("t", InitialPosture::Back);
        let mut p = plant(&scenario);
        let mut cmd = initial_pose(InitialPosture::Back);
        cmd[JointId::LKneePitch] = -1.0; // far below the knee range
        p.step(&cmd, &full_stiffness(), SupportKind::Mode(SupportMode::BackLying));
        assert_eq!(p.rejected_commands(), 1);
    }

    #[test]
    fn low_stiffness_joint_coasts() {
        let scenario = Scenario::nominal("t", InitialPosture::Back);
        let mut p = plant(&scenario);
        let initial = p.true_positions();
        let mut stiffness = full_stiffness();
        stiffness[JointId::LKneePitch.index()] = 0.1;
        let mut cmd = initial_pose(InitialPosture::Back);
        cmd[JointId::LKneePitch] = 1.0;
        for _ in 0..20 {
            p.step(&cmd, &stiffness, SupportKind::Mode(SupportMode::BackLying));
        }
        assert_eq!(
            p.true_positions()[JointId::LKneePitch],
            initial[JointId::LKneePitch]
        );
    }
}
