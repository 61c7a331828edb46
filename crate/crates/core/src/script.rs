//! Motion scripts: keyframed target poses plus per-keyframe checks, waits,
//! compensation rules and balance references.
//!
//! Scripts live in a line-oriented text format (angles in degrees, `#`
//! comments); internally everything is radians. Values are immutable after
//! parsing and can be shared freely between threads.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use crate::joints::{AngleRange, JointId, JointLimits, JointVector, PartialJointVector};

mod parse;

pub use parse::{parse_script, parse_script_raw, ScriptError};

/// Interpolation shape for the base trajectory of a keyframe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    Linear,
    Cosine,
}

/// Which body parts carry the robot during a keyframe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SupportMode {
    FrontLying,
    BackLying,
    ArmsHead,
    Soles,
    LeftLeg,
    RightLeg,
    Sitting,
}

impl SupportMode {
    pub fn token(self) -> &'static str {
        match self {
            SupportMode::FrontLying => "front",
            SupportMode::BackLying => "back",
            SupportMode::ArmsHead => "arms_head",
            SupportMode::Soles => "soles",
            SupportMode::LeftLeg => "left_leg",
            SupportMode::RightLeg => "right_leg",
            SupportMode::Sitting => "sitting",
        }
    }

    /// True when the soles (or one of them) carry the robot.
    pub fn on_soles(self) -> bool {
        matches!(
            self,
            SupportMode::Soles | SupportMode::LeftLeg | SupportMode::RightLeg
        )
    }
}

/// Starting situation a script is written for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryCondition {
    Front,
    Back,
}

/// Conditional wait at the end of a keyframe: hold until the torso pitch
/// enters the interval, but never longer than `max_wait_ms`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaitCondition {
    pub torso_pitch: AngleRange,
    pub max_wait_ms: u32,
}

/// What to do when an arm check fails.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ArmCheckAction {
    /// Return to a previous keyframe of the same script.
    Retry(String),
    /// Insert a dedicated motion that frees the limbs.
    FreeArms(String),
}

/// Compares requested and measured positions of the watched joints at the
/// end of a keyframe.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmCheck {
    pub watched: Vec<JointId>,
    /// Radians; the check passes while every error stays strictly below.
    pub error_threshold: f64,
    pub action: ArmCheckAction,
}

/// One target of a compensation rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompensationTarget {
    pub joint: JointId,
    pub factor: f64,
}

/// Distributes the watched joint's applied error onto other joints.
#[derive(Debug, Clone, PartialEq)]
pub struct CompensationRule {
    pub watched: JointId,
    /// Radians; errors below this are ignored.
    pub activation_threshold: f64,
    pub targets: Vec<CompensationTarget>,
}

/// Expected center of mass, mm, in the torso-projected ground frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComPoint {
    pub x_mm: f64,
    pub y_mm: f64,
}

/// One keyframe: target pose, duration and all per-keyframe behavior.
#[derive(Debug, Clone, PartialEq)]
pub struct Keyframe {
    pub name: String,
    pub duration_ms: u32,
    pub interpolation: Interpolation,
    pub support: SupportMode,
    /// Unset joints hold the previous keyframe's resolved target.
    pub targets: PartialJointVector,
    pub torso_pitch_range: AngleRange,
    pub torso_roll_range: AngleRange,
    pub wait: Option<WaitCondition>,
    pub arm_check: Option<ArmCheck>,
    pub compensation_rules: Vec<CompensationRule>,
    pub balance_ref: Option<ComPoint>,
    pub oscillate: bool,
}

/// A complete stand-up (or recovery) routine.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionScript {
    pub name: String,
    pub entry: EntryCondition,
    pub keyframes: Vec<Keyframe>,
    pub max_consecutive_failures: u32,
}

impl MotionScript {
    pub fn keyframe_index(&self, name: &str) -> Option<usize> {
        self.keyframes.iter().position(|k| k.name == name)
    }

    /// Resolve every keyframe to a total joint vector. The first keyframe
    /// resolves over `base`; later ones inherit from their predecessor.
    pub fn resolved_targets(&self, base: &JointVector) -> Vec<JointVector> {
        let mut out = Vec::with_capacity(self.keyframes.len());
        let mut current = *base;
        for kf in &self.keyframes {
            current = kf.targets.resolve_over(&current);
            out.push(current);
        }
        out
    }
}

/// One finding of [`validate_script`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    /// Keyframe the finding belongs to, if any.
    pub keyframe: Option<String>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.keyframe {
            Some(kf) => write!(f, "keyframe `{kf}`: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

fn diag(keyframe: Option<&str>, message: impl Into<String>) -> Diagnostic {
    Diagnostic {
        keyframe: keyframe.map(str::to_string),
        message: message.into(),
    }
}

/// Semantic validation; an empty result means every invariant holds.
pub fn validate_script(script: &MotionScript, limits: &JointLimits) -> Vec<Diagnostic> {
    let mut out = Vec::new();

    if script.keyframes.is_empty() {
        out.push(diag(None, "script needs at least one keyframe"));
    }
    if script.max_consecutive_failures == 0 {
        out.push(diag(None, "max_failures must be positive"));
    }
    let mut seen = HashSet::new();
    for kf in &script.keyframes {
        if !seen.insert(kf.name.as_str()) {
            out.push(diag(None, format!("duplicate keyframe name `{}`", kf.name)));
        }
    }

    for (idx, kf) in script.keyframes.iter().enumerate() {
        let name = Some(kf.name.as_str());
        if kf.duration_ms == 0 {
            out.push(diag(name, "duration_ms must be positive"));
        }
        if !kf.torso_pitch_range.is_valid() {
            out.push(diag(name, "torso_pitch_range is empty or not finite"));
        }
        if !kf.torso_roll_range.is_valid() {
            out.push(diag(name, "torso_roll_range is empty or not finite"));
        }
        for (joint, angle) in kf.targets.iter() {
            if !angle.is_finite() {
                out.push(diag(name, format!("target {joint} is not finite")));
            } else if !limits.contains(joint, angle) {
                let r = limits.range(joint);
                out.push(diag(
                    name,
                    format!(
                        "target {joint} = {:.2} deg outside range [{:.2}, {:.2}] deg",
                        angle.to_degrees(),
                        r.min.to_degrees(),
                        r.max.to_degrees()
                    ),
                ));
            }
        }
        if let Some(wait) = &kf.wait {
            if wait.max_wait_ms == 0 {
                out.push(diag(name, "wait max_ms must be positive"));
            } else if wait.max_wait_ms > limits.max_wait_cap_ms {
                out.push(diag(
                    name,
                    format!(
                        "wait max_ms {} exceeds the cap of {} ms",
                        wait.max_wait_ms, limits.max_wait_cap_ms
                    ),
                ));
            }
            if !wait.torso_pitch.is_valid() {
                out.push(diag(name, "wait torso_pitch interval is empty"));
            }
        }
        if let Some(check) = &kf.arm_check {
            if check.watched.is_empty() {
                out.push(diag(name, "check_arms needs at least one joint"));
            }
            if check.error_threshold <= 0.0 || check.error_threshold.is_nan() {
                out.push(diag(name, "check_arms threshold must be positive"));
            }
            if let ArmCheckAction::Retry(target) = &check.action {
                match script.keyframe_index(target) {
                    None => out.push(diag(
                        name,
                        format!("retry target `{target}` is not a keyframe of this script"),
                    )),
                    Some(t) if t >= idx => out.push(diag(
                        name,
                        format!("retry target `{target}` is not a previous keyframe"),
                    )),
                    Some(_) => {}
                }
            }
        }
        for rule in &kf.compensation_rules {
            if rule.activation_threshold < 0.0 || !rule.activation_threshold.is_finite() {
                out.push(diag(
                    name,
                    format!("compensate {}: threshold must be >= 0", rule.watched),
                ));
            }
            if rule.targets.is_empty() {
                out.push(diag(
                    name,
                    format!("compensate {}: no target joints", rule.watched),
                ));
            }
            for target in &rule.targets {
                if target.joint == rule.watched {
                    out.push(diag(
                        name,
                        format!("compensate {}: watched joint cannot be its own target", rule.watched),
                    ));
                }
                if matches!(target.joint, JointId::LWristYaw | JointId::RWristYaw) {
                    out.push(diag(
                        name,
                        format!("compensate {}: wrists are not compensation targets", rule.watched),
                    ));
                }
                if !target.factor.is_finite()
                    || target.factor.abs() > limits.max_compensation_factor
                {
                    out.push(diag(
                        name,
                        format!(
                            "compensate {}: factor {} for {} outside |p| <= {}",
                            rule.watched, target.factor, target.joint, limits.max_compensation_factor
                        ),
                    ));
                }
            }
        }
        if let Some(com) = &kf.balance_ref {
            if !com.x_mm.is_finite() || !com.y_mm.is_finite() {
                out.push(diag(name, "balance com must be finite"));
            }
        }
        if kf.oscillate && kf.balance_ref.is_none() {
            out.push(diag(
                name,
                "oscillate requires a balance com reference on the same keyframe",
            ));
        }
    }

    out
}

/// Print a degree value that parses back to exactly `radians`.
///
/// Degrees-to-radians conversion rounds once, so the nearest printable
/// degree value is searched within a few ulps.
fn degrees_repr(radians: f64) -> String {
    let mut d = radians.to_degrees();
    if d.to_radians() == radians {
        return format!("{d}");
    }
    for _ in 0..4 {
        d = if d.to_radians() < radians {
            f64::next_up(d)
        } else {
            f64::next_down(d)
        };
        if d.to_radians() == radians {
            return format!("{d}");
        }
    }
    format!("{}", radians.to_degrees())
}

/// Render a script in the on-disk format. `parse_script` of the output
/// yields a field-by-field identical script.
pub fn serialize_script(script: &MotionScript) -> String {
    use fmt::Write;

    let mut out = String::new();
    let entry = match script.entry {
        EntryCondition::Front => "front",
        EntryCondition::Back => "back",
    };
    writeln!(out, "motion {} entry {}", script.name, entry).unwrap();
    writeln!(out, "max_failures {}", script.max_consecutive_failures).unwrap();
    for kf in &script.keyframes {
        writeln!(out).unwrap();
        writeln!(out, "keyframe {}", kf.name).unwrap();
        writeln!(out, "  duration_ms {}", kf.duration_ms).unwrap();
        let interp = match kf.interpolation {
            Interpolation::Linear => "linear",
            Interpolation::Cosine => "cosine",
        };
        writeln!(out, "  interpolation {interp}").unwrap();
        writeln!(out, "  support {}", kf.support.token()).unwrap();
        for (joint, angle) in kf.targets.iter() {
            writeln!(out, "  target {} {}", joint, degrees_repr(angle)).unwrap();
        }
        writeln!(
            out,
            "  torso_pitch_range {} {}",
            degrees_repr(kf.torso_pitch_range.min),
            degrees_repr(kf.torso_pitch_range.max)
        )
        .unwrap();
        writeln!(
            out,
            "  torso_roll_range {} {}",
            degrees_repr(kf.torso_roll_range.min),
            degrees_repr(kf.torso_roll_range.max)
        )
        .unwrap();
        if let Some(wait) = &kf.wait {
            writeln!(
                out,
                "  wait torso_pitch {} {} max_ms {}",
                degrees_repr(wait.torso_pitch.min),
                degrees_repr(wait.torso_pitch.max),
                wait.max_wait_ms
            )
            .unwrap();
        }
        if let Some(check) = &kf.arm_check {
            let joints: Vec<&str> = check.watched.iter().map(|j| j.name()).collect();
            let action = match &check.action {
                ArmCheckAction::Retry(kf) => format!("retry {kf}"),
                ArmCheckAction::FreeArms(motion) => format!("free_arms {motion}"),
            };
            writeln!(
                out,
                "  check_arms {} threshold {} action {}",
                joints.join(","),
                degrees_repr(check.error_threshold),
                action
            )
            .unwrap();
        }
        for rule in &kf.compensation_rules {
            let targets: Vec<String> = rule
                .targets
                .iter()
                .map(|t| format!("{}*{}", t.joint, t.factor))
                .collect();
            writeln!(
                out,
                "  compensate {} threshold {} -> {}",
                rule.watched,
                degrees_repr(rule.activation_threshold),
                targets.join(", ")
            )
            .unwrap();
        }
        if let Some(com) = &kf.balance_ref {
            writeln!(out, "  balance com {} {}", com.x_mm, com.y_mm).unwrap();
        }
        writeln!(out, "  oscillate {}", if kf.oscillate { "on" } else { "off" }).unwrap();
        writeln!(out, "end").unwrap();
    }
    out
}

/// Errors while loading a script directory.
#[derive(Debug, thiserror::Error)]
pub enum LibraryError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: {diagnostics} validation finding(s), first: {first}")]
    Invalid {
        path: String,
        diagnostics: usize,
        first: String,
    },
    #[error("duplicate motion name `{0}`")]
    DuplicateName(String),
    #[error("motion `{from}` references unknown motion `{to}`")]
    DanglingMotion { from: String, to: String },
    #[error("no motion with entry condition `{0}` in the library")]
    MissingEntry(&'static str),
}

/// All loaded motions, addressable by name and by entry condition.
#[derive(Debug, Clone)]
pub struct ScriptLibrary {
    scripts: Vec<MotionScript>,
    by_name: HashMap<String, usize>,
}

impl ScriptLibrary {
    pub fn from_scripts(scripts: Vec<MotionScript>) -> Result<ScriptLibrary, LibraryError> {
        let mut by_name = HashMap::new();
        for (i, s) in scripts.iter().enumerate() {
            if by_name.insert(s.name.clone(), i).is_some() {
                return Err(LibraryError::DuplicateName(s.name.clone()));
            }
        }
        let lib = ScriptLibrary { scripts, by_name };
        for s in &lib.scripts {
            for kf in &s.keyframes {
                if let Some(ArmCheck {
                    action: ArmCheckAction::FreeArms(motion),
                    ..
                }) = &kf.arm_check
                {
                    if lib.get(motion).is_none() {
                        return Err(LibraryError::DanglingMotion {
                            from: s.name.clone(),
                            to: motion.clone(),
                        });
                    }
                }
            }
        }
        Ok(lib)
    }

    /// Load every `*.motion` file in `dir`, sorted by file name.
    pub fn load_dir(dir: &Path) -> Result<ScriptLibrary, LibraryError> {
        let io_err = |source| LibraryError::Io {
            path: dir.display().to_string(),
            source,
        };
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(io_err)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().map(|e| e == "motion").unwrap_or(false))
            .collect();
        paths.sort();
        let limits = JointLimits::default();
        let mut scripts = Vec::new();
        for path in paths {
            let display = path.display().to_string();
            let text = std::fs::read_to_string(&path).map_err(|source| LibraryError::Io {
                path: display.clone(),
                source,
            })?;
            let script = parse_script_raw(&text).map_err(|e| LibraryError::Parse {
                path: display.clone(),
                line: e.line,
                message: e.message,
            })?;
            let findings = validate_script(&script, &limits);
            if !findings.is_empty() {
                return Err(LibraryError::Invalid {
                    path: display,
                    diagnostics: findings.len(),
                    first: findings[0].to_string(),
                });
            }
            scripts.push(script);
        }
        ScriptLibrary::from_scripts(scripts)
    }

    pub fn get(&self, name: &str) -> Option<&MotionScript> {
        self.by_name.get(name).map(|i| &self.scripts[*i])
    }

    pub fn scripts(&self) -> &[MotionScript] {
        &self.scripts
    }

    /// First script (by load order) with the given entry condition.
    pub fn for_entry(&self, entry: EntryCondition) -> Result<&MotionScript, LibraryError> {
        self.scripts
            .iter()
            .find(|s| s.entry == entry)
            .ok_or(LibraryError::MissingEntry(match entry {
                EntryCondition::Front => "front",
                EntryCondition::Back => "back",
            }))
    }

    /// FNV-1a hash over the canonical serialization of every script, used
    /// to detect script edits between a recorded trace and a replay.
    pub fn content_hash(&self) -> u64 {
        let mut names: Vec<&str> = self.scripts.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for name in names {
            let text = serialize_script(self.get(name).expect("name from the index"));
            for byte in text.bytes() {
                hash ^= byte as u64;
                hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        hash
    }

    /// Union of all joints watched by any rule of any script, canonical order.
    pub fn watched_joints(&self) -> Vec<JointId> {
        let mut set = HashSet::new();
        for s in &self.scripts {
            for kf in &s.keyframes {
                for rule in &kf.compensation_rules {
                    set.insert(rule.watched);
                }
            }
        }
        let mut v: Vec<_> = JointId::all().filter(|j| set.contains(j)).collect();
        v.dedup();
        v
    }
}
