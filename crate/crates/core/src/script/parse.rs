//! Parser for the line-oriented motion script format.

use std::str::FromStr;

use crate::joints::{AngleRange, JointId, JointLimits, PartialJointVector};

use super::{
    validate_script, ArmCheck, ArmCheckAction, ComPoint, CompensationRule, CompensationTarget,
    EntryCondition, Interpolation, Keyframe, MotionScript, SupportMode, WaitCondition,
};

/// Parse or validation failure, pointing at the offending line.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct ScriptError {
    pub line: usize,
    pub message: String,
}

fn err(line: usize, message: impl Into<String>) -> ScriptError {
    ScriptError {
        line,
        message: message.into(),
    }
}

struct Cursor<'a> {
    line: usize,
    tokens: std::str::SplitWhitespace<'a>,
    raw: &'a str,
}

impl<'a> Cursor<'a> {
    fn next(&mut self, what: &str) -> Result<&'a str, ScriptError> {
        self.tokens
            .next()
            .ok_or_else(|| err(self.line, format!("missing {what}")))
    }

    fn f64(&mut self, what: &str) -> Result<f64, ScriptError> {
        let t = self.next(what)?;
        f64::from_str(t).map_err(|_| err(self.line, format!("invalid {what} `{t}`")))
    }

    fn degrees(&mut self, what: &str) -> Result<f64, ScriptError> {
        Ok(self.f64(what)?.to_radians())
    }

    fn u32(&mut self, what: &str) -> Result<u32, ScriptError> {
        let t = self.next(what)?;
        u32::from_str(t).map_err(|_| err(self.line, format!("invalid {what} `{t}`")))
    }

    fn joint(&mut self, what: &str) -> Result<JointId, ScriptError> {
        let t = self.next(what)?;
        t.parse::<JointId>()
            .map_err(|e| err(self.line, e.to_string()))
    }

    fn finish(mut self) -> Result<(), ScriptError> {
        match self.tokens.next() {
            Some(extra) => Err(err(self.line, format!("unexpected token `{extra}`"))),
            None => Ok(()),
        }
    }
}

/// Partially built keyframe; required fields become checked at `end`.
struct KeyframeDraft {
    name: String,
    line: usize,
    duration_ms: Option<u32>,
    interpolation: Option<Interpolation>,
    support: Option<SupportMode>,
    targets: PartialJointVector,
    torso_pitch_range: Option<AngleRange>,
    torso_roll_range: Option<AngleRange>,
    wait: Option<WaitCondition>,
    arm_check: Option<ArmCheck>,
    compensation_rules: Vec<CompensationRule>,
    balance_ref: Option<ComPoint>,
    oscillate: Option<bool>,
}

impl KeyframeDraft {
    fn new(name: String, line: usize) -> Self {
        KeyframeDraft {
            name,
            line,
            duration_ms: None,
            interpolation: None,
            support: None,
            targets: PartialJointVector::empty(),
            torso_pitch_range: None,
            torso_roll_range: None,
            wait: None,
            arm_check: None,
            compensation_rules: Vec::new(),
            balance_ref: None,
            oscillate: None,
        }
    }

    fn build(self, end_line: usize) -> Result<Keyframe, ScriptError> {
        let full = AngleRange::from_degrees(-180.0, 180.0);
        Ok(Keyframe {
            duration_ms: self
                .duration_ms
                .ok_or_else(|| err(end_line, format!("keyframe `{}` is missing duration_ms", self.name)))?,
            support: self
                .support
                .ok_or_else(|| err(end_line, format!("keyframe `{}` is missing support", self.name)))?,
            name: self.name,
            interpolation: self.interpolation.unwrap_or(Interpolation::Linear),
            targets: self.targets,
            torso_pitch_range: self.torso_pitch_range.unwrap_or(full),
            torso_roll_range: self.torso_roll_range.unwrap_or(full),
            wait: self.wait,
            arm_check: self.arm_check,
            compensation_rules: self.compensation_rules,
            balance_ref: self.balance_ref,
            oscillate: self.oscillate.unwrap_or(false),
        })
    }
}

fn unique<T>(slot: &mut Option<T>, value: T, line: usize, key: &str) -> Result<(), ScriptError> {
    if slot.is_some() {
        return Err(err(line, format!("duplicate `{key}`")));
    }
    *slot = Some(value);
    Ok(())
}

fn parse_compensate(cursor: &mut Cursor) -> Result<CompensationRule, ScriptError> {
    let line = cursor.line;
    let watched = cursor.joint("watched joint")?;
    let key = cursor.next("`threshold`")?;
    if key != "threshold" {
        return Err(err(line, format!("expected `threshold`, found `{key}`")));
    }
    let activation_threshold = cursor.degrees("threshold")?;
    // Targets follow after `->`; they may carry commas glued to tokens,
    // so work on the raw remainder of the line.
    let raw = cursor.raw;
    let arrow = raw
        .find("->")
        .ok_or_else(|| err(line, "missing `->` before compensation targets"))?;
    let mut targets = Vec::new();
    for part in raw[arrow + 2..].split(',') {
        let part = part.trim();
        if part.is_empty() {
            return Err(err(line, "empty compensation target"));
        }
        let (joint_name, factor_text) = part
            .split_once('*')
            .ok_or_else(|| err(line, format!("expected `<Joint>*<factor>`, found `{part}`")))?;
        let joint = joint_name
            .trim()
            .parse::<JointId>()
            .map_err(|e| err(line, e.to_string()))?;
        let factor = f64::from_str(factor_text.trim())
            .map_err(|_| err(line, format!("invalid factor `{factor_text}`")))?;
        targets.push(CompensationTarget { joint, factor });
    }
    Ok(CompensationRule {
        watched,
        activation_threshold,
        targets,
    })
}

fn parse_check_arms(cursor: &mut Cursor) -> Result<ArmCheck, ScriptError> {
    let line = cursor.line;
    let joints_token = cursor.next("joint list")?;
    let mut watched = Vec::new();
    for name in joints_token.split(',') {
        let name = name.trim();
        if name.is_empty() {
            continue;
        }
        watched.push(name.parse::<JointId>().map_err(|e| err(line, e.to_string()))?);
    }
    let key = cursor.next("`threshold`")?;
    if key != "threshold" {
        return Err(err(line, format!("expected `threshold`, found `{key}`")));
    }
    let error_threshold = cursor.degrees("threshold")?;
    let key = cursor.next("`action`")?;
    if key != "action" {
        return Err(err(line, format!("expected `action`, found `{key}`")));
    }
    let action = match cursor.next("action kind")? {
        "retry" => ArmCheckAction::Retry(cursor.next("retry keyframe name")?.to_string()),
        "free_arms" => ArmCheckAction::FreeArms(cursor.next("free_arms motion name")?.to_string()),
        other => return Err(err(line, format!("unknown action `{other}`"))),
    };
    Ok(ArmCheck {
        watched,
        error_threshold,
        action,
    })
}

/// Parse without semantic validation: syntax, joint names and structure only.
pub fn parse_script_raw(text: &str) -> Result<MotionScript, ScriptError> {
    let mut header: Option<(String, EntryCondition)> = None;
    let mut max_failures: Option<u32> = None;
    let mut keyframes: Vec<Keyframe> = Vec::new();
    let mut draft: Option<KeyframeDraft> = None;

    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let content = raw_line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut cursor = Cursor {
            line: line_no,
            tokens: content.split_whitespace(),
            raw: content,
        };
        let key = cursor.next("keyword")?;

        if header.is_none() {
            if key != "motion" {
                return Err(err(line_no, "script must start with a `motion` line"));
            }
            let name = cursor.next("motion name")?.to_string();
            let entry_key = cursor.next("`entry`")?;
            if entry_key != "entry" {
                return Err(err(line_no, format!("expected `entry`, found `{entry_key}`")));
            }
            let entry = match cursor.next("entry condition")? {
                "front" => EntryCondition::Front,
                "back" => EntryCondition::Back,
                other => return Err(err(line_no, format!("unknown entry condition `{other}`"))),
            };
            cursor.finish()?;
            header = Some((name, entry));
            continue;
        }

        match (&mut draft, key) {
            (None, "max_failures") => {
                let n = cursor.u32("max_failures value")?;
                cursor.finish()?;
                unique(&mut max_failures, n, line_no, "max_failures")?;
            }
            (None, "keyframe") => {
                let name = cursor.next("keyframe name")?.to_string();
                cursor.finish()?;
                draft = Some(KeyframeDraft::new(name, line_no));
            }
            (None, other) => {
                return Err(err(line_no, format!("unexpected `{other}` outside a keyframe")));
            }
            (Some(_), "end") => {
                cursor.finish()?;
                let done = draft.take().unwrap();
                keyframes.push(done.build(line_no)?);
            }
            (Some(kf), key) => {
                match key {
                    "duration_ms" => {
                        let v = cursor.u32("duration_ms value")?;
                        unique(&mut kf.duration_ms, v, line_no, "duration_ms")?;
                    }
                    "interpolation" => {
                        let v = match cursor.next("interpolation kind")? {
                            "linear" => Interpolation::Linear,
                            "cosine" => Interpolation::Cosine,
                            other => {
                                return Err(err(line_no, format!("unknown interpolation `{other}`")))
                            }
                        };
                        unique(&mut kf.interpolation, v, line_no, "interpolation")?;
                    }
                    "support" => {
                        let v = match cursor.next("support mode")? {
                            "front" => SupportMode::FrontLying,
                            "back" => SupportMode::BackLying,
                            "arms_head" => SupportMode::ArmsHead,
                            "soles" => SupportMode::Soles,
                            "left_leg" => SupportMode::LeftLeg,
                            "right_leg" => SupportMode::RightLeg,
                            "sitting" => SupportMode::Sitting,
                            other => return Err(err(line_no, format!("unknown support mode `{other}`"))),
                        };
                        unique(&mut kf.support, v, line_no, "support")?;
                    }
                    "target" => {
                        let joint = cursor.joint("joint name")?;
                        let angle = cursor.degrees("target angle")?;
                        if kf.targets.get(joint).is_some() {
                            return Err(err(line_no, format!("duplicate target for {joint}")));
                        }
                        kf.targets.set(joint, angle);
                    }
                    "torso_pitch_range" => {
                        let min = cursor.degrees("min")?;
                        let max = cursor.degrees("max")?;
                        unique(
                            &mut kf.torso_pitch_range,
                            AngleRange::new(min, max),
                            line_no,
                            "torso_pitch_range",
                        )?;
                    }
                    "torso_roll_range" => {
                        let min = cursor.degrees("min")?;
                        let max = cursor.degrees("max")?;
                        unique(
                            &mut kf.torso_roll_range,
                            AngleRange::new(min, max),
                            line_no,
                            "torso_roll_range",
                        )?;
                    }
                    "wait" => {
                        let what = cursor.next("`torso_pitch`")?;
                        if what != "torso_pitch" {
                            return Err(err(line_no, format!("expected `torso_pitch`, found `{what}`")));
                        }
                        let min = cursor.degrees("min")?;
                        let max = cursor.degrees("max")?;
                        let key = cursor.next("`max_ms`")?;
                        if key != "max_ms" {
                            return Err(err(line_no, format!("expected `max_ms`, found `{key}`")));
                        }
                        let max_wait_ms = cursor.u32("max_ms value")?;
                        unique(
                            &mut kf.wait,
                            WaitCondition {
                                torso_pitch: AngleRange::new(min, max),
                                max_wait_ms,
                            },
                            line_no,
                            "wait",
                        )?;
                        cursor.finish()?;
                        continue;
                    }
                    "check_arms" => {
                        let check = parse_check_arms(&mut cursor)?;
                        unique(&mut kf.arm_check, check, line_no, "check_arms")?;
                        cursor.finish()?;
                        continue;
                    }
                    "compensate" => {
                        let rule = parse_compensate(&mut cursor)?;
                        kf.compensation_rules.push(rule);
                        // `->` targets consume the rest of the line
                        continue;
                    }
                    "oscillate" => {
                        let v = match cursor.next("on|off")? {
                            "on" => true,
                            "off" => false,
                            other => return Err(err(line_no, format!("expected on|off, found `{other}`"))),
                        };
                        unique(&mut kf.oscillate, v, line_no, "oscillate")?;
                    }
                    "balance" => {
                        let what = cursor.next("`com`")?;
                        if what != "com" {
                            return Err(err(line_no, format!("expected `com`, found `{what}`")));
                        }
                        let x_mm = cursor.f64("com x")?;
                        let y_mm = cursor.f64("com y")?;
                        unique(&mut kf.balance_ref, ComPoint { x_mm, y_mm }, line_no, "balance")?;
                    }
                    other => {
                        return Err(err(line_no, format!("unknown key `{other}` in keyframe")));
                    }
                }
                cursor.finish()?;
            }
        }
    }

    if let Some(open) = draft {
        return Err(err(open.line, format!("keyframe `{}` is missing `end`", open.name)));
    }
    let (name, entry) = header.ok_or_else(|| err(1, "empty script: missing `motion` line"))?;
    if keyframes.is_empty() {
        return Err(err(1, "script needs at least one keyframe"));
    }
    Ok(MotionScript {
        name,
        entry,
        keyframes,
        max_consecutive_failures: max_failures.unwrap_or(3),
    })
}

/// Parse and validate; any diagnostic is promoted to an error.
pub fn parse_script(text: &str) -> Result<MotionScript, ScriptError> {
    let script = parse_script_raw(text)?;
    let findings = validate_script(&script, &JointLimits::default());
    if let Some(first) = findings.first() {
        return Err(ScriptError {
            line: 0,
            message: format!("{} validation finding(s), first: {first}", findings.len()),
        });
    }
    Ok(script)
}
