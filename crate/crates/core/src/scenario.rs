//! Test scenarios: initial posture, ground tilt, sensor noise, servo
//! faults and external pushes. A scenario plus its seed fully determines
//! every stochastic draw of a run.

use std::str::FromStr;

use crate::joints::JointId;

/// Posture the robot starts the run in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialPosture {
    Front,
    Back,
    SideLeft,
    SideRight,
}

impl InitialPosture {
    pub fn token(self) -> &'static str {
        match self {
            InitialPosture::Front => "front",
            InitialPosture::Back => "back",
            InitialPosture::SideLeft => "side_left",
            InitialPosture::SideRight => "side_right",
        }
    }
}

/// How a stuck servo holds its position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StuckMode {
    /// Freeze at whatever position the joint has when the fault engages.
    HoldCurrent,
    /// Move to (at servo speed) and then hold a fixed position, radians.
    At(f64),
}

/// When a fault lets go of the joint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FaultUntil {
    /// Release at this cycle.
    Cycle(u64),
    /// Release once the servo error drops below the threshold again,
    /// after having reached it at least once while stuck.
    ErrorBelow(f64),
    /// Release the moment the servo error exceeds the threshold
    /// (break-away under load). Used by generated scenarios to bound the
    /// deviation a stuck joint can accumulate.
    ErrorAbove(f64),
}

/// One scheduled servo fault.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fault {
    pub joint: JointId,
    pub stuck: StuckMode,
    pub from_cycle: u64,
    pub until: FaultUntil,
    /// Stick-slip bound: `None` holds rigidly; `Some(m)` lets the joint
    /// drag behind its command at up to `m` radians of deviation.
    pub slip: Option<f64>,
}

/// External pitch-rate impulse, e.g. another robot walking into us.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Push {
    pub at_ms: u64,
    pub pitch_rad_s: f64,
}

/// Complete description of one simulated run's environment.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub initial: InitialPosture,
    /// Sagittal ground tilt, radians.
    pub ground_tilt: f64,
    pub seed: u64,
    /// Std deviation of measured-position noise, radians.
    pub noise_sigma: f64,
    pub faults: Vec<Fault>,
    pub pushes: Vec<Push>,
}

impl Scenario {
    /// Fault-free level-ground scenario.
    pub fn nominal(name: &str, initial: InitialPosture) -> Scenario {
        Scenario {
            name: name.to_string(),
            initial,
            ground_tilt: 0.0,
            seed: 0,
            noise_sigma: 0.0,
            faults: Vec::new(),
            pushes: Vec::new(),
        }
    }
}

/// Parse failure, pointing at the offending line.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct ScenarioError {
    pub line: usize,
    pub message: String,
}

fn err(line: usize, message: impl Into<String>) -> ScenarioError {
    ScenarioError {
        line,
        message: message.into(),
    }
}

/// Parse the line-oriented scenario format:
///
/// ```text
/// scenario <name>
/// initial front|back|side_left|side_right
/// ground_tilt_deg <float>
/// seed <uint64>
/// noise_deg <float>
/// fault <Joint> hold from_cycle <n> until_cycle <n>|release_on_error_below <deg>
/// push at_ms <n> pitch_rad_s <float>
/// end
/// ```
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let mut name: Option<String> = None;
    let mut initial: Option<InitialPosture> = None;
    let mut ground_tilt = 0.0;
    let mut seed = 0u64;
    let mut noise_sigma = 0.0;
    let mut faults = Vec::new();
    let mut pushes = Vec::new();
    let mut ended = false;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if ended {
            return Err(err(line_no, "content after `end`"));
        }
        let mut tokens = content.split_whitespace();
        let mut next = |what: &str| {
            tokens
                .next()
                .ok_or_else(|| err(line_no, format!("missing {what}")))
        };
        match next("keyword")? {
            "scenario" => name = Some(next("scenario name")?.to_string()),
            "initial" => {
                initial = Some(match next("posture")? {
                    "front" => InitialPosture::Front,
                    "back" => InitialPosture::Back,
                    "side_left" => InitialPosture::SideLeft,
                    "side_right" => InitialPosture::SideRight,
                    other => return Err(err(line_no, format!("unknown posture `{other}`"))),
                })
            }
            "ground_tilt_deg" => {
                let t = next("tilt")?;
                ground_tilt = f64::from_str(t)
                    .map_err(|_| err(line_no, format!("invalid tilt `{t}`")))?
                    .to_radians();
            }
            "seed" => {
                let t = next("seed")?;
                seed = u64::from_str(t).map_err(|_| err(line_no, format!("invalid seed `{t}`")))?;
            }
            "noise_deg" => {
                let t = next("noise")?;
                noise_sigma = f64::from_str(t)
                    .map_err(|_| err(line_no, format!("invalid noise `{t}`")))?
                    .to_radians();
            }
            "fault" => {
                let joint = next("joint")?
                    .parse::<JointId>()
                    .map_err(|e| err(line_no, e.to_string()))?;
                let mode = next("`hold`")?;
                if mode != "hold" {
                    return Err(err(line_no, format!("unknown fault mode `{mode}`")));
                }
                let key = next("`from_cycle`")?;
                if key != "from_cycle" {
                    return Err(err(line_no, format!("expected `from_cycle`, found `{key}`")));
                }
                let t = next("cycle")?;
                let from_cycle =
                    u64::from_str(t).map_err(|_| err(line_no, format!("invalid cycle `{t}`")))?;
                let until = match next("release condition")? {
                    "until_cycle" => {
                        let t = next("cycle")?;
                        FaultUntil::Cycle(
                            u64::from_str(t)
                                .map_err(|_| err(line_no, format!("invalid cycle `{t}`")))?,
                        )
                    }
                    "release_on_error_below" => {
                        let t = next("threshold")?;
                        FaultUntil::ErrorBelow(
                            f64::from_str(t)
                                .map_err(|_| err(line_no, format!("invalid threshold `{t}`")))?
                                .to_radians(),
                        )
                    }
                    other => return Err(err(line_no, format!("unknown release `{other}`"))),
                };
                faults.push(Fault {
                    joint,
                    stuck: StuckMode::HoldCurrent,
                    from_cycle,
                    until,
                    slip: None,
                });
            }
            "push" => {
                let key = next("`at_ms`")?;
                if key != "at_ms" {
                    return Err(err(line_no, format!("expected `at_ms`, found `{key}`")));
                }
                let t = next("time")?;
                let at_ms =
                    u64::from_str(t).map_err(|_| err(line_no, format!("invalid time `{t}`")))?;
                let key = next("`pitch_rad_s`")?;
                if key != "pitch_rad_s" {
                    return Err(err(line_no, format!("expected `pitch_rad_s`, found `{key}`")));
                }
                let t = next("impulse")?;
                let pitch_rad_s =
                    f64::from_str(t).map_err(|_| err(line_no, format!("invalid impulse `{t}`")))?;
                pushes.push(Push { at_ms, pitch_rad_s });
            }
            "end" => ended = true,
            other => return Err(err(line_no, format!("unknown keyword `{other}`"))),
        }
        if let Some(extra) = tokens.next() {
            return Err(err(line_no, format!("unexpected token `{extra}`")));
        }
    }

    Ok(Scenario {
        name: name.ok_or_else(|| err(1, "missing `scenario` line"))?,
        initial: initial.ok_or_else(|| err(1, "missing `initial` line"))?,
        ground_tilt,
        seed,
        noise_sigma,
        faults,
        pushes,
    })
}
