//! Engine configuration: defaults, flat key=value files and overrides.

use std::path::Path;

use crate::balance::BalanceConfig;

/// Ablation switches. All-on is the full system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VariantFlags {
    pub compensation: bool,
    pub balancing: bool,
    pub oscillation: bool,
    pub waiting: bool,
}

impl Default for VariantFlags {
    fn default() -> Self {
        VariantFlags {
            compensation: true,
            balancing: true,
            oscillation: true,
            waiting: true,
        }
    }
}

impl VariantFlags {
    pub fn full() -> Self {
        Self::default()
    }

    /// Short token used in batch reports and trace headers.
    pub fn label(&self) -> String {
        if *self == VariantFlags::full() {
            return "full".to_string();
        }
        let mut parts = Vec::new();
        if !self.compensation {
            parts.push("nocomp");
        }
        if !self.balancing {
            parts.push("nobal");
        }
        if !self.oscillation {
            parts.push("noosc");
        }
        if !self.waiting {
            parts.push("nowait");
        }
        if parts.is_empty() {
            "full".to_string()
        } else {
            parts.join("+")
        }
    }

    /// Parse a variant token (`full`, `nocomp`, `nobal`, `noosc`, `nowait`,
    /// or combinations joined with `+`).
    pub fn parse(token: &str) -> Result<Self, ConfigError> {
        let mut flags = VariantFlags::full();
        if token == "full" {
            return Ok(flags);
        }
        for part in token.split('+') {
            match part {
                "nocomp" => flags.compensation = false,
                "nobal" => flags.balancing = false,
                "noosc" => flags.oscillation = false,
                "nowait" => flags.waiting = false,
                other => {
                    return Err(ConfigError::Value {
                        key: "variant".into(),
                        message: format!("unknown variant `{other}`"),
                    })
                }
            }
        }
        Ok(flags)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("config key `{key}`: {message}")]
    Value { key: String, message: String },
}

/// All tunables of the engine. Values are kept in natural units (radians,
/// ms); the file keys use degrees where the name says so.
#[derive(Debug, Clone)]
pub struct EngineConfig {
    /// Control cycle, ms.
    pub cycle_ms: u32,
    /// Motor delay in cycles.
    pub delay_cycles: usize,
    /// Consecutive failures tolerated before giving up (script value wins).
    pub max_failures: u32,
    /// |pitch| beyond which the robot counts as lying facedown/faceup, rad.
    pub facedown_threshold: f64,
    /// |roll| beyond which the robot counts as lying on the side, rad.
    pub side_threshold: f64,
    /// Duration of the protective low-stiffness phase, ms.
    pub breakup_duration_ms: u32,
    pub balance: BalanceConfig,
    /// Peak ankle-roll oscillation, rad.
    pub oscillation_amplitude: f64,
    /// Names of the stand-up motions in the script library; when absent
    /// the first script with the matching entry condition is used.
    pub front_script: String,
    pub back_script: String,
    /// Names of the side-recovery motions in the script library.
    pub side_script_left: String,
    pub side_script_right: String,
    /// A joint counts as dysfunctional after its error exceeds this for
    /// `broken_joint_hold_ms` without interruption, rad (strictly above).
    pub broken_joint_error: f64,
    pub broken_joint_hold_ms: u32,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            cycle_ms: 12,
            delay_cycles: 3,
            max_failures: 3,
            facedown_threshold: 60.0f64.to_radians(),
            side_threshold: 60.0f64.to_radians(),
            breakup_duration_ms: 800,
            balance: BalanceConfig::default(),
            oscillation_amplitude: 1.0f64.to_radians(),
            front_script: "front_up".to_string(),
            back_script: "back_up".to_string(),
            side_script_left: "side_left".to_string(),
            side_script_right: "side_right".to_string(),
            broken_joint_error: 30.0f64.to_radians(),
            broken_joint_hold_ms: 2000,
        }
    }
}

impl EngineConfig {
    /// Apply one `key = value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = |message: String| ConfigError::Value {
            key: key.to_string(),
            message,
        };
        let as_f64 = |value: &str| {
            value
                .parse::<f64>()
                .map_err(|_| bad(format!("invalid number `{value}`")))
        };
        let as_u32 = |value: &str| {
            value
                .parse::<u32>()
                .map_err(|_| bad(format!("invalid integer `{value}`")))
        };
        match key {
            "cycle_ms" => {
                let v = as_u32(value)?;
                if v == 0 {
                    return Err(bad("cycle_ms must be positive".into()));
                }
                self.cycle_ms = v;
            }
            "delay_cycles" => {
                let v = as_u32(value)? as usize;
                if v == 0 {
                    return Err(bad("delay_cycles must be positive".into()));
                }
                self.delay_cycles = v;
            }
            "max_failures" => {
                let v = as_u32(value)?;
                if v == 0 {
                    return Err(bad("max_failures must be positive".into()));
                }
                self.max_failures = v;
            }
            "thresholds.facedown_deg" => self.facedown_threshold = as_f64(value)?.to_radians(),
            "thresholds.side_deg" => self.side_threshold = as_f64(value)?.to_radians(),
            "breakup.duration_ms" => self.breakup_duration_ms = as_u32(value)?,
            "balance.kp" => self.balance.kp = as_f64(value)?,
            "balance.kd" => self.balance.kd = as_f64(value)?,
            "balance.alpha" => {
                let v = as_f64(value)?;
                if v < 1.0 {
                    return Err(bad("alpha must be >= 1".into()));
                }
                self.balance.alpha = v;
            }
            "balance.clamp_deg" => self.balance.clamp = as_f64(value)?.to_radians(),
            "balance.deadband_mm" => self.balance.deadband_mm = as_f64(value)?,
            "oscillation.amplitude_deg" => {
                self.oscillation_amplitude = as_f64(value)?.to_radians()
            }
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Parse a flat `key = value` file (`#` comments).
    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.apply_text(&text)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(ConfigError::Syntax { line: idx + 1 })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn cycle_seconds(&self) -> f64 {
        self.cycle_ms as f64 / 1000.0
    }

    /// Canonical `key = value` rendering of all file-visible keys.
    /// `apply_text` of the output reproduces this configuration.
    pub fn to_text(&self) -> String {
        format!(
            "cycle_ms = {}\n\
             delay_cycles = {}\n\
             max_failures = {}\n\
             thresholds.facedown_deg = {}\n\
             thresholds.side_deg = {}\n\
             breakup.duration_ms = {}\n\
             balance.kp = {}\n\
             balance.kd = {}\n\
             balance.alpha = {}\n\
             balance.clamp_deg = {}\n\
             balance.deadband_mm = {}\n\
             oscillation.amplitude_deg = {}\n",
            self.cycle_ms,
            self.delay_cycles,
            self.max_failures,
            self.facedown_threshold.to_degrees(),
            self.side_threshold.to_degrees(),
            self.breakup_duration_ms,
            self.balance.kp,
            self.balance.kd,
            self.balance.alpha,
            self.balance.clamp.to_degrees(),
            self.balance.deadband_mm,
            self.oscillation_amplitude.to_degrees(),
        )
    }
}
