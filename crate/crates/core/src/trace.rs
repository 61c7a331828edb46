//! Per-cycle trace recording, the CSV format and trace replay.
//!
//! Columns: `cycle, time_ms, mode, keyframe`, then per joint
//! `req_<J>, cmd_<J>, meas_<J>` (radians, 6 decimals), then `torso_pitch,
//! torso_roll, com_x, com_y`, then `delta_<J>` per watched joint. Header
//! comment lines carry everything needed to re-run the engine on the
//! recorded inputs: the variant, the engine config and a hash of the
//! scripts.
//!
//! Runs quantize engine inputs to the same six decimals the file stores,
//! so replaying a trace feeds the engine byte-identical inputs.

use std::path::Path;

use crate::config::{EngineConfig, VariantFlags};
use crate::engine::{CycleInput, Engine, Mode};
use crate::joints::{JointId, JointVector};
use crate::script::{ComPoint, ScriptLibrary};

/// Quantize to the trace precision (1e-6 rad / mm).
pub fn quantize(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// One recorded cycle.
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub cycle: u64,
    pub time_ms: u64,
    pub mode: Mode,
    /// Keyframe name or `-` outside keyframes.
    pub keyframe: String,
    /// Uncompensated interpolation base.
    pub base: JointVector,
    /// Final command sent to the plant.
    pub requested: JointVector,
    pub measured: JointVector,
    pub torso_pitch: f64,
    pub torso_roll: f64,
    pub com: ComPoint,
    /// Applied error per watched joint, aligned with `Trace::watched`.
    pub deltas: Vec<f64>,
}

/// Everything a replay needs besides the rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceMeta {
    pub scenario: String,
    pub variant: String,
    pub scripts_dir: String,
    pub scripts_hash: u64,
    pub config_text: String,
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub meta: TraceMeta,
    pub watched: Vec<JointId>,
    pub rows: Vec<TraceRow>,
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("trace line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("trace was recorded against different scripts (hash mismatch)")]
    ScriptMismatch,
    #[error("trace config: {0}")]
    Config(String),
}

fn schema(line: usize, message: impl Into<String>) -> TraceError {
    TraceError::Schema {
        line,
        message: message.into(),
    }
}

impl Trace {
    pub fn new(meta: TraceMeta, watched: Vec<JointId>) -> Trace {
        Trace {
            meta,
            watched,
            rows: Vec::new(),
        }
    }

    fn header_line(&self) -> String {
        let mut cols = vec![
            "cycle".to_string(),
            "time_ms".to_string(),
            "mode".to_string(),
            "keyframe".to_string(),
        ];
        for j in JointId::all() {
            cols.push(format!("req_{j}"));
            cols.push(format!("cmd_{j}"));
            cols.push(format!("meas_{j}"));
        }
        cols.push("torso_pitch".to_string());
        cols.push("torso_roll".to_string());
        cols.push("com_x".to_string());
        cols.push("com_y".to_string());
        for j in &self.watched {
            cols.push(format!("delta_{j}"));
        }
        cols.join(",")
    }

    /// Render the whole trace; byte-stable for identical runs.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("# standup-sim trace v1\n");
        out.push_str(&format!("# scenario: {}\n", self.meta.scenario));
        out.push_str(&format!("# variant: {}\n", self.meta.variant));
        out.push_str(&format!("# scripts_dir: {}\n", self.meta.scripts_dir));
        out.push_str(&format!("# scripts_hash: {:016x}\n", self.meta.scripts_hash));
        for line in self.meta.config_text.lines() {
            out.push_str(&format!("# cfg: {line}\n"));
        }
        out.push_str(&self.header_line());
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}",
                row.cycle,
                row.time_ms,
                row.mode.name(),
                row.keyframe
            ));
            for j in JointId::all() {
                out.push_str(&format!(
                    ",{:.6},{:.6},{:.6}",
                    row.base[j], row.requested[j], row.measured[j]
                ));
            }
            out.push_str(&format!(
                ",{:.6},{:.6},{:.6},{:.6}",
                row.torso_pitch, row.torso_roll, row.com.x_mm, row.com.y_mm
            ));
            for d in &row.deltas {
                out.push_str(&format!(",{d:.6}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_file(&self, path: &Path) -> Result<(), TraceError> {
        std::fs::write(path, self.to_csv()).map_err(|source| TraceError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn read_file(path: &Path) -> Result<Trace, TraceError> {
        let text = std::fs::read_to_string(path).map_err(|source| TraceError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Trace::parse_csv(&text)
    }

    pub fn parse_csv(text: &str) -> Result<Trace, TraceError> {
        let mut scenario = None;
        let mut variant = None;
        let mut scripts_dir = None;
        let mut scripts_hash = None;
        let mut config_lines = Vec::new();
        let mut header: Option<(usize, &str)> = None;
        let mut rows = Vec::new();
        let mut watched: Vec<JointId> = Vec::new();

        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            if let Some(comment) = line.strip_prefix('#') {
                let comment = comment.trim();
                if let Some(v) = comment.strip_prefix("scenario: ") {
                    scenario = Some(v.to_string());
                } else if let Some(v) = comment.strip_prefix("variant: ") {
                    variant = Some(v.to_string());
                } else if let Some(v) = comment.strip_prefix("scripts_dir: ") {
                    scripts_dir = Some(v.to_string());
                } else if let Some(v) = comment.strip_prefix("scripts_hash: ") {
                    scripts_hash = Some(
                        u64::from_str_radix(v, 16)
                            .map_err(|_| schema(line_no, "bad scripts_hash"))?,
                    );
                } else if let Some(v) = comment.strip_prefix("cfg: ") {
                    config_lines.push(v.to_string());
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            match header {
                None => {
                    // Column header: derive the watched joint set from it.
                    for col in line.split(',') {
                        if let Some(name) = col.strip_prefix("delta_") {
                            watched.push(
                                name.parse::<JointId>()
                                    .map_err(|e| schema(line_no, e.to_string()))?,
                            );
                        }
                    }
                    header = Some((line_no, line));
                }
                Some(_) => {
                    rows.push(parse_row(line, line_no, watched.len())?);
                }
            }
        }

        let (header_line_no, header_text) = header.ok_or_else(|| schema(0, "missing header"))?;
        let meta = TraceMeta {
            scenario: scenario.ok_or_else(|| schema(header_line_no, "missing scenario"))?,
            variant: variant.ok_or_else(|| schema(header_line_no, "missing variant"))?,
            scripts_dir: scripts_dir.unwrap_or_else(|| "-".to_string()),
            scripts_hash: scripts_hash.ok_or_else(|| schema(header_line_no, "missing scripts_hash"))?,
            config_text: config_lines.join("\n"),
        };
        let trace = Trace {
            meta,
            watched,
            rows,
        };
        if header_text != trace.header_line() {
            return Err(schema(header_line_no, "column set does not match this build"));
        }
        Ok(trace)
    }
}

fn parse_row(line: &str, line_no: usize, watched: usize) -> Result<TraceRow, TraceError> {
    let fields: Vec<&str> = line.split(',').collect();
    let expected = 4 + crate::joints::JOINT_COUNT * 3 + 4 + watched;
    if fields.len() != expected {
        return Err(schema(
            line_no,
            format!("expected {expected} fields, found {}", fields.len()),
        ));
    }
    let f64_at = |i: usize| -> Result<f64, TraceError> {
        fields[i]
            .parse::<f64>()
            .map_err(|_| schema(line_no, format!("bad number `{}`", fields[i])))
    };
    let cycle = fields[0]
        .parse::<u64>()
        .map_err(|_| schema(line_no, "bad cycle"))?;
    let time_ms = fields[1]
        .parse::<u64>()
        .map_err(|_| schema(line_no, "bad time_ms"))?;
    let mode = fields[2]
        .parse::<Mode>()
        .map_err(|e| schema(line_no, e))?;
    let keyframe = fields[3].to_string();
    let mut base = JointVector::zeros();
    let mut requested = JointVector::zeros();
    let mut measured = JointVector::zeros();
    let mut i = 4;
    for j in JointId::all() {
        base[j] = f64_at(i)?;
        requested[j] = f64_at(i + 1)?;
        measured[j] = f64_at(i + 2)?;
        i += 3;
    }
    let torso_pitch = f64_at(i)?;
    let torso_roll = f64_at(i + 1)?;
    let com = ComPoint {
        x_mm: f64_at(i + 2)?,
        y_mm: f64_at(i + 3)?,
    };
    i += 4;
    let mut deltas = Vec::with_capacity(watched);
    for k in 0..watched {
        deltas.push(f64_at(i + k)?);
    }
    Ok(TraceRow {
        cycle,
        time_ms,
        mode,
        keyframe,
        base,
        requested,
        measured,
        torso_pitch,
        torso_roll,
        com,
        deltas,
    })
}

/// Result of re-running the engine over a recorded trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReplayOutcome {
    Identical,
    Diverged {
        cycle: u64,
        detail: String,
    },
}

/// Re-run the engine on the recorded inputs and compare the outputs.
///
/// The engine configuration and the variant come from the trace header;
/// the scripts must hash to the recorded value.
pub fn replay(trace: &Trace, library: &ScriptLibrary) -> Result<ReplayOutcome, TraceError> {
    if library.content_hash() != trace.meta.scripts_hash {
        return Err(TraceError::ScriptMismatch);
    }
    let mut config = EngineConfig::default();
    config
        .apply_text(&trace.meta.config_text)
        .map_err(|e| TraceError::Config(e.to_string()))?;
    let flags = VariantFlags::parse(&trace.meta.variant)
        .map_err(|e| TraceError::Config(e.to_string()))?;
    let mut engine = Engine::new(library.clone(), config, flags);

    for row in &trace.rows {
        let input = CycleInput {
            measured: row.measured,
            torso_pitch: row.torso_pitch,
            torso_roll: row.torso_roll,
            com: row.com,
            cycle: row.cycle,
        };
        let out = engine.step(&input);
        if out.mode != row.mode {
            return Ok(ReplayOutcome::Diverged {
                cycle: row.cycle,
                detail: format!("mode {} vs {}", out.mode.name(), row.mode.name()),
            });
        }
        let keyframe = out.keyframe.as_deref().unwrap_or("-");
        if keyframe != row.keyframe {
            return Ok(ReplayOutcome::Diverged {
                cycle: row.cycle,
                detail: format!("keyframe {} vs {}", keyframe, row.keyframe),
            });
        }
        for j in JointId::all() {
            let got = format!("{:.6}", out.requested[j]);
            let want = format!("{:.6}", row.requested[j]);
            if got != want {
                return Ok(ReplayOutcome::Diverged {
                    cycle: row.cycle,
                    detail: format!("cmd_{j} {got} vs {want}"),
                });
            }
        }
    }
    Ok(ReplayOutcome::Identical)
}
