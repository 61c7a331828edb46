//! Closed-loop execution of engine plus plant, and seeded batches for
//! paired variant comparison.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{EngineConfig, VariantFlags};
use crate::engine::{CycleInput, Engine, Mode};
use crate::joints::{JointId, JointVector};
use crate::kinematics::LinkTable;
use crate::plant::{Plant, PlantConfig};
use crate::scenario::{Fault, FaultUntil, InitialPosture, Push, Scenario, StuckMode};
use crate::script::ScriptLibrary;
use crate::trace::{quantize, Trace, TraceMeta, TraceRow};

/// Terminal result of a run; breakups on the way are state transitions,
/// not outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Finished,
    HelpMe,
    CycleCapExceeded,
}

impl Outcome {
    pub fn name(self) -> &'static str {
        match self {
            Outcome::Finished => "finished",
            Outcome::HelpMe => "help_me",
            Outcome::CycleCapExceeded => "cycle_cap_exceeded",
        }
    }
}

/// Everything a run needs besides scenario and scripts.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub engine: EngineConfig,
    pub plant: PlantConfig,
    pub flags: VariantFlags,
    pub max_cycles: u64,
    /// Recorded into trace headers so replays can find the scripts.
    pub scripts_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            engine: EngineConfig::default(),
            plant: PlantConfig::default(),
            flags: VariantFlags::full(),
            max_cycles: 20_000,
            scripts_dir: "-".to_string(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub outcome: Outcome,
    pub cycles: u64,
    /// Times the engine entered BreakUp.
    pub breakups: u32,
    /// Joint the engine flagged as dysfunctional, if any.
    pub broken_joint: Option<JointId>,
    /// Commands the plant rejected for being out of range; nonzero
    /// signals an engine clamping bug.
    pub rejected_commands: u64,
    pub trace: Trace,
}

/// Run one scenario to its terminal mode or the cycle cap.
///
/// Engine inputs are quantized to the trace precision, so the recorded
/// trace replays bit-exactly.
pub fn run_scenario(
    scenario: &Scenario,
    library: &ScriptLibrary,
    table: &LinkTable,
    cfg: &RunConfig,
) -> RunResult {
    let mut engine = Engine::new(library.clone(), cfg.engine.clone(), cfg.flags);
    let mut plant = Plant::new(
        table.clone(),
        scenario,
        cfg.plant.clone(),
        cfg.engine.delay_cycles,
        cfg.engine.cycle_ms,
    );
    let meta = TraceMeta {
        scenario: scenario.name.clone(),
        variant: cfg.flags.label(),
        scripts_dir: cfg.scripts_dir.clone(),
        scripts_hash: library.content_hash(),
        config_text: cfg.engine.to_text().trim_end().to_string(),
    };
    let mut trace = Trace::new(meta, library.watched_joints());
    let mut breakups = 0u32;
    let mut prev_mode = Mode::DecideAction;

    for cycle in 0..cfg.max_cycles {
        let measured_raw = plant.measured();
        let measured = JointVector::from_fn(|j| quantize(measured_raw[j]));
        let (pitch, roll) = plant.orientation();
        let com_raw = plant.com_ground();
        let input = CycleInput {
            measured,
            torso_pitch: quantize(pitch),
            torso_roll: quantize(roll),
            com: crate::script::ComPoint {
                x_mm: quantize(com_raw.x_mm),
                y_mm: quantize(com_raw.y_mm),
            },
            cycle,
        };
        let out = engine.step(&input);
        plant.step(&out.requested, &out.stiffness, out.support);

        if out.mode == Mode::BreakUp && prev_mode != Mode::BreakUp {
            breakups += 1;
        }
        prev_mode = out.mode;

        trace.rows.push(TraceRow {
            cycle,
            time_ms: cycle * cfg.engine.cycle_ms as u64,
            mode: out.mode,
            keyframe: out.keyframe.clone().unwrap_or_else(|| "-".to_string()),
            base: out.base,
            requested: out.requested,
            measured: input.measured,
            torso_pitch: input.torso_pitch,
            torso_roll: input.torso_roll,
            com: input.com,
            deltas: out.deltas.iter().map(|(_, d)| *d).collect(),
        });

        match out.mode {
            Mode::Finished => {
                return RunResult {
                    outcome: Outcome::Finished,
                    cycles: cycle + 1,
                    breakups,
                    broken_joint: engine.broken_joint(),
                    rejected_commands: plant.rejected_commands(),
                    trace,
                }
            }
            Mode::HelpMe => {
                return RunResult {
                    outcome: Outcome::HelpMe,
                    cycles: cycle + 1,
                    breakups,
                    broken_joint: engine.broken_joint(),
                    rejected_commands: plant.rejected_commands(),
                    trace,
                }
            }
            _ => {}
        }
    }

    RunResult {
        outcome: Outcome::CycleCapExceeded,
        cycles: cfg.max_cycles,
        breakups,
        broken_joint: engine.broken_joint(),
        rejected_commands: plant.rejected_commands(),
        trace,
    }
}

/// Parameters of the randomized scenario generator.
#[derive(Debug, Clone)]
pub struct BatchConfig {
    pub n: usize,
    pub seed: u64,
    /// Bound on how far a stuck joint may deviate before it breaks free,
    /// radians.
    pub max_stuck: f64,
    /// Bound on the sagittal ground tilt, radians.
    pub max_tilt: f64,
    pub pushes: bool,
}

impl Default for BatchConfig {
    fn default() -> Self {
        BatchConfig {
            n: 200,
            seed: 1,
            max_stuck: 20.0f64.to_radians(),
            max_tilt: 3.0f64.to_radians(),
            pushes: true,
        }
    }
}

/// Seed derivation: one scenario seed per index, independent of every
/// other index, so all variants see the identical scenario set.
pub fn scenario_seed(batch_seed: u64, index: u64) -> u64 {
    // splitmix64
    let mut z = batch_seed
        .wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Joints the generator may jam, weighted toward the hip yaw pitch, which
/// displaces both legs at once.
const FAULT_JOINTS: [JointId; 12] = [
    JointId::HipYawPitch,
    JointId::HipYawPitch,
    JointId::HipYawPitch,
    JointId::HipYawPitch,
    JointId::HipYawPitch,
    JointId::LHipPitch,
    JointId::RHipPitch,
    JointId::LKneePitch,
    JointId::RKneePitch,
    JointId::LAnklePitch,
    JointId::RAnklePitch,
    JointId::LShoulderPitch,
];

/// Generate `n` seeded random scenarios: stuck joints that break free
/// beyond the configured magnitude, ground tilt, measurement noise and
/// optional pushes.
pub fn generate_scenarios(cfg: &BatchConfig) -> Vec<Scenario> {
    (0..cfg.n)
        .map(|i| {
            let seed = scenario_seed(cfg.seed, i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let initial = match rng.random_range(0..10u32) {
                0..=4 => InitialPosture::Back,
                5..=8 => InitialPosture::Front,
                _ => {
                    if rng.random::<bool>() {
                        InitialPosture::SideLeft
                    } else {
                        InitialPosture::SideRight
                    }
                }
            };
            let ground_tilt = rng.random_range(-cfg.max_tilt..=cfg.max_tilt);
            let noise_sigma = rng.random_range(0.0..0.3f64.to_radians());
            let fault_count = match rng.random_range(0..4u32) {
                0 => 0,
                1 | 2 => 1,
                _ => 2,
            };
            let faults = (0..fault_count)
                .map(|_| {
                    let joint = FAULT_JOINTS[rng.random_range(0..FAULT_JOINTS.len())];
                    let from_cycle = rng.random_range(100..450u64);
                    let magnitude = rng.random_range(6.0f64.to_radians()..=cfg.max_stuck);
                    // Worn joints often stay bad: a third of the faults
                    // outlast any plausible retry budget.
                    let duration = if rng.random_range(0..3u32) == 0 {
                        100_000
                    } else {
                        rng.random_range(300..2000u64)
                    };
                    Fault {
                        joint,
                        stuck: StuckMode::HoldCurrent,
                        from_cycle,
                        until: FaultUntil::Cycle(from_cycle + duration),
                        slip: Some(magnitude),
                    }
                })
                .collect();
            let push_count = if cfg.pushes { rng.random_range(0..=2u32) } else { 0 };
            let pushes = (0..push_count)
                .map(|_| Push {
                    at_ms: rng.random_range(500..6000u64),
                    pitch_rad_s: rng.random_range(-0.35..=0.35),
                })
                .collect();
            Scenario {
                name: format!("batch_{i:04}"),
                initial,
                ground_tilt,
                seed,
                noise_sigma,
                faults,
                pushes,
            }
        })
        .collect()
}

/// One run inside a batch.
#[derive(Debug, Clone)]
pub struct BatchRun {
    pub scenario_index: usize,
    pub variant: String,
    pub outcome: Outcome,
    pub cycles: u64,
    pub breakups: u32,
    pub had_fault: bool,
}

/// Aggregates per variant.
#[derive(Debug, Clone)]
pub struct VariantStats {
    pub variant: String,
    pub tries: usize,
    pub successes: usize,
    pub help_mes: usize,
    pub cycle_caps: usize,
    pub breakups: u32,
    pub mean_cycles_to_finish: f64,
    /// Failures restricted to scenarios that carry at least one fault.
    pub failures_on_faulty: usize,
}

impl VariantStats {
    pub fn success_rate(&self) -> f64 {
        if self.tries == 0 {
            0.0
        } else {
            self.successes as f64 / self.tries as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchReport {
    pub scenarios: usize,
    pub seed: u64,
    pub variants: Vec<VariantStats>,
    pub runs: Vec<BatchRun>,
}

impl BatchReport {
    pub fn stats_for(&self, label: &str) -> Option<&VariantStats> {
        self.variants.iter().find(|v| v.variant == label)
    }
}

/// Run every variant over the identical scenario set (paired comparison).
///
/// `inspect` sees each finished run with its trace before the trace is
/// dropped, so callers can analyze or persist traces without the batch
/// holding them all in memory.
pub fn run_batch_with(
    scenarios: &[Scenario],
    variants: &[VariantFlags],
    library: &ScriptLibrary,
    table: &LinkTable,
    base: &RunConfig,
    seed: u64,
    mut inspect: impl FnMut(&BatchRun, &RunResult),
) -> BatchReport {
    let mut runs = Vec::with_capacity(scenarios.len() * variants.len());
    let mut stats: Vec<VariantStats> = variants
        .iter()
        .map(|v| VariantStats {
            variant: v.label(),
            tries: 0,
            successes: 0,
            help_mes: 0,
            cycle_caps: 0,
            breakups: 0,
            mean_cycles_to_finish: 0.0,
            failures_on_faulty: 0,
        })
        .collect();
    let mut finish_cycles: Vec<Vec<u64>> = vec![Vec::new(); variants.len()];

    for (scenario_index, scenario) in scenarios.iter().enumerate() {
        for (variant_index, flags) in variants.iter().enumerate() {
            let cfg = RunConfig {
                flags: *flags,
                ..base.clone()
            };
            let result = run_scenario(scenario, library, table, &cfg);
            let run = BatchRun {
                scenario_index,
                variant: flags.label(),
                outcome: result.outcome,
                cycles: result.cycles,
                breakups: result.breakups,
                had_fault: !scenario.faults.is_empty(),
            };
            inspect(&run, &result);
            let s = &mut stats[variant_index];
            s.tries += 1;
            s.breakups += result.breakups;
            match result.outcome {
                Outcome::Finished => {
                    s.successes += 1;
                    finish_cycles[variant_index].push(result.cycles);
                }
                Outcome::HelpMe => s.help_mes += 1,
                Outcome::CycleCapExceeded => s.cycle_caps += 1,
            }
            if run.had_fault && result.outcome != Outcome::Finished {
                s.failures_on_faulty += 1;
            }
            runs.push(run);
        }
    }

    for (i, s) in stats.iter_mut().enumerate() {
        let cycles = &finish_cycles[i];
        s.mean_cycles_to_finish = if cycles.is_empty() {
            f64::NAN
        } else {
            cycles.iter().sum::<u64>() as f64 / cycles.len() as f64
        };
    }

    BatchReport {
        scenarios: scenarios.len(),
        seed,
        variants: stats,
        runs,
    }
}

/// Convenience wrapper: generate, run, inspect nothing.
pub fn run_batch(
    batch: &BatchConfig,
    variants: &[VariantFlags],
    library: &ScriptLibrary,
    table: &LinkTable,
    base: &RunConfig,
) -> BatchReport {
    let scenarios = generate_scenarios(batch);
    run_batch_with(&scenarios, variants, library, table, base, batch.seed, |_, _| {})
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_seeds_differ_per_index_and_batch() {
        let a: Vec<u64> = (0..10).map(|i| scenario_seed(1, i)).collect();
        let b: Vec<u64> = (0..10).map(|i| scenario_seed(2, i)).collect();
        for i in 0..10 {
            for k in 0..10 {
                if i != k {
                    assert_ne!(a[i], a[k]);
                }
            }
            assert_ne!(a[i], b[i]);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = BatchConfig {
            n: 16,
            seed: 7,
            ..BatchConfig::default()
        };
        assert_eq!(generate_scenarios(&cfg), generate_scenarios(&cfg));
    }

    #[test]
    fn generated_faults_respect_the_magnitude_bound() {
        let cfg = BatchConfig {
            n: 64,
            seed: 3,
            ..BatchConfig::default()
        };
        for scenario in generate_scenarios(&cfg) {
            assert!((scenario.ground_tilt.abs()) <= cfg.max_tilt + 1e-12);
            for fault in &scenario.faults {
                let slip = fault.slip.expect("generated faults are stick-slip");
                assert!(slip <= cfg.max_stuck + 1e-12);
                assert!(matches!(fault.until, FaultUntil::Cycle(_)));
            }
        }
    }
}
