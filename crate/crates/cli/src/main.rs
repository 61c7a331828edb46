//! standup-sim: run simulated stand-up scenarios, randomized batches,
//! trace replays and script validation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use standup_core::kinematics::LinkTable;
use standup_core::runner::{
    generate_scenarios, run_batch_with, run_scenario, BatchConfig, BatchReport, Outcome, RunConfig,
};
use standup_core::scenario::parse_scenario;
use standup_core::script::{parse_script_raw, validate_script, ScriptLibrary};
use standup_core::trace::{replay, ReplayOutcome, Trace};
use standup_core::{EngineConfig, JointLimits, VariantFlags};

const EXIT_OK: u8 = 0;
const EXIT_USAGE: u8 = 1;
const EXIT_FAILED: u8 = 2;
const EXIT_CYCLE_CAP: u8 = 3;

#[derive(Parser)]
#[command(
    name = "standup-sim",
    about = "Keyframe stand-up motion engine on a deterministic simulated humanoid",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct EngineArgs {
    /// Directory with *.motion scripts (and optionally links.kin).
    #[arg(long, default_value = "data/scripts")]
    scripts: PathBuf,
    /// Flat key=value engine config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Single key=value override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct VariantArgs {
    /// Disable the joint-error compensation.
    #[arg(long = "no-compensation")]
    no_compensation: bool,
    /// Disable the CoM balancer.
    #[arg(long = "no-balancing")]
    no_balancing: bool,
    /// Disable the ankle-roll oscillation.
    #[arg(long = "no-oscillation")]
    no_oscillation: bool,
    /// Disable conditional waiting at keyframe ends.
    #[arg(long = "no-waiting")]
    no_waiting: bool,
}

impl VariantArgs {
    fn flags(&self) -> VariantFlags {
        VariantFlags {
            compensation: !self.no_compensation,
            balancing: !self.no_balancing,
            oscillation: !self.no_oscillation,
            waiting: !self.no_waiting,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file; exit 0 = finished, 2 = help_me, 3 = cycle cap.
    Run {
        /// Scenario file.
        scenario: PathBuf,
        #[command(flatten)]
        engine: EngineArgs,
        #[command(flatten)]
        variant: VariantArgs,
        /// Write the per-cycle trace CSV here.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Abort after this many cycles.
        #[arg(long, default_value_t = 20_000)]
        max_cycles: u64,
    },
    /// Run every variant over n seeded random scenarios.
    Batch {
        /// Number of scenarios.
        #[arg(long)]
        n: usize,
        /// Batch seed; scenario seeds derive from it per index.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Comma-separated variants: full, nocomp, nobal, noosc, nowait
        /// (combinable with +).
        #[arg(long, default_value = "full,nocomp")]
        variants: String,
        /// Output directory for report CSVs.
        #[arg(long)]
        out: PathBuf,
        /// Bound on stick-slip magnitudes, degrees.
        #[arg(long, default_value_t = 20.0)]
        max_stuck_deg: f64,
        /// Bound on ground tilt, degrees.
        #[arg(long, default_value_t = 3.0)]
        max_tilt_deg: f64,
        /// Generate scenarios without pushes.
        #[arg(long)]
        no_pushes: bool,
        #[command(flatten)]
        engine: EngineArgs,
        /// Abort each run after this many cycles.
        #[arg(long, default_value_t = 20_000)]
        max_cycles: u64,
    },
    /// Re-run the engine over a recorded trace and compare.
    Replay {
        /// Trace CSV produced by `run --trace`.
        trace: PathBuf,
        /// Override the scripts directory recorded in the trace.
        #[arg(long)]
        scripts: Option<PathBuf>,
    },
    /// Parse and validate a motion script.
    Validate {
        /// Motion script file.
        script: PathBuf,
    },
}

fn fail(message: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(EXIT_USAGE)
}

fn load_environment(args: &EngineArgs) -> Result<(ScriptLibrary, LinkTable, EngineConfig), String> {
    let library = ScriptLibrary::load_dir(&args.scripts).map_err(|e| e.to_string())?;
    let links_path = args.scripts.join("links.kin");
    let table = if links_path.exists() {
        let text = std::fs::read_to_string(&links_path)
            .map_err(|e| format!("{}: {e}", links_path.display()))?;
        LinkTable::parse(&text).map_err(|e| format!("{}: {e}", links_path.display()))?
    } else {
        LinkTable::builtin()
    };
    let mut config = EngineConfig::default();
    if let Some(path) = &args.config {
        config.apply_file(path).map_err(|e| e.to_string())?;
    }
    for pair in &args.overrides {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| format!("override `{pair}` is not KEY=VALUE"))?;
        config
            .set(key.trim(), value.trim())
            .map_err(|e| e.to_string())?;
    }
    Ok((library, table, config))
}

fn cmd_run(
    scenario_path: &Path,
    engine_args: &EngineArgs,
    flags: VariantFlags,
    trace_path: Option<&Path>,
    max_cycles: u64,
) -> ExitCode {
    let text = match std::fs::read_to_string(scenario_path) {
        Ok(t) => t,
        Err(e) => return fail(format!("{}: {e}", scenario_path.display())),
    };
    let scenario = match parse_scenario(&text) {
        Ok(s) => s,
        Err(e) => return fail(format!("{}:{e}", scenario_path.display())),
    };
    let (library, table, engine) = match load_environment(engine_args) {
        Ok(env) => env,
        Err(e) => return fail(e),
    };
    let cfg = RunConfig {
        engine,
        flags,
        max_cycles,
        scripts_dir: engine_args.scripts.display().to_string(),
        ..RunConfig::default()
    };
    let result = run_scenario(&scenario, &library, &table, &cfg);
    if let Some(path) = trace_path {
        if let Err(e) = result.trace.write_file(path) {
            return fail(e);
        }
    }
    println!(
        "{}: {} after {} cycles ({} ms), {} breakup(s){}",
        scenario.name,
        result.outcome.name(),
        result.cycles,
        result.cycles * cfg.engine.cycle_ms as u64,
        result.breakups,
        match result.broken_joint {
            Some(j) => format!(", joint {j} flagged dysfunctional"),
            None => String::new(),
        }
    );
    match result.outcome {
        Outcome::Finished => ExitCode::from(EXIT_OK),
        Outcome::HelpMe => ExitCode::from(EXIT_FAILED),
        Outcome::CycleCapExceeded => ExitCode::from(EXIT_CYCLE_CAP),
    }
}

fn report_table(report: &BatchReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "batch: {} scenarios, seed {}\n",
        report.scenarios, report.seed
    ));
    out.push_str(&format!(
        "{:<16} {:>6} {:>6} {:>7} {:>8} {:>6} {:>9} {:>13} {:>15}\n",
        "variant",
        "tries",
        "ok",
        "rate",
        "help_me",
        "cap",
        "breakups",
        "mean_finish",
        "fail_on_faulty"
    ));
    for v in &report.variants {
        out.push_str(&format!(
            "{:<16} {:>6} {:>6} {:>6.1}% {:>8} {:>6} {:>9} {:>13.1} {:>15}\n",
            v.variant,
            v.tries,
            v.successes,
            100.0 * v.success_rate(),
            v.help_mes,
            v.cycle_caps,
            v.breakups,
            v.mean_cycles_to_finish,
            v.failures_on_faulty
        ));
    }
    out
}

fn report_csv(report: &BatchReport) -> String {
    let mut out = String::from(
        "variant,tries,successes,success_rate,help_me,cycle_cap,breakups,mean_cycles_to_finish,failures_on_faulty\n",
    );
    for v in &report.variants {
        out.push_str(&format!(
            "{},{},{},{:.4},{},{},{},{:.1},{}\n",
            v.variant,
            v.tries,
            v.successes,
            v.success_rate(),
            v.help_mes,
            v.cycle_caps,
            v.breakups,
            v.mean_cycles_to_finish,
            v.failures_on_faulty
        ));
    }
    out
}

fn runs_csv(report: &BatchReport) -> String {
    let mut out = String::from("scenario,variant,outcome,cycles,breakups,had_fault\n");
    for r in &report.runs {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.scenario_index,
            r.variant,
            r.outcome.name(),
            r.cycles,
            r.breakups,
            r.had_fault
        ));
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn cmd_batch(
    n: usize,
    seed: u64,
    variants_arg: &str,
    out_dir: &Path,
    max_stuck_deg: f64,
    max_tilt_deg: f64,
    no_pushes: bool,
    engine_args: &EngineArgs,
    max_cycles: u64,
) -> ExitCode {
    if n == 0 {
        return fail("--n must be at least 1");
    }
    let mut variants = Vec::new();
    for token in variants_arg.split(',') {
        match VariantFlags::parse(token.trim()) {
            Ok(flags) => variants.push(flags),
            Err(e) => return fail(e),
        }
    }
    let (library, table, engine) = match load_environment(engine_args) {
        Ok(env) => env,
        Err(e) => return fail(e),
    };
    let batch = BatchConfig {
        n,
        seed,
        max_stuck: max_stuck_deg.to_radians(),
        max_tilt: max_tilt_deg.to_radians(),
        pushes: !no_pushes,
    };
    let base = RunConfig {
        engine,
        max_cycles,
        scripts_dir: engine_args.scripts.display().to_string(),
        ..RunConfig::default()
    };
    let scenarios = generate_scenarios(&batch);
    let report = run_batch_with(&scenarios, &variants, &library, &table, &base, seed, |_, _| {});

    if let Err(e) = std::fs::create_dir_all(out_dir) {
        return fail(format!("{}: {e}", out_dir.display()));
    }
    let report_path = out_dir.join("batch_report.csv");
    if let Err(e) = std::fs::write(&report_path, report_csv(&report)) {
        return fail(format!("{}: {e}", report_path.display()));
    }
    let runs_path = out_dir.join("batch_runs.csv");
    if let Err(e) = std::fs::write(&runs_path, runs_csv(&report)) {
        return fail(format!("{}: {e}", runs_path.display()));
    }
    print!("{}", report_table(&report));
    println!("report: {}", report_path.display());
    ExitCode::from(EXIT_OK)
}

fn cmd_replay(trace_path: &Path, scripts: Option<&Path>) -> ExitCode {
    let trace = match Trace::read_file(trace_path) {
        Ok(t) => t,
        Err(e) => return fail(e),
    };
    let scripts_dir = match scripts {
        Some(dir) => dir.to_path_buf(),
        None => PathBuf::from(&trace.meta.scripts_dir),
    };
    let library = match ScriptLibrary::load_dir(&scripts_dir) {
        Ok(l) => l,
        Err(e) => return fail(e),
    };
    match replay(&trace, &library) {
        Ok(ReplayOutcome::Identical) => {
            println!("identical ({} cycles)", trace.rows.len());
            ExitCode::from(EXIT_OK)
        }
        Ok(ReplayOutcome::Diverged { cycle, detail }) => {
            println!("divergence at cycle {cycle}: {detail}");
            ExitCode::from(EXIT_FAILED)
        }
        Err(e) => fail(e),
    }
}

fn cmd_validate(script_path: &Path) -> ExitCode {
    let text = match std::fs::read_to_string(script_path) {
        Ok(t) => t,
        Err(e) => return fail(format!("{}: {e}", script_path.display())),
    };
    let script = match parse_script_raw(&text) {
        Ok(s) => s,
        Err(e) => return fail(format!("{}:{e}", script_path.display())),
    };
    let findings = validate_script(&script, &JointLimits::default());
    if findings.is_empty() {
        println!(
            "{}: ok ({} keyframes)",
            script.name,
            script.keyframes.len()
        );
        ExitCode::from(EXIT_OK)
    } else {
        for finding in &findings {
            println!("{}: {finding}", script.name);
        }
        ExitCode::from(EXIT_FAILED)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Command::Run {
            scenario,
            engine,
            variant,
            trace,
            max_cycles,
        } => cmd_run(scenario, engine, variant.flags(), trace.as_deref(), *max_cycles),
        Command::Batch {
            n,
            seed,
            variants,
            out,
            max_stuck_deg,
            max_tilt_deg,
            no_pushes,
            engine,
            max_cycles,
        } => cmd_batch(
            *n,
            *seed,
            variants,
            out,
            *max_stuck_deg,
            *max_tilt_deg,
            *no_pushes,
            engine,
            *max_cycles,
        ),
        Command::Replay { trace, scripts } => cmd_replay(trace, scripts.as_deref()),
        Command::Validate { script } => cmd_validate(script),
    }
}
