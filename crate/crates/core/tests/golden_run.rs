//! Integration tests over the shipped scripts and scenarios: the golden
//! fault-free run, request continuity and data-file health.

use std::path::PathBuf;

use standup_core::engine::Mode;
use standup_core::kinematics::LinkTable;
use standup_core::runner::{run_scenario, Outcome, RunConfig};
use standup_core::scenario::{parse_scenario, InitialPosture, Scenario};
use standup_core::script::ScriptLibrary;
use standup_core::trace::Trace;
use standup_core::{JointId, JointLimits, VariantFlags};

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn library() -> ScriptLibrary {
    ScriptLibrary::load_dir(&data_dir().join("scripts")).expect("shipped scripts load")
}

fn run(scenario: &Scenario, flags: VariantFlags) -> standup_core::runner::RunResult {
    let cfg = RunConfig {
        flags,
        ..RunConfig::default()
    };
    run_scenario(scenario, &library(), &LinkTable::builtin(), &cfg)
}

fn transitions(trace: &Trace) -> Vec<(String, String, u64)> {
    let mut out = Vec::new();
    let mut last = None;
    for row in &trace.rows {
        let key = (row.mode.name().to_string(), row.keyframe.clone());
        if last.as_ref() != Some(&key) {
            out.push((key.0.clone(), key.1.clone(), row.cycle));
            last = Some(key);
        }
    }
    out
}

#[test]
fn golden_back_run_mode_sequence() {
    let result = run(&Scenario::nominal("golden", InitialPosture::Back), VariantFlags::full());
    assert_eq!(result.outcome, Outcome::Finished);
    assert_eq!(result.breakups, 0);
    // Frozen from the first verified fault-free run.
    let expected: Vec<(&str, &str, u64)> = vec![
        ("decide_action", "-", 0),
        ("working", "arms_back", 1),
        ("working", "sit_up", 43),
        ("working", "tilt_forward", 110),
        ("waiting", "tilt_forward", 160),
        ("working", "tilt_forward", 169),
        ("working", "crouch", 170),
        ("working", "pull_legs", 220),
        ("working", "rise", 295),
        ("working", "upright", 362),
        ("finished", "upright", 411),
    ];
    let got = transitions(&result.trace);
    let got_view: Vec<(&str, &str, u64)> = got
        .iter()
        .map(|(m, k, c)| (m.as_str(), k.as_str(), *c))
        .collect();
    assert_eq!(got_view, expected);
    assert_eq!(result.cycles, 412);
}

#[test]
fn all_initial_postures_reach_finished() {
    for initial in [
        InitialPosture::Back,
        InitialPosture::Front,
        InitialPosture::SideLeft,
        InitialPosture::SideRight,
    ] {
        let result = run(&Scenario::nominal("nominal", initial), VariantFlags::full());
        assert_eq!(
            result.outcome,
            Outcome::Finished,
            "initial {:?} ended {:?}",
            initial,
            result.outcome
        );
        assert_eq!(result.breakups, 0, "initial {initial:?}");
    }
}

#[test]
fn side_recovery_passes_through_decide_action_again() {
    let result = run(
        &Scenario::nominal("side", InitialPosture::SideLeft),
        VariantFlags::full(),
    );
    assert_eq!(result.outcome, Outcome::Finished);
    let modes: Vec<Mode> = result.trace.rows.iter().map(|r| r.mode).collect();
    let decides = modes
        .iter()
        .zip(modes.iter().skip(1))
        .filter(|(a, b)| **a != Mode::DecideAction && **b == Mode::DecideAction)
        .count();
    // Once into the recovery motion, once more into the back stand-up.
    assert!(decides >= 1, "no re-entry into decide_action");
    let keyframes: Vec<&str> = result.trace.rows.iter().map(|r| r.keyframe.as_str()).collect();
    assert!(keyframes.contains(&"roll_flat"), "recovery motion never ran");
    assert!(keyframes.contains(&"pull_legs"), "stand-up never ran");
}

#[test]
fn requests_are_continuous_and_within_limits() {
    let limits = JointLimits::default();
    let velocity_bound = 0.12; // rad per cycle, the plant's servo bound
    for (name, scenario) in [
        (
            "nominal",
            Scenario::nominal("nominal", InitialPosture::Back),
        ),
        ("hyp_stuck", {
            let text = std::fs::read_to_string(data_dir().join("scenarios/hyp_stuck.scn")).unwrap();
            parse_scenario(&text).unwrap()
        }),
    ] {
        let result = run(&scenario, VariantFlags::full());
        assert_eq!(result.rejected_commands, 0, "{name}: plant rejected commands");
        let rows = &result.trace.rows;
        for pair in rows.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            for (j, v) in b.requested.iter() {
                assert!(
                    limits.contains(j, v),
                    "{name}: cycle {} {j} out of range: {v}",
                    b.cycle
                );
            }
            if a.mode == Mode::BreakUp || b.mode == Mode::BreakUp {
                continue;
            }
            for j in JointId::all() {
                let step = (b.requested[j] - a.requested[j]).abs();
                assert!(
                    step <= velocity_bound + 1e-9,
                    "{name}: cycle {} {j} stepped {step}",
                    b.cycle
                );
            }
        }
    }
}

#[test]
fn shipped_scenarios_parse() {
    let dir = data_dir().join("scenarios");
    let mut count = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().map(|e| e == "scn").unwrap_or(false) {
            let text = std::fs::read_to_string(&path).unwrap();
            parse_scenario(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            count += 1;
        }
    }
    assert!(count >= 5, "expected shipped scenarios, found {count}");
}

#[test]
fn shipped_library_has_the_expected_motions() {
    let lib = library();
    for name in ["back_up", "front_up", "side_left", "side_right", "free_arms"] {
        assert!(lib.get(name).is_some(), "missing motion `{name}`");
    }
    // The compensation watch list drives the trace delta columns.
    let watched = lib.watched_joints();
    assert!(watched.contains(&JointId::HipYawPitch));
}

#[test]
fn fault_free_outcome_is_independent_of_ablations() {
    let scenario = Scenario::nominal("nominal", InitialPosture::Back);
    for flags in [
        VariantFlags::full(),
        VariantFlags {
            compensation: false,
            ..VariantFlags::full()
        },
        VariantFlags {
            balancing: false,
            oscillation: false,
            ..VariantFlags::full()
        },
        VariantFlags {
            waiting: false,
            ..VariantFlags::full()
        },
    ] {
        let result = run(&scenario, flags);
        assert_eq!(
            result.outcome,
            Outcome::Finished,
            "variant {} failed the nominal run",
            flags.label()
        );
    }
}
