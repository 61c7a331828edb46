//! Keyframe-based stand-up motion engine for a NAO-like humanoid, with
//! joint-error compensation, CoM balancing, safety checks and a recovery
//! state machine, validated against a deterministic simulated servo plant
//! with fault injection.

pub mod balance;
pub mod compensation;
pub mod config;
pub mod engine;
pub mod joints;
pub mod kinematics;
pub mod plant;
pub mod runner;
pub mod scenario;
pub mod script;
pub mod trace;

pub use config::{EngineConfig, VariantFlags};
pub use joints::{JointId, JointLimits, JointVector};
pub use runner::{run_scenario, Outcome, RunConfig, RunResult};
pub use scenario::{parse_scenario, Scenario};
pub use script::{parse_script, serialize_script, validate_script, MotionScript, ScriptLibrary};
