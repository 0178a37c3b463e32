//! Robust controller synthesis for sampled switched systems by dynamic
//! programming on a state grid, with explicit Euler error bounds.
//!
//! Everything is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! fix `f64`.

pub mod benchmarks;
pub mod bounds;
pub mod dynamics;
pub mod error;
pub mod grid;
pub mod receding;
pub mod scalar;
pub mod synthesis;

pub use bounds::{
    check_hypothesis, contraction_certificate, delta, delta_disturbed, estimate_constants, ContractionCertificate,
    DisturbanceSpec, ErrorConstants, HypothesisReport, OslRegime, Provenance,
};
pub use dynamics::{
    euler_step, reference_solve, simulate_pattern, ModeId, Pattern, StateBox, Substeps, SwitchedSystem, Trajectory,
    VectorField,
};
pub use error::{Error, Result};
pub use grid::{build_successors, Admissibility, GridIndex, StateGrid, SuccessorTable};
pub use receding::{compare_robust_vs_receding, run_receding, RecedingRunResult};
pub use scalar::Scalar;
pub use synthesis::{
    extract_pattern, synthesize, value_iteration, verify_robustness, Plan, PolicyTable, SynthesisOptions,
    SynthesisResult, TerminalCost,
};

pub type System = SwitchedSystem<f64>;
pub type Grid = StateGrid<f64>;
pub type Constants = ErrorConstants<f64>;
pub type Cost = TerminalCost<f64>;
pub type F64Plan = Plan<f64>;
pub type Outcome = SynthesisResult<f64>;
