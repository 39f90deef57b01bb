//! Continuous-time simulation of the exchange dynamics and its observables.

mod engine;
mod field;
mod generator;
mod snapshot;
mod structure;
mod trajectory;

pub use engine::{replica_rng, Engine, EventCounts, Outcome, Proposal};
pub use field::{
    fluctuation_field, mollified_field, wick_bias, wick_quadratic, FieldSample, Mollifier, MollifierShape,
    TestFunction,
};
pub use generator::{invariance_residual, jump_probabilities, reversibility_residual, MAX_EXACT_RING};
pub use snapshot::{read_snapshots, write_snapshots, SNAPSHOT_MAGIC};
pub use structure::{structure_function, SlopeFit, StructureFunction, StructureSpec};
pub use trajectory::{
    frame_shift, height_field, lattice_drift, mean_current, simulate, simulate_replicas, SimulationPlan,
    TrajectoryRecord,
};
