//! Quantum-trajectory unraveling through a weakly coupled auxiliary system that
//! is read out once per step and reset.

pub mod auxiliary;
pub mod closed_form;
pub mod trajectory;
pub mod update;

pub use auxiliary::{
    hermite_functions, make_aux, make_oscillator_aux, make_qubit_aux, verify_relations, AuxKind, AuxiliarySystem,
    RelationReport,
};
pub use closed_form::{closed_form_update, detector_limit, ClosedFormUpdate, Limit};
pub use trajectory::{
    purity, run_ensemble, trajectory_step, EnsembleConfig, EnsembleResult, Histogram, StateSnapshot, Stepper,
    TrajectoryState,
};
pub use update::{conditional_map, sample_outcome, ConditionalMap};
