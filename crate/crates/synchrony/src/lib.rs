//! Transient-stability laboratory for networked swing-equation dynamics.
//!
//! The crate simulates second-order oscillator networks, generates labeled
//! perturbation datasets via time-domain simulation, and trains a
//! temporal-and-topological embedding classifier (graph convolution modules,
//! a dilated causal temporal convolution stack, and an MLP head) on early
//! transient frequency trajectories.

pub mod adjacency;
pub mod cli;
pub mod dynamics;
pub mod grid;
pub mod model;
pub mod sampling;
pub mod tensor;
pub mod training;

pub use grid::PowerGrid;
pub use dynamics::{StabilityVerdict, SystemState, Trajectory};
pub use sampling::{Dataset, PerturbationSpec, Sample};
pub use tensor::{Tape, TensorId};
