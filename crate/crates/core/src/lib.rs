//! emtkit: an electromagnetic-transient simulator for power systems.
//!
//! Equipment models (pi-lines, transformers, machines, controls) expand into
//! analog circuit primitives, assemble into one Modified Nodal Analysis
//! system and integrate in time with Newton iteration, trapezoidal
//! companions, LTE-driven adaptive stepping and exact event breakpoints.
//!
//! Crate layout:
//! - [`circuit`]: primitives, behavioral expressions, MNA stamping
//! - [`components`]: power-system equipment expanded to primitives
//! - [`machine`]: Park transform, synchronous generator, control blocks
//! - [`solver`]: transient engine (Newton, adaptive dt, events)
//! - [`analysis`]: phasor extraction, symmetrical components, CSV, reports
//! - [`casefile`]: case-file parsing, validation, elaboration

pub mod analysis;
pub mod casefile;
pub mod circuit;
pub mod components;
pub mod machine;
pub mod solver;
pub mod sparse;

pub use casefile::CaseFile;
pub use circuit::{CircuitPrimitive, NodeAllocator, NodeId};
pub use solver::{SimEvent, SolverConfig};
