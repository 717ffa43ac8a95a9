//! Single-excitation simulator for a controlled-phase gate between a flying
//! photon and a stationary atom, mediated by a dynamically Q-switched pair of
//! coupled cavities.
//!
//! All rates are in units of the inter-cavity hopping rate κ and all times in
//! κ⁻¹, in the frame rotating with the storage mode.

pub mod cli;
pub mod dynamics;
pub mod experiments;
pub mod optimize;
pub mod params;
pub mod protocol;
pub mod pulse;
pub mod schedule;
pub mod spectral;

pub use dynamics::{integrate, IntegratorConfig, QuantumState, SimulationRecord};
pub use params::{validate_params, PhysicalParams, SystemParams};
pub use protocol::{simulate_gate, GateResult, GateTiming};
pub use pulse::Pulse;
pub use schedule::{ControlSchedule, Profile, Track};
