//! Deterministic discrete-time simulator of a single-transmitter,
//! multi-implant magnetoelectric wireless power and data network.
//!
//! The TX coil broadcasts a 330 kHz field carrying power, ASK downlink
//! data, and notch-based phase commands to every implant in the scene.
//! Each implant model covers the full SoC behavior: rectification and
//! adaptive storage regulation, clock recovery, threshold-calibrated
//! demodulation, PUF-derived addressing, and programmable mono/biphasic
//! stimulation with an energy ledger.
//!
//! The kernel steps implants at carrier-cycle resolution; implants are
//! independent given the schedule, so runs, parameter sweeps and Monte
//! Carlo ensembles parallelize across them (see [`Execution`]).

pub mod channel;
pub mod downlink;
pub mod exec;
pub mod identity;
pub mod interp;
pub mod goldens;
pub mod kernel;
pub mod linkbudget;
pub mod metrics;
pub mod powerpath;
pub mod rng;
pub mod scenario;
pub mod stimengine;
pub mod trace;

pub use exec::Execution;
pub use kernel::{run, run_with};
pub use scenario::{Scenario, ScenarioError};
pub use trace::TraceBundle;
