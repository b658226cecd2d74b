//! Slotted random-access channel simulation with Age-of-Information
//! accounting, legacy TDMA/ALOHA nodes and a reflective access agent driven
//! by a pluggable reasoning backend.

pub mod agent;
pub mod aoi;
pub mod backend;
pub mod channel;
pub mod dataset;
pub mod error;
pub mod nodes;
pub mod oracle;
pub mod report;
pub mod rng;
pub mod scenario;
pub mod sim;

pub use aoi::{NodeId, PerNodeSlotState, Slot, SlotOutcome};
pub use error::{Error, Result};
