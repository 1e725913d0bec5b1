//! Simulation of a flight-control system guarded by three cooperating
//! runtime monitors, one per layer: bus hardware, sensor information, and
//! program execution.

pub mod ec;
pub mod error;
pub mod plant;
pub mod streams;
pub mod monitor;
pub mod hrim;
pub mod i2m;
pub mod eim;
pub mod attack;
pub mod scenario;
pub mod log;
pub mod trace;
pub mod stack;
pub mod sim;
pub mod verify;
