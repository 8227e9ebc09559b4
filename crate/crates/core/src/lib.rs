//! Scooter proximity sensing from BLE advertisements: provider fingerprinting,
//! encounter detection, participant feedback, street-segment snapping, time
//! binning, safety metrics and a synthetic field simulator.

pub mod binning;
pub mod ble;
pub mod detector;
pub mod feedback;
pub mod geo;
pub mod io;
pub mod metrics;
pub mod sim;
pub mod time;
