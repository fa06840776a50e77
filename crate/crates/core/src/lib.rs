//! Core of the bandwidth exchange: trust-management credentials, the
//! offer clearing house, microcheck payments with clearing and settlement,
//! and the simulated ISP reservation fabric.

pub mod codec;
pub mod credential;
pub mod fabric;
pub mod fixtures;
pub mod market;
pub mod money;
pub mod payments;
pub mod time;
