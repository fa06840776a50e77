//! Independent oracles and generators shared by the integration and
//! acceptance suites.
#![allow(dead_code)]

pub mod market_oracle;
pub mod payment_world;
pub mod fabric_world;
