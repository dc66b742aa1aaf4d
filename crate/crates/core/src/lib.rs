//! Deterministic multi-domain maritime robotics simulator.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acoustics;
pub mod dynamics;
pub mod environment;
pub mod gateway;
pub mod geomath;
pub mod guidance;
pub mod kernel;
pub mod rl;
pub mod rng;
pub mod sim2real;
pub mod vehicles;
