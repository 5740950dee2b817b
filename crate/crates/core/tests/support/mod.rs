//! Shared helpers for integration tests: scalar-loop reference
//! implementations and tiny model builders.
#![allow(dead_code, clippy::needless_range_loop)]

pub mod kernels;
pub mod oracles;
pub mod tiny;
