//! Library surface of the experiment runner, shared by the `gap` binary and
//! the test suites.

pub mod config;
pub mod experiments;
