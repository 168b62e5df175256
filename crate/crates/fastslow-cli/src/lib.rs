//! Library surface of the command-line front end: scenario files and the
//! command implementations, kept importable so integration tests can drive
//! them without spawning processes.

pub mod commands;
pub mod scenario;
