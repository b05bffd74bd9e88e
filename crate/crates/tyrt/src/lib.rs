//! Standard-library companion to the core runtime: file formats, PNM image
//! IO, measurement profiles, reports, and the CLI wiring.

pub mod cli;
pub mod commands;
pub mod error;
pub mod format;
pub mod pnm;
pub mod profile;
pub mod report;
