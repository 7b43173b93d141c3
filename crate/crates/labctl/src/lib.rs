// SPDX-License-Identifier: MIT OR Apache-2.0

//! Command-line front end: run configuration, presets, run directories and
//! the generate/train/sweep/report/validate-corpus verbs.

pub mod commands;
pub mod presets;
pub mod runcfg;
pub mod rundir;
