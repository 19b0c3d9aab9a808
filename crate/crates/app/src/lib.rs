//! Library surface of the workbench app: pipeline orchestration, run
//! configuration, CSV artifact writers, and the prediction server. The
//! `localeq` binary is a thin CLI over these modules.

pub mod config;
pub mod csvout;
pub mod pipeline;
pub mod server;
