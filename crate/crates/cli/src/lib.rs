//! The `lightslab` command-line tool and its HTTP render service.

pub mod commands;
pub mod service;
