//! Cluster services, operator HTTP API and command-line entry points.

pub mod config;
pub mod net;
pub mod http;
pub mod commands;
