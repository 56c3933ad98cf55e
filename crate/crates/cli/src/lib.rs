//! The `cvf` command-line tool and session service: fitting, simulating and
//! benchmarking contracting vector field models from files, and an
//! HTTP/WebSocket API for interactive use.

pub mod commands;
pub mod config;
pub mod error;
pub mod service;
