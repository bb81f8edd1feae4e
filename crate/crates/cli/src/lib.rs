//! Command-line tool and HTTP service for the guardrail pipeline.

pub mod commands;
pub mod config;
pub mod service;
