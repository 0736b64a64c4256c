//! Command-line driver, HTTP service and data download for the assistant.

pub mod api;
pub mod config;
pub mod fetch;
pub mod report;
pub mod scenario;
