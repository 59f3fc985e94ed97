//! Service shell around `ridechat-core`: configuration, the hosted model
//! gateway, the append-only dialog log, the HTTP API, instruction-set
//! export, golden-dialog replay and the tier benchmark.

pub mod bench;
pub mod client;
pub mod config;
pub mod export;
pub mod gateway;
pub mod golden;
pub mod server;
pub mod service;
pub mod store;

pub use service::{Service, ServiceError};
