//! Conversational ride-hailing assistant engine.
//!
//! The crate is `no_std` (with `alloc`) and contains every pure part of the
//! assistant: the trip-order domain model, relative time resolution, POI
//! search and route pricing, the structured tool-calling layer, progressive
//! order planning, the three-way replier dialog layer, knowledge retrieval,
//! a role-playing simulator and the evaluation harness.
//!
//! Anything that needs a language model goes through [`llm::Completion`].
//! Two deterministic implementations live here ([`llm::ScriptedBackend`] and
//! [`heuristic::HeuristicModel`]); hosted chat-completion endpoints, file IO
//! and the HTTP service are provided by the companion `ridechat-service`
//! crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod dialog;
pub mod engine;
pub mod eval;
pub mod geo;
pub mod heuristic;
pub mod kb;
pub mod llm;
pub mod model;
pub mod planner;
pub mod prompt;
pub mod simulator;
pub mod temporal;
pub mod text;
pub mod timefmt;
pub mod tools;

pub use chrono::NaiveDateTime as DateTime;
