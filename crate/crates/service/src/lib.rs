//! HTTP service that runs the active-learning loop with human annotators.
//!
//! Sessions move through Idle → Scoring → AwaitingLabels → Updating → Idle.
//! Every committed transition is appended to a per-session event log under
//! the state directory and replayed on startup.

pub mod api;
mod error;
pub mod log;
mod render;
pub mod server;
pub mod session;

pub use error::{Result, ServiceError};
pub use server::{router, AppState, ServiceConfig};
pub use session::{CreateSession, DatasetRef, Event, LabelAnswer, Preset, Session, Status, SubmitLabels};

/// The JSON schema describing every response body.
pub const API_SCHEMA: &str = include_str!("../schema/api.schema.json");
