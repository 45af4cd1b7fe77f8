//! Network and command-line surface of the live music engine: session
//! handling, the WebSocket wire protocol, and offline rendering.

pub mod config;
pub mod error;
pub mod protocol;
pub mod render;
pub mod server;
pub mod session;

pub use config::SessionConfig;
pub use error::{ServiceError, ServiceResult};
