//! HTTP and websocket front end for live gesture sessions.

pub mod pointer;
pub mod protocol;
pub mod server;
pub mod session;

pub use pointer::{pointer_to_events, PointerEvents, PointerSample, PointerSceneConfig};
pub use protocol::{ClientMessage, ClockMode, GestureStats, ServerMessage, SessionReport, SessionStats};
pub use server::{router, serve, AppState, ServerConfig};
pub use session::{Session, SessionError};
