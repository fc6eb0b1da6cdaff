//! HTTP front end and command-line tools for the drape editing engine.

pub mod api;
pub mod eval_cmd;
pub mod mock_server;

use std::sync::Arc;

use drape_core::config::EngineConfig;
use drape_core::engine::Engine;
use drape_core::session::SessionManager;

/// Opens the engine and replays stored sessions.
pub fn open_app(config: EngineConfig) -> anyhow::Result<api::AppState> {
    let engine = Arc::new(Engine::open(config)?);
    let sessions = Arc::new(SessionManager::open(engine)?);
    Ok(api::AppState::new(sessions))
}
