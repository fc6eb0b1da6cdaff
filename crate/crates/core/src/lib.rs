//! Conversational garment editing: mask algebra, cosegmentation, automatic
//! mask synthesis, task planning, model backends, sessions and evaluation.

pub mod automask;
pub mod backend;
pub mod config;
pub mod coseg;
pub mod engine;
pub mod eval;
pub mod exec;
pub mod imaging;
pub mod mask;
pub mod planner;
pub mod resources;
pub mod session;
pub mod store;
pub mod text;
