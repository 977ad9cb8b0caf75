//! Visual tower forward pass with a per-layer modulation hook.

mod encoder;
mod hooks;
mod state;

pub use encoder::{Tower, TowerRun};
pub use hooks::{AttentionCtx, IdentityHook, LayerHook};
pub use state::{AttentionStack, TokenState};
