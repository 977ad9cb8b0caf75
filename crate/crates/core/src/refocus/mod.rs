//! Distraction-token localization, attention/embedding weight
//! redistribution, and the suppression-strategy ablations.

mod distraction;
mod hook;
mod redistribute;
mod suppress;

pub use distraction::{
    localize_distractors, max_relative_weight, patch_column_mass, DistractionProfile,
};
pub use hook::{cumulative_column_mass, LayerTrace, RefocusHook, SuppressionHook};
pub use redistribute::{
    grid_neighbors, redistribute_attention, redistribute_attention_heads,
    redistribute_embeddings,
};
pub use suppress::{apply_suppression, mask_attention_columns, SuppressionStrategy};
