//! Parameter updates and adaptive density control.

mod adam;
mod densify;

pub use adam::{adam_step, exponential_lr, AdamConfig, AdamState};
pub use densify::{densify_and_prune, DensifyConfig, DensifyOutcome, DensifyStats, Origin};
