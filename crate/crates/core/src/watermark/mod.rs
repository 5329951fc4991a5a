//! Server-side trigger-set watermark.
//!
//! Every aggregated global model is retrained on a small set of labeled noise
//! patterns. Each retraining step is projected so that it does not point
//! against the accumulated primitive-task direction, and BN layers are frozen
//! while this happens. Ownership is verified through trigger-set accuracy.

mod embed;
mod trigger;

pub use embed::{
    gembed, project_gradient, trigger_accuracy, verify, EmbedMode, GembedOutcome, GlobalMemory, WatermarkConfig,
};
pub use trigger::{gen_trigger_set, load_trigger, save_trigger, trigger_labels_path, TriggerSet};
