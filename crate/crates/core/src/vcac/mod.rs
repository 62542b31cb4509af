//! View-consistent attention control and the tiny denoiser hosting it.

mod attention;
mod control;
mod denoiser;
mod partition;

pub use attention::{
    apply_probs, attention, attention_probs, injection_active, kv_propagate, kv_reference,
    query_inject, softmax_row, TokenTensor,
};
pub use control::{cross_attn_control, local_blend, AttnMaps, CrossAttnAlignment};
pub use denoiser::{
    DenoiserOutput, KvPlan, SourceCache, TinyDenoiser, TinyDenoiserConfig, VcacHooks, SELF_BLOCKS,
};
pub use partition::{partition_contexts, ContextPartition, KeyframeSharing, PairingPlan};
