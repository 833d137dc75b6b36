//! Sink-anchored diffusion-distance token reduction for Vision Transformers.
//!
//! The pipeline reads a stack of per-layer attention maps, treats each layer
//! as a lazy random walk, finds the attention sink once mass piles up in one
//! column, and measures every token's diffusion distance to it. Tokens are
//! then binned radially; the sink-proximal bins are pooled into one token and
//! the rest are kept, stride-sampled, or pruned further.
//!
//! ```
//! use asap_core::pipeline::{run_pipeline, PipelineConfig};
//! use asap_core::synth::{gen_sink_stack, SynthConfig};
//!
//! let stack = gen_sink_stack(&SynthConfig { n: 16, sink_index: Some(4), ..Default::default() })?;
//! let out = run_pipeline(&stack, &PipelineConfig::default())?;
//! assert_eq!(out.sink.sink_index, 4);
//! # Ok::<(), asap_core::Error>(())
//! ```

pub mod attnio;
pub mod bench;
pub mod error;
pub mod geometry;
pub mod hybrid;
pub mod matrix;
pub mod pipeline;
pub mod reduce;
pub mod report;
pub mod sink;
pub mod synth;
pub mod walk;

pub use attnio::{read_stack, write_stack, AttentionStack};
pub use error::{Error, Result};
pub use matrix::{FeatureMatrix, TransitionMatrix};
pub use pipeline::{
    run_pipeline, Anchor, FeatureLayer, Mode, PipelineConfig, PipelineOutput, ReduceConfig,
};
pub use walk::{accumulate, WalkConfig, WalkState};
