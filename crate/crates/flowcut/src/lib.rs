//! Information-flow-aware visual token pruning.
//!
//! The crate bundles four pieces that cooperate but also stand alone:
//!
//! - [`tensor`] and [`trace`]: minimal dense tensors and the binary trace
//!   format for per-layer Q/K/V and attention dumps.
//! - [`encoder`]: a deterministic, seeded ViT-style encoder that produces
//!   traces and supports live re-encoding over a pruned token set.
//! - [`flow`]: information-flow diagnostics — inflow/outflow graphs,
//!   attention entropy curves, value-norm statistics, and the
//!   multi-criteria contradiction report, all emitted as plot-ready CSV.
//! - [`engine`]: the pruning algorithm — entropy-adaptive prune counts,
//!   multi-criteria scoring, cumulative score tracking, and the event
//!   scheduler with ablation toggles and baselines.
//! - [`efficiency`]: closed-form prefill FLOPs estimates for pruned runs.
//!
//! The `flowcut` binary ties these into reproducible file-based runs; the
//! `examples/` directory shows each capability as a small program.

pub mod cli;
pub mod efficiency;
pub mod encoder;
pub mod engine;
pub mod flow;
pub mod rng;
pub mod tensor;
pub mod trace;

pub use efficiency::{
    estimate as flops_estimate, flops_prefill, preset, FlopsEstimate, ModelDims, ModelPreset,
    StackDims, TokenSchedule,
};
pub use encoder::{build_encoder, trace_from_layers, EncoderConfig, EncoderError, EncoderState};
pub use engine::{
    baseline_single_layer, cumulative_update, global_attention, multi_criteria_score, prune_count,
    run_schedule, select_keep, EngineError, LayerRecord, PruneConfig, PruneReport, PruneStage,
    RunMode, ScheduleSource,
};
pub use flow::{
    criteria_report, density_stats, entropy, entropy_curve, flow_graph, flow_graphs,
    CriteriaReport, DensityStats, EntropyStats, FlowError, FlowGraph, TokenGrid,
};
pub use tensor::{
    attention_from_qk, average_heads, l1_norm_rows, softmax_rows, DenseTensor, TensorError,
};
pub use trace::{read_trace, write_trace, LayerTrace, Qkv, TraceError, TraceFile};
