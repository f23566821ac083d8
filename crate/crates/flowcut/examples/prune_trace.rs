//! Offline pruning over a recorded trace, compared against the
//! single-layer attention-only baseline and a two-stage schedule that
//! first keeps twice the target and then halves it at the final layer.
//!
//! ```sh
//! cargo run --example prune_trace
//! ```

use flowcut::encoder::{build_encoder, trace_from_layers, EncoderConfig};
use flowcut::engine::{
    baseline_single_layer, run_schedule, PruneConfig, PruneStage, ScheduleSource,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let enc_cfg = EncoderConfig {
        seed: 9,
        ..EncoderConfig::default()
    };
    let mut state = build_encoder(&enc_cfg)?;
    let layers = state.encode(&enc_cfg.synthetic_grid())?;
    let trace = trace_from_layers(&enc_cfg, layers)?;
    let target = 16usize;

    let full = run_schedule(ScheduleSource::Trace(&trace), &PruneConfig::new(target))?;
    println!("multi-layer multi-criteria kept: {:?}", full.final_kept);

    let baseline = baseline_single_layer(&trace, trace.num_layers() - 2, target)?;
    println!("single-layer attention-only kept: {baseline:?}");
    let overlap = full
        .final_kept
        .iter()
        .filter(|t| baseline.contains(t))
        .count();
    println!("overlap: {overlap}/{target}");

    let mut two_stage = PruneConfig::new(target);
    two_stage.stages = vec![
        PruneStage {
            location: trace.num_layers() - 2,
            target: 2 * target,
        },
        PruneStage {
            location: trace.num_layers() - 1,
            target,
        },
    ];
    let staged = run_schedule(ScheduleSource::Trace(&trace), &two_stage)?;
    println!(
        "two-stage counts by layer: {:?} -> kept {}",
        staged.token_counts,
        staged.final_kept.len()
    );
    Ok(())
}
