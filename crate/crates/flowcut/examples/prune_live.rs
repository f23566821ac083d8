//! Run the full pruning schedule live: the encoder re-encodes the
//! shrinking token set after every prune event, and the adaptive count
//! reacts to the attention entropy of each layer.
//!
//! ```sh
//! cargo run --example prune_live
//! ```

use flowcut::encoder::{build_encoder, EncoderConfig};
use flowcut::engine::{run_schedule, PruneConfig, ScheduleSource};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let enc_cfg = EncoderConfig {
        seed: 1,
        ..EncoderConfig::default()
    };
    let mut state = build_encoder(&enc_cfg)?;
    state.embed_input(&enc_cfg.synthetic_grid())?;

    let cfg = PruneConfig::new(16); // 64 patches -> 16, pruning every 2 layers
    let report = run_schedule(ScheduleSource::Live(&mut state), &cfg)?;

    println!("layer  active  r_H     event  dropped");
    for r in &report.records {
        println!(
            "{:>5}  {:>6}  {:.4}  {:>5}  {:>7}",
            r.layer,
            r.active_before,
            r.r_h,
            if r.prune_event { "yes" } else { "" },
            r.dropped.len()
        );
    }
    println!(
        "\nfinal kept patches ({}): {:?}",
        report.final_kept.len(),
        report.final_kept
    );
    print!("{}", report.decisions_csv());
    Ok(())
}
