//! Plot-ready attention-entropy curve of the global attention vector
//! across encoder layers: the signal that drives the adaptive prune count.
//!
//! ```sh
//! cargo run --example entropy_curve
//! ```

use flowcut::encoder::{build_encoder, trace_from_layers, EncoderConfig};
use flowcut::flow::{entropy_csv, entropy_curve};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = EncoderConfig {
        seed: 7,
        ..EncoderConfig::default()
    };
    let mut state = build_encoder(&cfg)?;
    let layers = state.encode(&cfg.synthetic_grid())?;
    let trace = trace_from_layers(&cfg, layers)?;

    let curve = entropy_curve(&trace)?;
    print!("{}", entropy_csv(&curve));

    let most_focused = curve
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.r_h.total_cmp(&b.1.r_h))
        .expect("curve is non-empty");
    eprintln!(
        "most concentrated layer: {} (r_H = {:.4}); a ratio of 1 means uniform attention",
        most_focused.0, most_focused.1.r_h
    );
    Ok(())
}
