//! Compare the three importance criteria (attention strength, semantic
//! similarity, information density) at one layer and list the tokens they
//! disagree on: highly attended yet low-density or low-similarity.
//!
//! ```sh
//! cargo run --example criteria_contradictions
//! ```

use flowcut::encoder::{build_encoder, trace_from_layers, EncoderConfig};
use flowcut::flow::criteria_report;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = EncoderConfig {
        seed: 11,
        ..EncoderConfig::default()
    };
    let mut state = build_encoder(&cfg)?;
    let layers = state.encode(&cfg.synthetic_grid())?;
    let trace = trace_from_layers(&cfg, layers)?;

    let layer = trace.num_layers() - 2;
    let report = criteria_report(&trace, layer, 0.2)?;

    println!("criteria at layer {layer} (q = {}):", report.q);
    println!(
        "  rank correlations: attn/sim {:.3}, attn/density {:.3}, sim/density {:.3}",
        report.rho_attention_similarity,
        report.rho_attention_density,
        report.rho_similarity_density
    );
    if report.contradictory.is_empty() {
        println!("  no contradictory tokens at this fraction");
    } else {
        println!("  contradictory tokens (top-q attention, bottom-q elsewhere):");
        for &t in &report.contradictory {
            let p = &report.profile;
            println!(
                "    token {t:>2}: attn rank {:>2}, sim rank {:>2}, density rank {:>2}",
                p.rank_attention[t], p.rank_similarity[t], p.rank_density[t]
            );
        }
    }
    Ok(())
}
