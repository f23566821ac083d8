//! Information inflow/outflow per layer: for every token, the argmax
//! source and destination of its attention, plus the mean grid distance to
//! the attended token.
//!
//! ```sh
//! cargo run --example flow_graph
//! ```

use flowcut::encoder::{build_encoder, trace_from_layers, EncoderConfig};
use flowcut::flow::flow_graphs;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = EncoderConfig {
        seed: 3,
        ..EncoderConfig::default()
    };
    let mut state = build_encoder(&cfg)?;
    let layers = state.encode(&cfg.synthetic_grid())?;
    let trace = trace_from_layers(&cfg, layers)?;

    let graphs = flow_graphs(&trace)?;
    println!("layer  mean_attention_distance  tokens_flowing_to_cls");
    for g in &graphs {
        let to_cls = g.inflow.iter().skip(1).filter(|&&src| src == 0).count();
        println!(
            "{:>5}  {:>23.4}  {:>21}",
            g.layer, g.mean_attention_distance, to_cls
        );
    }

    let last = graphs.last().expect("trace has layers");
    println!("\nfinal-layer inflow of the first five patch tokens:");
    for token in 1..6 {
        println!("  token {token:>2} <- token {}", last.inflow[token]);
    }
    Ok(())
}
