//! Generate a deterministic encoder trace, write it to disk, and read it
//! back.
//!
//! ```sh
//! cargo run --example generate_trace
//! ```

use flowcut::encoder::{build_encoder, trace_from_layers, EncoderConfig};
use flowcut::trace::{read_trace, write_trace};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = EncoderConfig {
        seed: 42,
        ..EncoderConfig::default()
    };
    println!(
        "encoder: {} layers, {} heads, dim {}, grid {}x{}, cls={}",
        cfg.layers, cfg.heads, cfg.model_dim, cfg.grid_rows, cfg.grid_cols, cfg.has_cls
    );

    let mut state = build_encoder(&cfg)?;
    let layers = state.encode(&cfg.synthetic_grid())?;
    let trace = trace_from_layers(&cfg, layers)?;

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("trace.fctr");
    write_trace(&trace, &path)?;
    let size = std::fs::metadata(&path)?.len();
    println!("wrote {} ({size} bytes)", path.display());

    let back = read_trace(&path)?;
    assert_eq!(back, trace);
    println!(
        "round trip ok: {} layers, {} tokens, qkv={}, attention={}",
        back.num_layers(),
        back.num_tokens,
        back.has_qkv(),
        back.has_attention()
    );
    Ok(())
}
