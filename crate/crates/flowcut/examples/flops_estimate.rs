//! Prefill FLOPs for a 7B-scale model under different visual token
//! budgets, reported as ratios against the unpruned run.
//!
//! ```sh
//! cargo run --example flops_estimate
//! ```

use flowcut::efficiency::{estimate, preset, TokenSchedule};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let p = preset("llava15-7b")?;
    let layers = p.dims.language.layers;
    let text_tokens = 40usize;

    let schedule =
        |visual: usize| TokenSchedule::constant(layers, visual, p.vision_tokens, text_tokens);
    let full = estimate(&p.dims, &schedule(p.max_visual_tokens))?;
    println!(
        "{}: {} visual + {text_tokens} text tokens -> {:.2} TFLOPs",
        p.name,
        p.max_visual_tokens,
        full.total_flops / 1e12
    );

    println!("\nvisual  TFLOPs  ratio");
    for visual in [576usize, 192, 128, 64, 32] {
        let e = estimate(&p.dims, &schedule(visual))?;
        println!(
            "{visual:>6}  {:>6.2}  {:.3}",
            e.total_flops / 1e12,
            e.total_flops / full.total_flops
        );
    }

    println!(
        "\nassumptions: {} FLOPs per MAC, formula {} per layer, vision tower {}",
        full.assumptions.mac_flops,
        full.assumptions.per_layer_formula,
        if full.assumptions.includes_vision_tower {
            "included"
        } else {
            "excluded"
        }
    );
    Ok(())
}
