//! Show the entropy-adaptive prune count reacting to attention
//! concentration. The random-weight toy encoder keeps attention close to
//! uniform, so this example builds a synthetic trace whose CLS attention
//! sharpens layer by layer: pruning stays conservative while entropy is
//! high and ramps up as attention concentrates.
//!
//! ```sh
//! cargo run --example adaptive_schedule
//! ```

use flowcut::engine::{run_schedule, PruneConfig, ScheduleSource};
use flowcut::rng::SplitMix64;
use flowcut::tensor::DenseTensor;
use flowcut::trace::{LayerTrace, Qkv, TraceFile};

/// Trace whose CLS attention row is `softmax(sharpness * preference)` with
/// sharpness growing over depth.
fn concentrating_trace(layers: usize, patches: usize, seed: u64) -> TraceFile {
    let tokens = patches + 1;
    let dim = 8usize;
    let mut rng = SplitMix64::new(seed);
    let preference: Vec<f32> = (0..patches).map(|_| rng.next_unit_f32()).collect();
    let mut layer_list = Vec::with_capacity(layers);
    for layer in 0..layers {
        let sharpness = 1.5 * layer as f32;
        let mut cls_row = vec![0.0f32];
        let mut sum = 0.0f32;
        let exps: Vec<f32> = preference.iter().map(|&p| (sharpness * p).exp()).collect();
        exps.iter().for_each(|&e| sum += e);
        cls_row.extend(exps.iter().map(|&e| e / sum));

        let mut attn = cls_row;
        let uniform = vec![1.0 / tokens as f32; tokens];
        for _ in 1..tokens {
            attn.extend(&uniform);
        }
        let mut tensor = |scale: f32| {
            let data = (0..tokens * dim)
                .map(|_| rng.next_weight() * scale)
                .collect();
            DenseTensor::new(vec![1, tokens, dim], data).unwrap()
        };
        layer_list.push(LayerTrace {
            qkv: Some(Qkv {
                q: tensor(1.0),
                k: tensor(1.0),
                v: tensor(20.0),
            }),
            attn: Some(DenseTensor::new(vec![1, tokens, tokens], attn).unwrap()),
        });
    }
    TraceFile::new(1, tokens, dim, dim, true, 8, 8, layer_list).unwrap()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let trace = concentrating_trace(12, 64, 2024);
    let report = run_schedule(ScheduleSource::Trace(&trace), &PruneConfig::new(16))?;

    println!("layer  active  r_H     P   dropped  note");
    for r in &report.records {
        let note = if !r.prune_event {
            ""
        } else if r.layer == trace.num_layers() - 2 {
            "final event forces the target"
        } else {
            "adaptive event"
        };
        println!(
            "{:>5}  {:>6}  {:.3}  {:>3}  {:>7}  {note}",
            r.layer,
            r.active_before,
            r.r_h,
            r.prune_count,
            r.dropped.len()
        );
    }
    println!("\nhigh entropy keeps pruning conservative; concentration permits deeper cuts");
    println!("final kept: {} tokens", report.final_kept.len());
    Ok(())
}
