//! Closed-form prefill FLOPs estimation for transformer stacks under
//! token-pruning schedules.
//!
//! Each layer processing `n` tokens costs `2 * (4*n*d^2 + 2*n^2*d +
//! 2*n*d*m)` FLOPs: QKV and output projections, attention scores plus the
//! weighted sum, and the two MLP matmuls, counting a multiply-add as 2
//! FLOPs. Totals cover the language stack (visual plus text tokens per
//! layer) and, when configured, a vision tower at a fixed token count.
//! Absolute numbers depend on these accounting choices, so comparisons
//! should be made as ratios between estimates that share them; the
//! assumptions are echoed in every estimate.

use std::fmt;

use serde::{Deserialize, Serialize};

/// One transformer stack: layer count, hidden width, MLP width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackDims {
    pub layers: usize,
    pub hidden: usize,
    pub intermediate: usize,
}

/// Model dimensions: the language stack plus an optional vision tower.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    pub language: StackDims,
    pub vision: Option<StackDims>,
}

/// Token counts per layer. The language stack sees the per-layer visual
/// count plus the fixed text count; the vision tower always runs at its
/// own fixed count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenSchedule {
    /// Visual tokens alive at each language layer; must be non-increasing.
    pub visual_per_layer: Vec<usize>,
    /// Sequence length of the vision tower (0 disables it).
    pub vision_tokens: usize,
    pub text_tokens: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EfficiencyError {
    UnknownPreset(String),
    /// Visual token counts grew between layers.
    NonMonotonicSchedule {
        layer: usize,
    },
    /// Schedule length disagrees with the language layer count.
    ScheduleLength {
        expected: usize,
        got: usize,
    },
}

impl fmt::Display for EfficiencyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::UnknownPreset(name) => write!(f, "unknown model preset '{name}'"),
            Self::NonMonotonicSchedule { layer } => {
                write!(f, "visual token count increases at layer {layer}")
            }
            Self::ScheduleLength { expected, got } => {
                write!(f, "schedule covers {got} layers, model has {expected}")
            }
        }
    }
}

impl std::error::Error for EfficiencyError {}

impl TokenSchedule {
    /// Constant visual count across every language layer.
    pub fn constant(
        language_layers: usize,
        visual_tokens: usize,
        vision_tokens: usize,
        text_tokens: usize,
    ) -> Self {
        Self {
            visual_per_layer: vec![visual_tokens; language_layers],
            vision_tokens,
            text_tokens,
        }
    }

    fn validate(&self, language_layers: usize) -> Result<(), EfficiencyError> {
        if self.visual_per_layer.len() != language_layers {
            return Err(EfficiencyError::ScheduleLength {
                expected: language_layers,
                got: self.visual_per_layer.len(),
            });
        }
        for (i, w) in self.visual_per_layer.windows(2).enumerate() {
            if w[1] > w[0] {
                return Err(EfficiencyError::NonMonotonicSchedule { layer: i + 1 });
            }
        }
        Ok(())
    }
}

/// FLOPs for one layer over `n` tokens.
pub fn layer_flops(n: usize, d: usize, m: usize) -> f64 {
    let (n, d, m) = (n as f64, d as f64, m as f64);
    2.0 * (4.0 * n * d * d + 2.0 * n * n * d + 2.0 * n * d * m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerFlops {
    pub stack: String,
    pub layer: usize,
    pub tokens: usize,
    pub flops: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsAssumptions {
    pub mac_flops: u32,
    pub per_layer_formula: String,
    pub includes_vision_tower: bool,
    pub includes_text_tokens: bool,
    pub text_tokens: usize,
    pub vision_tokens: usize,
}

/// A full estimate: total, per-layer breakdown, and the accounting
/// assumptions it was made under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsEstimate {
    pub total_flops: f64,
    pub language_flops: f64,
    pub vision_flops: f64,
    pub dims: ModelDims,
    pub per_layer: Vec<LayerFlops>,
    pub assumptions: FlopsAssumptions,
}

/// Total prefill FLOPs under a schedule.
pub fn flops_prefill(dims: &ModelDims, sched: &TokenSchedule) -> Result<f64, EfficiencyError> {
    Ok(estimate(dims, sched)?.total_flops)
}

/// Full estimate with per-layer breakdown.
pub fn estimate(dims: &ModelDims, sched: &TokenSchedule) -> Result<FlopsEstimate, EfficiencyError> {
    sched.validate(dims.language.layers)?;
    let mut per_layer = Vec::new();
    let mut vision_flops = 0.0f64;
    if let Some(v) = &dims.vision {
        if sched.vision_tokens > 0 {
            for l in 0..v.layers {
                let f = layer_flops(sched.vision_tokens, v.hidden, v.intermediate);
                per_layer.push(LayerFlops {
                    stack: "vision".into(),
                    layer: l,
                    tokens: sched.vision_tokens,
                    flops: f,
                });
                vision_flops += f;
            }
        }
    }
    let mut language_flops = 0.0f64;
    let lang = &dims.language;
    for (l, &visual) in sched.visual_per_layer.iter().enumerate() {
        let tokens = visual + sched.text_tokens;
        let f = layer_flops(tokens, lang.hidden, lang.intermediate);
        per_layer.push(LayerFlops {
            stack: "language".into(),
            layer: l,
            tokens,
            flops: f,
        });
        language_flops += f;
    }
    Ok(FlopsEstimate {
        total_flops: vision_flops + language_flops,
        language_flops,
        vision_flops,
        dims: dims.clone(),
        per_layer,
        assumptions: FlopsAssumptions {
            mac_flops: 2,
            per_layer_formula: "2*(4*n*d^2 + 2*n^2*d + 2*n*d*m)".into(),
            includes_vision_tower: dims.vision.is_some() && sched.vision_tokens > 0,
            includes_text_tokens: sched.text_tokens > 0,
            text_tokens: sched.text_tokens,
            vision_tokens: sched.vision_tokens,
        },
    })
}

/// A named architecture: dimensions plus its published token counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPreset {
    pub name: String,
    pub dims: ModelDims,
    /// Vision tower sequence length (patches plus CLS), per encoded image.
    pub vision_tokens: usize,
    /// Visual tokens the unpruned model feeds to the language stack.
    pub max_visual_tokens: usize,
}

pub const PRESET_NAMES: [&str; 2] = ["llava15-7b", "llava-next-7b"];

/// Published architecture dimensions for a known model family.
pub fn preset(name: &str) -> Result<ModelPreset, EfficiencyError> {
    // 7B language stack; CLIP ViT-L/14-336 tower (577 tokens per image)
    let language = StackDims {
        layers: 32,
        hidden: 4096,
        intermediate: 11008,
    };
    let vision = StackDims {
        layers: 24,
        hidden: 1024,
        intermediate: 4096,
    };
    match name {
        "llava15-7b" => Ok(ModelPreset {
            name: name.into(),
            dims: ModelDims {
                language,
                vision: Some(vision),
            },
            vision_tokens: 577,
            max_visual_tokens: 576,
        }),
        // high-resolution variant: up to five crops through the tower
        "llava-next-7b" => Ok(ModelPreset {
            name: name.into(),
            dims: ModelDims {
                language,
                vision: Some(vision),
            },
            vision_tokens: 5 * 577,
            max_visual_tokens: 2880,
        }),
        other => Err(EfficiencyError::UnknownPreset(other.into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn llava() -> ModelPreset {
        preset("llava15-7b").unwrap()
    }

    #[test]
    fn zero_tokens_cost_nothing() {
        let p = llava();
        let sched = TokenSchedule::constant(p.dims.language.layers, 0, 0, 0);
        assert_eq!(flops_prefill(&p.dims, &sched).unwrap(), 0.0);
    }

    #[test]
    fn wider_mlp_costs_more() {
        let dims = ModelDims {
            language: StackDims {
                layers: 2,
                hidden: 64,
                intermediate: 128,
            },
            vision: None,
        };
        let mut wider = dims.clone();
        wider.language.intermediate *= 2;
        let sched = TokenSchedule::constant(2, 10, 0, 4);
        assert!(flops_prefill(&wider, &sched).unwrap() > flops_prefill(&dims, &sched).unwrap());
    }

    #[test]
    fn pruning_ratio_matches_published_tflops() {
        // 64 vs 576 visual tokens: published 1.95 / 8.82 ≈ 0.221
        let p = llava();
        let layers = p.dims.language.layers;
        let full = TokenSchedule::constant(layers, 576, p.vision_tokens, 40);
        let pruned = TokenSchedule::constant(layers, 64, p.vision_tokens, 40);
        let ratio =
            flops_prefill(&p.dims, &pruned).unwrap() / flops_prefill(&p.dims, &full).unwrap();
        let published = 1.95 / 8.82;
        assert!(
            (ratio - published).abs() <= published * 0.2,
            "ratio {ratio} outside ±20% of {published}"
        );
    }

    #[test]
    fn presets_carry_published_dimensions() {
        let p = llava();
        assert_eq!(
            p.dims.language,
            StackDims {
                layers: 32,
                hidden: 4096,
                intermediate: 11008
            }
        );
        let next = preset("llava-next-7b").unwrap();
        assert_eq!(next.dims.language, p.dims.language);
        assert_eq!(next.max_visual_tokens, 2880);
    }

    #[test]
    fn unknown_preset_rejected() {
        assert_eq!(
            preset("foo").unwrap_err(),
            EfficiencyError::UnknownPreset("foo".into())
        );
    }

    #[test]
    fn monotone_in_every_argument() {
        let base = layer_flops(10, 8, 16);
        assert!(layer_flops(11, 8, 16) > base);
        assert!(layer_flops(10, 9, 16) > base);
        assert!(layer_flops(10, 8, 17) > base);
    }

    #[test]
    fn token_scaling_matches_term_oracle() {
        // scaling n by k scales the attention term by k^2 and the linear
        // terms by k
        let (d, m) = (32usize, 64usize);
        for k in [2usize, 3, 5] {
            for n in [4usize, 7, 12] {
                let proj = |n: usize| 2.0 * 4.0 * (n * d * d) as f64;
                let attn = |n: usize| 2.0 * 2.0 * (n * n * d) as f64;
                let mlp = |n: usize| 2.0 * 2.0 * (n * d * m) as f64;
                let got = layer_flops(n * k, d, m);
                let want = k as f64 * proj(n) + (k * k) as f64 * attn(n) + k as f64 * mlp(n);
                assert!((got - want).abs() < 1e-6 * want.max(1.0));
            }
        }
    }

    #[test]
    fn growing_schedule_rejected() {
        let dims = ModelDims {
            language: StackDims {
                layers: 3,
                hidden: 8,
                intermediate: 16,
            },
            vision: None,
        };
        let sched = TokenSchedule {
            visual_per_layer: vec![4, 6, 6],
            vision_tokens: 0,
            text_tokens: 0,
        };
        assert_eq!(
            flops_prefill(&dims, &sched).unwrap_err(),
            EfficiencyError::NonMonotonicSchedule { layer: 1 }
        );
    }

    #[test]
    fn estimate_breakdown_sums_to_total() {
        let p = llava();
        let sched = TokenSchedule::constant(p.dims.language.layers, 64, p.vision_tokens, 40);
        let e = estimate(&p.dims, &sched).unwrap();
        let sum: f64 = e.per_layer.iter().map(|l| l.flops).sum();
        assert!((sum - e.total_flops).abs() < 1e-6 * e.total_flops);
        assert!(e.assumptions.includes_vision_tower);
    }
}
