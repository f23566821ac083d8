//! The pruning engine: global attention extraction, entropy-adaptive prune
//! counts, multi-criteria scoring, cumulative score tracking, the event
//! scheduler with ablation toggles, and baseline pruners.
//!
//! Tokens are identified by patch index (`0..N_patch`, grid order); the
//! CLS token, when present, sits in front of the patches in trace tensors
//! and is never pruned while layers remain. All score vectors are f64 even
//! though trace tensors are f32, so cumulative mixtures and entropy ratios
//! are stable. Ties in every selection are broken toward the lower index.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderError, EncoderState};
use crate::flow::{entropy, EntropyStats};
use crate::tensor::{attention_from_qk, average_heads, l1_norm_rows, DenseTensor, TensorError};
use crate::trace::{LayerTrace, TraceFile};

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub enum EngineError {
    /// The layer lacks tensors this operation needs.
    MissingTensors(&'static str),
    /// Two vectors that must align have different lengths.
    LengthMismatch {
        left: usize,
        right: usize,
    },
    KeepOutOfRange {
        keep: usize,
        len: usize,
    },
    LayerOutOfRange {
        layer: usize,
        layers: usize,
    },
    /// Attention mass over the patch tokens is zero, so the global vector
    /// cannot be renormalized.
    DegenerateAttention,
    /// A score vector summed to zero and cannot be normalized.
    ZeroScoreSum,
    /// Prune schedule cannot reach its targets.
    InfeasibleTarget(String),
    /// The trace has fewer layers than the schedule needs.
    TraceTooShort {
        layers: usize,
        needed: usize,
    },
    InvalidConfig(String),
    Encoder(EncoderError),
    Tensor(TensorError),
}

impl fmt::Display for EngineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::MissingTensors(what) => write!(f, "{what}"),
            Self::LengthMismatch { left, right } => {
                write!(f, "vector lengths disagree: {left} vs {right}")
            }
            Self::KeepOutOfRange { keep, len } => {
                write!(f, "cannot keep {keep} of {len} scores")
            }
            Self::LayerOutOfRange { layer, layers } => {
                write!(f, "layer {layer} out of range for {layers} layers")
            }
            Self::DegenerateAttention => {
                write!(f, "no attention mass on patch tokens")
            }
            Self::ZeroScoreSum => write!(f, "score vector sums to zero"),
            Self::InfeasibleTarget(why) => write!(f, "infeasible prune target: {why}"),
            Self::TraceTooShort { layers, needed } => {
                write!(
                    f,
                    "trace has {layers} layers but the schedule needs {needed}"
                )
            }
            Self::InvalidConfig(why) => write!(f, "invalid prune config: {why}"),
            Self::Encoder(e) => write!(f, "{e}"),
            Self::Tensor(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for EngineError {}

impl From<EncoderError> for EngineError {
    fn from(e: EncoderError) -> Self {
        Self::Encoder(e)
    }
}

impl From<TensorError> for EngineError {
    fn from(e: TensorError) -> Self {
        Self::Tensor(e)
    }
}

// ---------------------------------------------------------------------------
// Trace-derived signals
// ---------------------------------------------------------------------------

/// Attention averaged over heads, computed from stored attention when
/// present and from Q/K otherwise.
pub fn head_averaged_attention(layer: &LayerTrace) -> Result<DenseTensor, EngineError> {
    if let Some(attn) = &layer.attn {
        return Ok(average_heads(attn)?);
    }
    let qkv = layer.qkv.as_ref().ok_or(EngineError::MissingTensors(
        "layer has neither attention nor Q/K/V",
    ))?;
    let head_dim = qkv.q.shape()[2];
    let attn = attention_from_qk(&qkv.q, &qkv.k, head_dim)?;
    Ok(average_heads(&attn)?)
}

/// Global attention vector over patch tokens.
///
/// With a CLS token this is the CLS row of the head-averaged attention,
/// restricted to patch columns and renormalized to sum 1. Without one, a
/// global query is formed per head as the mean of the Q rows, attended
/// against K, and the resulting distributions are head-averaged.
pub fn global_attention(layer: &LayerTrace, has_cls: bool) -> Result<Vec<f64>, EngineError> {
    if has_cls {
        let avg = head_averaged_attention(layer)?;
        let n = avg.shape()[0];
        if n < 2 {
            return Err(EngineError::DegenerateAttention);
        }
        let row = avg.row(0);
        let sum: f64 = row[1..].iter().map(|&v| v as f64).sum();
        if sum <= 0.0 {
            return Err(EngineError::DegenerateAttention);
        }
        Ok(row[1..].iter().map(|&v| v as f64 / sum).collect())
    } else {
        let qkv = layer.qkv.as_ref().ok_or(EngineError::MissingTensors(
            "global attention without CLS requires Q/K/V",
        ))?;
        let [heads, n, hd] = [qkv.q.shape()[0], qkv.q.shape()[1], qkv.q.shape()[2]];
        let scale = 1.0 / (hd as f64).sqrt();
        let mut out = vec![0.0f64; n];
        for h in 0..heads {
            let qh = qkv.q.slab(h);
            let kh = qkv.k.slab(h);
            let mut q_global = vec![0.0f64; hd];
            for t in 0..n {
                for d in 0..hd {
                    q_global[d] += qh[t * hd + d] as f64;
                }
            }
            for v in q_global.iter_mut() {
                *v /= n as f64;
            }
            let logits: Vec<f64> = (0..n)
                .map(|j| {
                    let mut acc = 0.0f64;
                    for d in 0..hd {
                        acc += q_global[d] * kh[j * hd + d] as f64;
                    }
                    acc * scale
                })
                .collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for (o, e) in out.iter_mut().zip(&exps) {
                *o += e / sum;
            }
        }
        for v in out.iter_mut() {
            *v /= heads as f64;
        }
        Ok(out)
    }
}

/// Patch-token value vectors with heads concatenated along the feature
/// axis: `[N_patch, heads * value_dim]`.
pub fn patch_value_matrix(layer: &LayerTrace, has_cls: bool) -> Result<DenseTensor, EngineError> {
    let qkv = layer
        .qkv
        .as_ref()
        .ok_or(EngineError::MissingTensors("trace lacks QKV"))?;
    let [heads, tokens, vd] = [qkv.v.shape()[0], qkv.v.shape()[1], qkv.v.shape()[2]];
    let base = usize::from(has_cls);
    let patches = tokens - base;
    let mut out = vec![0.0f32; patches * heads * vd];
    for h in 0..heads {
        let vh = qkv.v.slab(h);
        for p in 0..patches {
            let src = &vh[(p + base) * vd..(p + base + 1) * vd];
            out[p * heads * vd + h * vd..p * heads * vd + (h + 1) * vd].copy_from_slice(src);
        }
    }
    Ok(DenseTensor::new(vec![patches, heads * vd], out).expect("value layout covers data"))
}

/// CLS value row with heads concatenated along the feature axis.
pub fn cls_value_row(layer: &LayerTrace) -> Result<Vec<f32>, EngineError> {
    let qkv = layer
        .qkv
        .as_ref()
        .ok_or(EngineError::MissingTensors("trace lacks QKV"))?;
    let [heads, _, vd] = [qkv.v.shape()[0], qkv.v.shape()[1], qkv.v.shape()[2]];
    let mut out = Vec::with_capacity(heads * vd);
    for h in 0..heads {
        out.extend_from_slice(&qkv.v.slab(h)[..vd]);
    }
    Ok(out)
}

/// Column means of a `[rows, cols]` tensor.
pub fn mean_rows(m: &DenseTensor) -> Vec<f32> {
    let (rows, cols) = (m.shape()[0], m.shape()[1]);
    let mut out = vec![0.0f64; cols];
    for r in 0..rows {
        for (o, &v) in out.iter_mut().zip(m.row(r)) {
            *o += v as f64;
        }
    }
    out.into_iter().map(|v| (v / rows as f64) as f32).collect()
}

// ---------------------------------------------------------------------------
// Scoring primitives
// ---------------------------------------------------------------------------

/// Round half away from zero, the rounding used everywhere a prune count
/// is formed.
fn round_half_away(x: f64) -> i64 {
    x.round() as i64
}

/// Entropy-adaptive prune count for one event.
///
/// `P = round(((N - T) / sqrt(L)) * (1 - r_H^2))`, clamped into
/// `[0, N - T]`, where `L` counts the remaining prune events in the
/// current stage including this one.
pub fn prune_count(
    n_active: usize,
    stage_target: usize,
    remaining_events: usize,
    r_h: f64,
) -> usize {
    debug_assert!(n_active >= stage_target);
    debug_assert!(remaining_events >= 1);
    let surplus = n_active.saturating_sub(stage_target);
    let amortized = surplus as f64 / (remaining_events.max(1) as f64).sqrt();
    let raw = amortized * (1.0 - r_h * r_h);
    let p = round_half_away(raw).max(0) as usize;
    p.min(surplus)
}

/// Per-token criterion vectors and the combined importance score.
#[derive(Debug, Clone, PartialEq)]
pub struct CriteriaScores {
    /// Attention strength: the global attention vector itself.
    pub attention: Vec<f64>,
    /// Semantic similarity of each value row to the global value vector.
    pub similarity: Vec<f64>,
    /// Information density: per-row L1 norm of the value vectors.
    pub density: Vec<f64>,
    /// Combined importance, or a copy of `attention` when the
    /// multi-criteria toggle is off.
    pub combined: Vec<f64>,
}

/// Multi-criteria importance over one layer's active patch tokens.
///
/// `v` holds the patch value rows `[N, d]` (heads concatenated) and `v_g`
/// the global value vector of length `d`. The combined score is
/// `(attention / Σattention + similarity / Σsimilarity) ⊙ density`; with
/// the toggle off the attention vector is returned unchanged.
pub fn multi_criteria_score(
    a_g: &[f64],
    v: &DenseTensor,
    v_g: &[f32],
    multi_criteria: bool,
) -> Result<CriteriaScores, EngineError> {
    let (rows, cols) = (v.shape()[0], v.shape()[1]);
    if a_g.len() != rows {
        return Err(EngineError::LengthMismatch {
            left: a_g.len(),
            right: rows,
        });
    }
    if v_g.len() != cols {
        return Err(EngineError::LengthMismatch {
            left: v_g.len(),
            right: cols,
        });
    }
    let scale = 1.0 / (cols as f64).sqrt();
    let logits: Vec<f64> = (0..rows)
        .map(|r| {
            let mut acc = 0.0f64;
            for (c, &x) in v.row(r).iter().enumerate() {
                acc += v_g[c] as f64 * x as f64;
            }
            acc * scale
        })
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let exp_sum: f64 = exps.iter().sum();
    let similarity: Vec<f64> = exps.iter().map(|&e| e / exp_sum).collect();
    let density = l1_norm_rows(v)?;

    let combined = if multi_criteria {
        let attn_sum: f64 = a_g.iter().sum();
        let sim_sum: f64 = similarity.iter().sum();
        if attn_sum <= 0.0 || sim_sum <= 0.0 {
            return Err(EngineError::ZeroScoreSum);
        }
        (0..rows)
            .map(|r| (a_g[r] / attn_sum + similarity[r] / sim_sum) * density[r])
            .collect()
    } else {
        a_g.to_vec()
    };
    Ok(CriteriaScores {
        attention: a_g.to_vec(),
        similarity,
        density,
        combined,
    })
}

/// One exponential-moving-average step of the cumulative score.
///
/// With no history (or the toggle off) the current score passes through;
/// otherwise the result is `w_history * prev + w_current * cur`.
pub fn cumulative_update(
    prev: Option<&[f64]>,
    cur: &[f64],
    w_history: f64,
    w_current: f64,
    cumulative: bool,
) -> Result<Vec<f64>, EngineError> {
    if !cumulative {
        return Ok(cur.to_vec());
    }
    match prev {
        None => Ok(cur.to_vec()),
        Some(p) => {
            if p.len() != cur.len() {
                return Err(EngineError::LengthMismatch {
                    left: p.len(),
                    right: cur.len(),
                });
            }
            Ok(p.iter()
                .zip(cur)
                .map(|(&h, &c)| w_history * h + w_current * c)
                .collect())
        }
    }
}

/// Split indices into the `keep` highest-scored (ties toward the lower
/// index) and the rest. Both sets come back in ascending index order.
pub fn select_keep(scores: &[f64], keep: usize) -> Result<(Vec<usize>, Vec<usize>), EngineError> {
    if keep > scores.len() {
        return Err(EngineError::KeepOutOfRange {
            keep,
            len: scores.len(),
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut kept = order[..keep].to_vec();
    let mut dropped = order[keep..].to_vec();
    kept.sort_unstable();
    dropped.sort_unstable();
    Ok((kept, dropped))
}

// ---------------------------------------------------------------------------
// Schedule configuration
// ---------------------------------------------------------------------------

/// One stage of a multi-stage schedule: prune down to `target` patches by
/// the event at layer `location`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneStage {
    pub location: usize,
    pub target: usize,
}

/// Pruning-run configuration. Defaults follow the reference setting:
/// prune every two layers, equal history/current weighting, every toggle
/// on, a single stage ending at the penultimate layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    /// Final number of patch tokens to keep.
    pub target_tokens: usize,
    /// Prune every `interval` layers (events at `l % interval == interval-1`).
    pub interval: usize,
    /// Ignore the interval and fire exactly one event per stage, at the
    /// stage location.
    pub single_event: bool,
    pub weight_history: f64,
    pub weight_current: f64,
    /// Entropy-adaptive per-event counts; off means an equal fixed quota
    /// per event with the remainder at the last event.
    pub adaptive_count: bool,
    /// Cumulative score tracking; off means each event scores from the
    /// current layer only.
    pub cumulative: bool,
    /// Multi-criteria scoring; off means attention-only scores.
    pub multi_criteria: bool,
    /// Stage list; empty means a single stage at the penultimate layer
    /// with `target_tokens` as the target.
    pub stages: Vec<PruneStage>,
    /// Include per-layer score vectors in the report.
    pub record_scores: bool,
}

impl PruneConfig {
    pub fn new(target_tokens: usize) -> Self {
        Self {
            target_tokens,
            interval: 2,
            single_event: false,
            weight_history: 0.5,
            weight_current: 0.5,
            adaptive_count: true,
            cumulative: true,
            multi_criteria: true,
            stages: Vec::new(),
            record_scores: false,
        }
    }

    fn validate(&self, initial_patches: usize) -> Result<(), EngineError> {
        if self.target_tokens == 0 {
            return Err(EngineError::InvalidConfig("target must be positive".into()));
        }
        if self.target_tokens > initial_patches {
            return Err(EngineError::InfeasibleTarget(format!(
                "target {} exceeds initial patch count {}",
                self.target_tokens, initial_patches
            )));
        }
        if self.interval == 0 {
            return Err(EngineError::InvalidConfig(
                "interval must be at least 1".into(),
            ));
        }
        let (wh, wc) = (self.weight_history, self.weight_current);
        if !(0.0..=1.0).contains(&wh) || !(0.0..=1.0).contains(&wc) {
            return Err(EngineError::InvalidConfig(
                "weights must lie in [0, 1]".into(),
            ));
        }
        if (wh + wc - 1.0).abs() > 1e-9 {
            return Err(EngineError::InvalidConfig("weights must sum to 1".into()));
        }
        Ok(())
    }

    /// Stage list with the single-stage default applied, validated against
    /// the layer count.
    fn resolve_stages(&self, num_layers: usize) -> Result<Vec<PruneStage>, EngineError> {
        if self.stages.is_empty() {
            if num_layers < 2 {
                return Err(EngineError::TraceTooShort {
                    layers: num_layers,
                    needed: 2,
                });
            }
            return Ok(vec![PruneStage {
                location: num_layers - 2,
                target: self.target_tokens,
            }]);
        }
        let stages = self.stages.clone();
        for pair in stages.windows(2) {
            if pair[1].location <= pair[0].location {
                return Err(EngineError::InvalidConfig(
                    "stage locations must be strictly increasing".into(),
                ));
            }
            if pair[1].target >= pair[0].target {
                return Err(EngineError::InfeasibleTarget(
                    "stage targets must be strictly decreasing".into(),
                ));
            }
        }
        let last = stages.last().expect("stage list is non-empty");
        if last.target != self.target_tokens {
            return Err(EngineError::InfeasibleTarget(format!(
                "last stage target {} must equal the final target {}",
                last.target, self.target_tokens
            )));
        }
        if last.location >= num_layers {
            return Err(EngineError::TraceTooShort {
                layers: num_layers,
                needed: last.location + 1,
            });
        }
        Ok(stages)
    }

    /// Event layers for a stage spanning `[begin, location]`.
    fn stage_events(&self, begin: usize, location: usize) -> Vec<usize> {
        let mut events: Vec<usize> = if self.single_event {
            Vec::new()
        } else {
            (begin..location)
                .filter(|l| l % self.interval == self.interval - 1)
                .collect()
        };
        events.push(location);
        events
    }
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Live,
    Trace,
}

/// Optional per-layer score vectors, aligned to the active patch list
/// before any drop at this layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    /// Global attention over the active patches (the attention criterion).
    pub attention: Vec<f64>,
    /// Similarity criterion; empty when multi-criteria scoring is off.
    pub similarity: Vec<f64>,
    /// Density criterion; empty when multi-criteria scoring is off.
    pub density: Vec<f64>,
    /// Combined per-layer importance score.
    pub combined: Vec<f64>,
    /// Cumulative score after this layer's update.
    pub cumulative: Vec<f64>,
}

/// What happened at one layer: entropy of the global attention, the prune
/// decision if this layer hosted an event, and the surviving tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub layer: usize,
    pub active_before: usize,
    pub h: f64,
    pub h_max: f64,
    pub r_h: f64,
    pub prune_event: bool,
    /// Prune events at this layer or later in the current stage; at an
    /// event layer this is the `L` of the adaptive count.
    pub remaining_events: usize,
    /// The count `P` the configured policy computed at this event (0 on
    /// non-event layers). Matches `dropped.len()` everywhere except a
    /// stage's final event, which enacts whatever drop forces the stage
    /// target exactly.
    pub prune_count: usize,
    /// Active patch indices after this layer, ascending.
    pub kept: Vec<usize>,
    /// Patch indices dropped at this layer, ascending.
    pub dropped: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores: Option<ScoreBreakdown>,
}

/// Full record of one pruning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub mode: RunMode,
    /// Trace mode approximates pruning by masking the recorded global
    /// attention to the active tokens and renormalizing, rather than
    /// re-encoding.
    pub masked_renormalized: bool,
    pub config: PruneConfig,
    pub stages: Vec<PruneStage>,
    pub records: Vec<LayerRecord>,
    /// Active patch count after each layer.
    pub token_counts: Vec<usize>,
    /// Final kept patch indices, ascending; exactly `target_tokens` long.
    pub final_kept: Vec<usize>,
}

impl PruneReport {
    /// Per-layer entropy curve recorded during the run.
    pub fn entropy_curve(&self) -> Vec<EntropyStats> {
        self.records
            .iter()
            .map(|r| EntropyStats {
                h: r.h,
                h_max: r.h_max,
                r_h: r.r_h,
            })
            .collect()
    }

    /// `decisions.csv`: one row per prune event.
    pub fn decisions_csv(&self) -> String {
        let mut out = String::from("layer,active_before,H,r_H,P,dropped,active_after\n");
        for r in self.records.iter().filter(|r| r.prune_event) {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.layer,
                r.active_before,
                r.h,
                r.r_h,
                r.prune_count,
                r.dropped.len(),
                r.kept.len()
            ));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Schedule runner
// ---------------------------------------------------------------------------

/// Where layer signals come from: a recorded trace, or a live encoder that
/// is re-encoded over the shrinking token set.
pub enum ScheduleSource<'a> {
    Trace(&'a TraceFile),
    Live(&'a mut EncoderState),
}

/// Per-layer signals needed by the scheduler, already restricted to the
/// active patches.
struct LayerSignals {
    a_g: Vec<f64>,
    values: Option<(DenseTensor, Vec<f32>)>,
}

fn mask_renormalize(full: &[f64], active: &[usize]) -> Result<Vec<f64>, EngineError> {
    let masked: Vec<f64> = active.iter().map(|&p| full[p]).collect();
    let sum: f64 = masked.iter().sum();
    if sum <= 0.0 {
        return Err(EngineError::DegenerateAttention);
    }
    Ok(masked.into_iter().map(|v| v / sum).collect())
}

fn select_rows(m: &DenseTensor, rows: &[usize]) -> DenseTensor {
    let cols = m.shape()[1];
    let mut data = Vec::with_capacity(rows.len() * cols);
    for &r in rows {
        data.extend_from_slice(m.row(r));
    }
    DenseTensor::new(vec![rows.len(), cols], data).expect("selected rows cover data")
}

/// Run the full pruning schedule and produce a report.
///
/// Cumulative scores update at every layer; prune events fire per stage at
/// layers `l % interval == interval - 1`, with the last event of each
/// stage at the stage location, where the active count is forced to the
/// stage target exactly.
pub fn run_schedule(
    source: ScheduleSource<'_>,
    cfg: &PruneConfig,
) -> Result<PruneReport, EngineError> {
    let (num_layers, initial_patches, has_cls, mode) = match &source {
        ScheduleSource::Trace(t) => (t.num_layers(), t.num_patches(), t.has_cls, RunMode::Trace),
        ScheduleSource::Live(state) => {
            if state.next_layer() != 0 || state.active_tokens().len() != state.config().num_tokens()
            {
                return Err(EngineError::InvalidConfig(
                    "live source must be a freshly embedded encoder".into(),
                ));
            }
            let c = state.config();
            (c.layers, c.num_patches(), c.has_cls, RunMode::Live)
        }
    };
    cfg.validate(initial_patches)?;
    let stages = cfg.resolve_stages(num_layers)?;
    if stages[0].target > initial_patches {
        return Err(EngineError::InfeasibleTarget(format!(
            "first stage target {} exceeds initial patch count {}",
            stages[0].target, initial_patches
        )));
    }

    let mut stage_begin = 0usize;
    let stage_events: Vec<Vec<usize>> = stages
        .iter()
        .map(|s| {
            let ev = cfg.stage_events(stage_begin, s.location);
            stage_begin = s.location + 1;
            ev
        })
        .collect();

    let mut source = source;
    let mut active: Vec<usize> = (0..initial_patches).collect();
    let mut s_cum: Option<Vec<f64>> = None;
    let mut records: Vec<LayerRecord> = Vec::with_capacity(num_layers);
    let mut token_counts = Vec::with_capacity(num_layers);
    let mut stage_idx = 0usize;
    let mut events_done = 0usize;
    // fixed per-event quota for the adaptive-count ablation, set at stage
    // entry from the active count
    let mut stage_quota = fixed_quota(initial_patches, stages[0].target, stage_events[0].len());

    for layer in 0..num_layers {
        let signals = layer_signals(&mut source, layer, has_cls, &active, cfg.multi_criteria)?;
        let ent = entropy(&signals.a_g);
        let cur: Vec<f64> = match &signals.values {
            Some((v, v_g)) => multi_criteria_score(&signals.a_g, v, v_g, true)?.combined,
            None => signals.a_g.clone(),
        };
        let updated = cumulative_update(
            s_cum.as_deref(),
            &cur,
            cfg.weight_history,
            cfg.weight_current,
            cfg.cumulative,
        )?;
        s_cum = Some(updated);

        let active_before = active.len();
        let in_stage = stage_idx < stages.len();
        let is_event = in_stage && stage_events[stage_idx].contains(&layer);
        let remaining_events = if in_stage {
            stage_events[stage_idx]
                .iter()
                .filter(|&&l| l >= layer)
                .count()
        } else {
            0
        };

        let mut dropped_patches: Vec<usize> = Vec::new();
        let mut prune_count_this = 0usize;
        if is_event {
            let stage = &stages[stage_idx];
            let surplus = active.len() - stage.target;
            let is_final = layer == stage.location;
            // the count the configured policy asks for; a stage's final
            // event enacts the full surplus instead so the target is hit
            // exactly, and the report keeps both numbers
            let policy_p = if cfg.adaptive_count {
                prune_count(active.len(), stage.target, remaining_events, ent.r_h)
            } else {
                stage_quota.min(surplus)
            };
            let enacted = if is_final { surplus } else { policy_p };
            let scores = s_cum.as_ref().expect("cumulative score set this layer");
            let (kept_local, dropped_local) = select_keep(scores, active.len() - enacted)?;
            dropped_patches = dropped_local.iter().map(|&i| active[i]).collect();
            if let ScheduleSource::Live(state) = &mut source {
                let base = usize::from(has_cls);
                let drop_tokens: Vec<usize> = dropped_patches.iter().map(|&p| p + base).collect();
                state.drop_tokens(&drop_tokens)?;
            }
            let kept_scores: Vec<f64> = kept_local.iter().map(|&i| scores[i]).collect();
            active = kept_local.iter().map(|&i| active[i]).collect();
            s_cum = Some(kept_scores);
            prune_count_this = policy_p;
            events_done += 1;
        }

        let scores_record = cfg.record_scores.then(|| {
            let (similarity, density) = match &signals.values {
                Some((v, v_g)) => {
                    let cs = multi_criteria_score(&signals.a_g, v, v_g, true)
                        .expect("scored once already");
                    (cs.similarity, cs.density)
                }
                None => (Vec::new(), Vec::new()),
            };
            ScoreBreakdown {
                attention: signals.a_g.clone(),
                similarity,
                density,
                combined: cur.clone(),
                cumulative: s_cum.clone().expect("cumulative score set this layer"),
            }
        });

        records.push(LayerRecord {
            layer,
            active_before,
            h: ent.h,
            h_max: ent.h_max,
            r_h: ent.r_h,
            prune_event: is_event,
            remaining_events,
            prune_count: prune_count_this,
            kept: active.clone(),
            dropped: dropped_patches,
            scores: scores_record,
        });
        token_counts.push(active.len());

        if in_stage && layer == stages[stage_idx].location {
            debug_assert_eq!(events_done, stage_events[stage_idx].len());
            stage_idx += 1;
            events_done = 0;
            if stage_idx < stages.len() {
                stage_quota = fixed_quota(
                    active.len(),
                    stages[stage_idx].target,
                    stage_events[stage_idx].len(),
                );
            }
        }
    }

    if active.len() != cfg.target_tokens {
        return Err(EngineError::InfeasibleTarget(format!(
            "run ended with {} tokens instead of {}",
            active.len(),
            cfg.target_tokens
        )));
    }
    Ok(PruneReport {
        mode,
        masked_renormalized: mode == RunMode::Trace,
        config: cfg.clone(),
        stages,
        records,
        token_counts,
        final_kept: active,
    })
}

fn fixed_quota(active: usize, target: usize, num_events: usize) -> usize {
    let surplus = active.saturating_sub(target);
    round_half_away(surplus as f64 / num_events.max(1) as f64).max(0) as usize
}

fn layer_signals(
    source: &mut ScheduleSource<'_>,
    layer: usize,
    has_cls: bool,
    active: &[usize],
    multi_criteria: bool,
) -> Result<LayerSignals, EngineError> {
    match source {
        ScheduleSource::Trace(t) => {
            let lt = &t.layers[layer];
            let full = global_attention(lt, has_cls)?;
            let a_g = mask_renormalize(&full, active)?;
            let values = if multi_criteria {
                let v_full = patch_value_matrix(lt, has_cls)?;
                let v = select_rows(&v_full, active);
                let v_g = if has_cls {
                    cls_value_row(lt)?
                } else {
                    mean_rows(&v)
                };
                Some((v, v_g))
            } else {
                None
            };
            Ok(LayerSignals { a_g, values })
        }
        ScheduleSource::Live(state) => {
            let lt = state.encode_step(layer)?;
            let a_g = global_attention(&lt, has_cls)?;
            let values = if multi_criteria {
                let v = patch_value_matrix(&lt, has_cls)?;
                let v_g = if has_cls {
                    cls_value_row(&lt)?
                } else {
                    mean_rows(&v)
                };
                Some((v, v_g))
            } else {
                None
            };
            Ok(LayerSignals { a_g, values })
        }
    }
}

/// Keep the top `target` patches by global attention at a single layer,
/// under the same lowest-index tie-break as the scheduler.
pub fn baseline_single_layer(
    trace: &TraceFile,
    layer: usize,
    target: usize,
) -> Result<Vec<usize>, EngineError> {
    if layer >= trace.num_layers() {
        return Err(EngineError::LayerOutOfRange {
            layer,
            layers: trace.num_layers(),
        });
    }
    let a_g = global_attention(&trace.layers[layer], trace.has_cls)?;
    let (kept, _) = select_keep(&a_g, target)?;
    Ok(kept)
}
