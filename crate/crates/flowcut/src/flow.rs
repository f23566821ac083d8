//! Information-flow diagnostics over attention traces: inflow/outflow
//! graphs, attention-distance curves, global-attention entropy, value-norm
//! statistics, and the multi-criteria contradiction report.
//!
//! Every function here is pure over an immutable trace; callers may
//! parallelize across layers or files freely. Outputs are plot-ready rows,
//! rendered to CSV by the `*_csv` helpers.

use std::fmt;

use crate::engine::{
    self, cls_value_row, global_attention, head_averaged_attention, patch_value_matrix, EngineError,
};
use crate::tensor::DenseTensor;
use crate::trace::TraceFile;

/// Maps token indices to patch-grid coordinates; token 0 is the CLS token
/// when `has_cls` is set and has no grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenGrid {
    pub rows: usize,
    pub cols: usize,
    pub has_cls: bool,
}

impl TokenGrid {
    pub fn new(rows: usize, cols: usize, has_cls: bool) -> Self {
        Self {
            rows,
            cols,
            has_cls,
        }
    }

    pub fn from_trace(trace: &TraceFile) -> Self {
        Self::new(trace.grid_rows, trace.grid_cols, trace.has_cls)
    }

    pub fn num_patches(&self) -> usize {
        self.rows * self.cols
    }

    pub fn num_tokens(&self) -> usize {
        self.num_patches() + usize::from(self.has_cls)
    }

    /// Grid cell of a token, `None` for the CLS token.
    pub fn coord(&self, token: usize) -> Option<(usize, usize)> {
        if self.has_cls {
            if token == 0 {
                None
            } else {
                Some(self.patch_coord(token - 1))
            }
        } else {
            Some(self.patch_coord(token))
        }
    }

    /// Grid cell of a patch index (row-major).
    pub fn patch_coord(&self, patch: usize) -> (usize, usize) {
        (patch / self.cols, patch % self.cols)
    }

    /// Euclidean distance between two grid cells.
    pub fn distance(&self, a: (usize, usize), b: (usize, usize)) -> f64 {
        let dr = a.0 as f64 - b.0 as f64;
        let dc = a.1 as f64 - b.1 as f64;
        (dr * dr + dc * dc).sqrt()
    }
}

/// Argmax information flow for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowGraph {
    pub layer: usize,
    /// `inflow[i]`: the token that `i` attends to most (its primary source).
    pub inflow: Vec<usize>,
    /// `outflow[j]`: the token that attends to `j` most (its primary
    /// destination).
    pub outflow: Vec<usize>,
    /// Grid distance from each token to its patch-restricted inflow target;
    /// 0 for the CLS token, which has no grid cell.
    pub inflow_distance: Vec<f64>,
    /// Mean of `inflow_distance` over patch tokens only.
    pub mean_attention_distance: f64,
}

/// Per-layer entropy of the global attention vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyStats {
    pub h: f64,
    pub h_max: f64,
    pub r_h: f64,
}

/// Five-number summary plus mean of per-token value L1 norms for one layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityStats {
    pub layer: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

/// Per-token criterion values and rank vectors at one layer. Ranks are
/// permutations of `0..N_patch`; rank 0 is the highest value, ties broken
/// toward the lower token index.
#[derive(Debug, Clone, PartialEq)]
pub struct CriteriaProfile {
    pub attention: Vec<f64>,
    pub similarity: Vec<f64>,
    pub density: Vec<f64>,
    pub rank_attention: Vec<usize>,
    pub rank_similarity: Vec<usize>,
    pub rank_density: Vec<usize>,
}

/// Contradiction analysis between the three importance criteria.
#[derive(Debug, Clone, PartialEq)]
pub struct CriteriaReport {
    pub layer: usize,
    pub q: f64,
    pub profile: CriteriaProfile,
    /// Tokens in the top-q fraction by attention but the bottom-q fraction
    /// by similarity or by density.
    pub contradictory: Vec<usize>,
    pub rho_attention_similarity: f64,
    pub rho_attention_density: f64,
    pub rho_similarity_density: f64,
}

/// Errors raised by the diagnostics.
#[derive(Debug)]
pub enum FlowError {
    /// Attention input is not a square token-by-token map.
    NonSquare(Vec<usize>),
    /// Attention size disagrees with the grid.
    GridMismatch {
        tokens: usize,
        grid_tokens: usize,
    },
    LayerOutOfRange {
        layer: usize,
        layers: usize,
    },
    /// Contradiction fraction must lie in (0, 0.5].
    InvalidFraction(f64),
    /// The underlying trace lacks the tensors this diagnostic needs.
    Engine(EngineError),
}

impl fmt::Display for FlowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NonSquare(shape) => write!(f, "attention map is not square: {shape:?}"),
            Self::GridMismatch {
                tokens,
                grid_tokens,
            } => {
                write!(
                    f,
                    "attention over {tokens} tokens but grid has {grid_tokens}"
                )
            }
            Self::LayerOutOfRange { layer, layers } => {
                write!(f, "layer {layer} out of range for a {layers}-layer trace")
            }
            Self::InvalidFraction(q) => {
                write!(f, "fraction q={q} outside (0, 0.5]")
            }
            Self::Engine(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for FlowError {}

impl From<EngineError> for FlowError {
    fn from(e: EngineError) -> Self {
        Self::Engine(e)
    }
}

/// Shannon entropy of a nonnegative weight vector, with `0 ln 0 = 0`.
///
/// The input is treated as unnormalized: weights are divided by their sum,
/// in f64, before the entropy is accumulated, so `H = ln s - (Σ w ln w)/s`.
/// `h_max` is `ln` of the vector length and `r_h = h / h_max`, defined as 1
/// for the degenerate single-element vector.
pub fn entropy(weights: &[f64]) -> EntropyStats {
    let n = weights.len();
    let h_max = if n > 1 { (n as f64).ln() } else { 0.0 };
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 || n <= 1 {
        return EntropyStats {
            h: 0.0,
            h_max,
            r_h: if h_max == 0.0 { 1.0 } else { 0.0 },
        };
    }
    let mut acc = 0.0f64;
    for &w in weights {
        if w > 0.0 {
            acc += w * w.ln();
        }
    }
    let h = (sum.ln() - acc / sum).clamp(0.0, h_max);
    let r_h = if h_max == 0.0 { 1.0 } else { h / h_max };
    EntropyStats { h, h_max, r_h }
}

/// Argmax of a slice, ties broken toward the lower index.
fn argmax(values: impl Iterator<Item = f32>) -> usize {
    let mut best = 0usize;
    let mut best_v = f32::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

/// Inflow/outflow argmax graph and attention-distance summary of one
/// head-averaged attention map.
pub fn flow_graph(
    a_avg: &DenseTensor,
    grid: &TokenGrid,
    layer: usize,
) -> Result<FlowGraph, FlowError> {
    let shape = a_avg.shape();
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(FlowError::NonSquare(shape.to_vec()));
    }
    let n = shape[0];
    if n != grid.num_tokens() {
        return Err(FlowError::GridMismatch {
            tokens: n,
            grid_tokens: grid.num_tokens(),
        });
    }
    let inflow: Vec<usize> = (0..n)
        .map(|i| argmax(a_avg.row(i).iter().copied()))
        .collect();
    let outflow: Vec<usize> = (0..n)
        .map(|j| argmax((0..n).map(|i| a_avg.data()[i * n + j])))
        .collect();

    let patch_base = usize::from(grid.has_cls);
    let mut inflow_distance = vec![0.0f64; n];
    let mut total = 0.0f64;
    for i in patch_base..n {
        // primary source restricted to patch targets; CLS has no grid cell
        let target_patch = argmax(a_avg.row(i)[patch_base..].iter().copied());
        let here = grid.coord(i).expect("patch token has a grid cell");
        let there = grid.patch_coord(target_patch);
        let d = grid.distance(here, there);
        inflow_distance[i] = d;
        total += d;
    }
    let patches = n - patch_base;
    let mean_attention_distance = if patches > 0 {
        total / patches as f64
    } else {
        0.0
    };
    Ok(FlowGraph {
        layer,
        inflow,
        outflow,
        inflow_distance,
        mean_attention_distance,
    })
}

/// Flow graphs for every layer of a trace.
pub fn flow_graphs(trace: &TraceFile) -> Result<Vec<FlowGraph>, FlowError> {
    let grid = TokenGrid::from_trace(trace);
    trace
        .layers
        .iter()
        .enumerate()
        .map(|(l, layer)| {
            let avg = head_averaged_attention(layer)?;
            flow_graph(&avg, &grid, l)
        })
        .collect()
}

/// Per-layer `(H, H_max, r_H)` of the global attention vector.
pub fn entropy_curve(trace: &TraceFile) -> Result<Vec<EntropyStats>, FlowError> {
    trace
        .layers
        .iter()
        .map(|layer| {
            let a_g = global_attention(layer, trace.has_cls)?;
            Ok(entropy(&a_g))
        })
        .collect()
}

/// Linear-interpolation quantile of an ascending-sorted slice.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = (n - 1) as f64 * p;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Per-layer distribution summary of patch-token value L1 norms, heads
/// concatenated along the feature axis before the norm.
pub fn density_stats(trace: &TraceFile) -> Result<Vec<DensityStats>, FlowError> {
    trace
        .layers
        .iter()
        .enumerate()
        .map(|(l, layer)| {
            let v = patch_value_matrix(layer, trace.has_cls)?;
            let norms = crate::tensor::l1_norm_rows(&v).expect("value matrix is finite");
            let mut sorted = norms.clone();
            sorted.sort_by(f64::total_cmp);
            let mean = norms.iter().sum::<f64>() / norms.len() as f64;
            Ok(DensityStats {
                layer: l,
                min: sorted[0],
                q1: quantile_sorted(&sorted, 0.25),
                median: quantile_sorted(&sorted, 0.5),
                q3: quantile_sorted(&sorted, 0.75),
                max: sorted[sorted.len() - 1],
                mean,
            })
        })
        .collect()
}

/// Descending rank permutation: `rank[i]` is the position of token `i` when
/// sorted by value, highest first, ties toward the lower index.
fn rank_descending(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut rank = vec![0usize; values.len()];
    for (pos, &token) in order.iter().enumerate() {
        rank[token] = pos;
    }
    rank
}

/// Average ranks (descending) for Spearman correlation; tied values share
/// the mean of their positions. Falls back to the index tie-break when the
/// vector is entirely constant, which would otherwise leave the
/// correlation undefined.
fn correlation_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let all_equal = values.windows(2).all(|w| w[0] == w[1]);
    if all_equal {
        return rank_descending(values).iter().map(|&r| r as f64).collect();
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut ranks = vec![0.0f64; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let avg = (start + end - 1) as f64 / 2.0;
        for &token in &order[start..end] {
            ranks[token] = avg;
        }
        start = end;
    }
    ranks
}

/// Pearson correlation of two equal-length vectors; 1.0 when degenerate
/// (fewer than two points or zero variance on both sides of the fallback).
fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return 1.0;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..n {
        let dx = x[i] - mx;
        let dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return 1.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&correlation_ranks(x), &correlation_ranks(y))
}

impl CriteriaReport {
    /// Build the contradiction report from precomputed criterion vectors.
    pub fn from_values(
        layer: usize,
        q: f64,
        attention: Vec<f64>,
        similarity: Vec<f64>,
        density: Vec<f64>,
    ) -> Result<Self, FlowError> {
        if !(q > 0.0 && q <= 0.5) {
            return Err(FlowError::InvalidFraction(q));
        }
        let n = attention.len();
        let rank_attention = rank_descending(&attention);
        let rank_similarity = rank_descending(&similarity);
        let rank_density = rank_descending(&density);
        let k = (q * n as f64).floor() as usize;
        let contradictory: Vec<usize> = (0..n)
            .filter(|&t| {
                rank_attention[t] < k && (rank_similarity[t] >= n - k || rank_density[t] >= n - k)
            })
            .collect();
        let rho_attention_similarity = spearman(&attention, &similarity);
        let rho_attention_density = spearman(&attention, &density);
        let rho_similarity_density = spearman(&similarity, &density);
        Ok(Self {
            layer,
            q,
            profile: CriteriaProfile {
                attention,
                similarity,
                density,
                rank_attention,
                rank_similarity,
                rank_density,
            },
            contradictory,
            rho_attention_similarity,
            rho_attention_density,
            rho_similarity_density,
        })
    }
}

/// Criterion values, ranks, contradictions, and rank correlations at one
/// layer of a trace.
pub fn criteria_report(
    trace: &TraceFile,
    layer: usize,
    q: f64,
) -> Result<CriteriaReport, FlowError> {
    if layer >= trace.num_layers() {
        return Err(FlowError::LayerOutOfRange {
            layer,
            layers: trace.num_layers(),
        });
    }
    let lt = &trace.layers[layer];
    let a_g = global_attention(lt, trace.has_cls)?;
    let v = patch_value_matrix(lt, trace.has_cls)?;
    let v_g = if trace.has_cls {
        cls_value_row(lt)?
    } else {
        engine::mean_rows(&v)
    };
    let scores = engine::multi_criteria_score(&a_g, &v, &v_g, true)?;
    CriteriaReport::from_values(
        layer,
        q,
        scores.attention,
        scores.similarity,
        scores.density,
    )
}

// ---------------------------------------------------------------------------
// CSV rendering
// ---------------------------------------------------------------------------

/// `entropy.csv`: one row per layer.
pub fn entropy_csv(curve: &[EntropyStats]) -> String {
    let mut out = String::from("layer,H,H_max,r_H\n");
    for (l, e) in curve.iter().enumerate() {
        out.push_str(&format!("{l},{},{},{}\n", e.h, e.h_max, e.r_h));
    }
    out
}

/// `flow.csv`: one row per token per layer.
pub fn flow_csv(graphs: &[FlowGraph]) -> String {
    let mut out = String::from("layer,token,inflow,outflow,distance\n");
    for g in graphs {
        for t in 0..g.inflow.len() {
            out.push_str(&format!(
                "{},{t},{},{},{}\n",
                g.layer, g.inflow[t], g.outflow[t], g.inflow_distance[t]
            ));
        }
    }
    out
}

/// `density.csv`: one row per layer.
pub fn density_csv(stats: &[DensityStats]) -> String {
    let mut out = String::from("layer,min,q1,median,q3,max,mean\n");
    for s in stats {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            s.layer, s.min, s.q1, s.median, s.q3, s.max, s.mean
        ));
    }
    out
}

/// `criteria.csv`: one row per patch token.
pub fn criteria_csv(report: &CriteriaReport) -> String {
    let mut out =
        String::from("token,attn,sim,density,rank_attn,rank_sim,rank_density,contradictory\n");
    let p = &report.profile;
    for t in 0..p.attention.len() {
        let flag = u8::from(report.contradictory.contains(&t));
        out.push_str(&format!(
            "{t},{},{},{},{},{},{},{flag}\n",
            p.attention[t],
            p.similarity[t],
            p.density[t],
            p.rank_attention[t],
            p.rank_similarity[t],
            p.rank_density[t]
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn identity_attention(n: usize) -> DenseTensor {
        let mut data = vec![0.0f32; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        DenseTensor::new(vec![n, n], data).unwrap()
    }

    #[test]
    fn identity_attention_is_a_fixpoint() {
        let grid = TokenGrid::new(3, 3, false);
        let g = flow_graph(&identity_attention(9), &grid, 0).unwrap();
        for i in 0..9 {
            assert_eq!(g.inflow[i], i);
            assert_eq!(g.outflow[i], i);
        }
        assert_eq!(g.mean_attention_distance, 0.0);
    }

    #[test]
    fn corner_to_corner_distance() {
        // token (0,0) attends most to (2,2): that term contributes 2*sqrt(2)
        let n = 9;
        let mut data = vec![0.0f32; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        data[0] = 0.0;
        data[8] = 1.0; // row 0 one-hot on token 8 = cell (2,2)
        let grid = TokenGrid::new(3, 3, false);
        let g = flow_graph(&DenseTensor::new(vec![n, n], data).unwrap(), &grid, 0).unwrap();
        assert!(close(g.inflow_distance[0], 2.0 * 2.0f64.sqrt(), 1e-12));
        assert!(close(
            g.mean_attention_distance,
            2.0 * 2.0f64.sqrt() / 9.0,
            1e-12
        ));
    }

    #[test]
    fn random_map_matches_brute_force_argmax() {
        let n = 6;
        let mut rng = SplitMix64::new(3);
        let mut data = vec![0.0f32; n * n];
        for row in data.chunks_mut(n) {
            let mut sum = 0.0f32;
            for v in row.iter_mut() {
                *v = rng.next_unit_f32() + 0.01;
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let grid = TokenGrid::new(2, 3, false);
        let t = DenseTensor::new(vec![n, n], data.clone()).unwrap();
        let g = flow_graph(&t, &grid, 0).unwrap();
        for i in 0..n {
            let mut best = 0;
            for j in 0..n {
                if data[i * n + j] > data[i * n + best] {
                    best = j;
                }
            }
            assert_eq!(g.inflow[i], best, "inflow mismatch at {i}");
            let mut best_in = 0;
            for j in 0..n {
                if data[j * n + i] > data[best_in * n + i] {
                    best_in = j;
                }
            }
            assert_eq!(g.outflow[i], best_in, "outflow mismatch at {i}");
        }
    }

    #[test]
    fn flow_graph_rejects_non_square() {
        let grid = TokenGrid::new(2, 3, false);
        let t = DenseTensor::zeros(vec![2, 3]);
        assert!(matches!(
            flow_graph(&t, &grid, 0).unwrap_err(),
            FlowError::NonSquare(_)
        ));
    }

    #[test]
    fn entropy_uniform_is_maximal() {
        let e = entropy(&[0.25; 4]);
        assert!(close(e.h, 4.0f64.ln(), 1e-12));
        assert!(close(e.r_h, 1.0, 1e-12));
    }

    #[test]
    fn entropy_one_hot_is_zero() {
        let e = entropy(&[0.0, 1.0, 0.0, 0.0]);
        assert_eq!(e.h, 0.0);
        assert_eq!(e.r_h, 0.0);
    }

    #[test]
    fn entropy_direct_summation() {
        // -(0.4 ln 0.4 + 0.3 ln 0.3 + 0.2 ln 0.2 + 0.1 ln 0.1) ≈ 1.27985
        let e = entropy(&[0.4, 0.3, 0.2, 0.1]);
        let want =
            -(0.4f64 * 0.4f64.ln() + 0.3 * 0.3f64.ln() + 0.2 * 0.2f64.ln() + 0.1 * 0.1f64.ln());
        assert!(close(e.h, want, 1e-12));
        assert!(close(e.h, 1.2799, 1e-4));
    }

    #[test]
    fn entropy_single_element_ratio_is_one() {
        let e = entropy(&[1.0]);
        assert_eq!(e.h, 0.0);
        assert_eq!(e.h_max, 0.0);
        assert_eq!(e.r_h, 1.0);
    }

    fn single_layer_value_trace(v_rows: Vec<Vec<f32>>) -> crate::trace::TraceFile {
        use crate::trace::{LayerTrace, Qkv, TraceFile};
        let tokens = v_rows.len();
        let vd = v_rows[0].len();
        let v_data: Vec<f32> = v_rows.into_iter().flatten().collect();
        let layer = LayerTrace {
            qkv: Some(Qkv {
                q: DenseTensor::zeros(vec![1, tokens, 1]),
                k: DenseTensor::zeros(vec![1, tokens, 1]),
                v: DenseTensor::new(vec![1, tokens, vd], v_data).unwrap(),
            }),
            attn: None,
        };
        TraceFile::new(1, tokens, 1, vd, false, 1, tokens, vec![layer]).unwrap()
    }

    #[test]
    fn density_all_zero_values() {
        let trace = single_layer_value_trace(vec![vec![0.0, 0.0]; 4]);
        let stats = density_stats(&trace).unwrap();
        let s = stats[0];
        assert_eq!(
            (s.min, s.q1, s.median, s.q3, s.max, s.mean),
            (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn density_single_token_is_its_norm() {
        let trace = single_layer_value_trace(vec![vec![1.0, -1.0]]);
        let stats = density_stats(&trace).unwrap();
        let s = stats[0];
        assert_eq!(
            (s.min, s.q1, s.median, s.q3, s.max, s.mean),
            (2.0, 2.0, 2.0, 2.0, 2.0, 2.0)
        );
    }

    #[test]
    fn density_requires_values() {
        let n = 3;
        let uniform = vec![1.0 / n as f32; n * n];
        let layer = crate::trace::LayerTrace {
            qkv: None,
            attn: Some(DenseTensor::new(vec![1, n, n], uniform).unwrap()),
        };
        let trace = crate::trace::TraceFile::new(1, n, 1, 1, false, 1, n, vec![layer]).unwrap();
        assert!(matches!(
            density_stats(&trace).unwrap_err(),
            FlowError::Engine(EngineError::MissingTensors(_))
        ));
    }

    #[test]
    fn quantiles_match_sorted_oracle() {
        let mut rng = SplitMix64::new(17);
        let values: Vec<f64> = (0..10).map(|_| rng.next_unit_f32() as f64 * 9.0).collect();
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        // brute-force linear interpolation at (n-1)p
        let brute = |p: f64| {
            let pos = 9.0 * p;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
        };
        assert!(close(quantile_sorted(&sorted, 0.25), brute(0.25), 1e-12));
        assert!(close(quantile_sorted(&sorted, 0.5), brute(0.5), 1e-12));
        assert!(close(quantile_sorted(&sorted, 0.75), brute(0.75), 1e-12));
    }

    #[test]
    fn identical_criteria_have_no_contradictions() {
        let v = vec![0.4, 0.3, 0.2, 0.1];
        let r = CriteriaReport::from_values(0, 0.25, v.clone(), v.clone(), v.clone()).unwrap();
        assert!(r.contradictory.is_empty());
        assert!(close(r.rho_attention_similarity, 1.0, 1e-12));
        assert!(close(r.rho_attention_density, 1.0, 1e-12));
        assert!(close(r.rho_similarity_density, 1.0, 1e-12));
    }

    #[test]
    fn reversed_density_yields_expected_contradictions() {
        // attention ranking is the exact reverse of density; q=0.25 of 8
        // tokens flags the top 2 by attention
        let attention: Vec<f64> = (0..8).map(|i| (8 - i) as f64).collect();
        let density: Vec<f64> = (0..8).map(|i| (i + 1) as f64).collect();
        let similarity = attention.clone();
        let r = CriteriaReport::from_values(0, 0.25, attention, similarity, density).unwrap();
        assert_eq!(r.contradictory, vec![0, 1]);
        assert!(close(r.rho_attention_density, -1.0, 1e-12));
    }

    #[test]
    fn constant_density_uses_index_tie_break() {
        let attention = vec![3.0, 2.0, 1.0];
        let density = vec![5.0, 5.0, 5.0];
        let r = CriteriaReport::from_values(0, 0.5, attention.clone(), attention, density).unwrap();
        // tie-broken density ranks are index order, matching attention's
        // ranks exactly
        assert_eq!(r.profile.rank_density, vec![0, 1, 2]);
        assert!(close(r.rho_attention_density, 1.0, 1e-12));
    }

    #[test]
    fn invalid_fraction_rejected() {
        let v = vec![1.0, 2.0];
        assert!(matches!(
            CriteriaReport::from_values(0, 0.6, v.clone(), v.clone(), v).unwrap_err(),
            FlowError::InvalidFraction(_)
        ));
    }

    #[test]
    fn spearman_handles_ties_with_average_ranks() {
        // x has a tie; average ranks make the correlation well defined
        let x = vec![1.0, 1.0, 0.0];
        let y = vec![2.0, 1.0, 0.0];
        let rho = spearman(&x, &y);
        // ranks(x) = [0.5, 0.5, 2], ranks(y) = [0, 1, 2]
        let want = pearson(&[0.5, 0.5, 2.0], &[0.0, 1.0, 2.0]);
        assert!(close(rho, want, 1e-12));
    }

    #[test]
    fn csv_rendering_has_documented_headers() {
        let curve = vec![EntropyStats {
            h: 1.0,
            h_max: 2.0,
            r_h: 0.5,
        }];
        assert!(entropy_csv(&curve).starts_with("layer,H,H_max,r_H\n"));
        let stats = vec![DensityStats {
            layer: 0,
            min: 0.0,
            q1: 1.0,
            median: 2.0,
            q3: 3.0,
            max: 4.0,
            mean: 2.0,
        }];
        assert!(density_csv(&stats).starts_with("layer,min,q1,median,q3,max,mean\n"));
    }
}
