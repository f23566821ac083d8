//! Deterministic, seeded ViT-style transformer encoder.
//!
//! The encoder exists to produce per-layer Q/K/V and attention traces, with
//! or without a CLS token, and to support live re-encoding over a pruned
//! token set. Every weight is drawn from a SplitMix64 stream seeded by the
//! config, so the same config always yields bit-identical traces.
//!
//! Architecture: scalar patch embedding plus fixed sinusoidal position
//! embeddings, then pre-norm blocks of multi-head self-attention and a
//! two-layer GELU MLP, biases everywhere. Weight draw order is part of the
//! reproducibility contract: patch embed weight and bias, CLS embedding
//! when present, then per layer norm1 scale/shift, Wq/bq, Wk/bk, Wv/bv,
//! Wo/bo, norm2 scale/shift, W1/b1, W2/b2, each row-major. Norm scales are
//! `1 +` the drawn value; every other parameter is the drawn value.

use std::fmt;

use crate::rng::SplitMix64;
use crate::tensor::{attention_from_qk, DenseTensor};
use crate::trace::{LayerTrace, Qkv, TraceError, TraceFile};

/// Stream salt for synthetic input grids, so the input does not replay the
/// weight stream.
const GRID_SEED_SALT: u64 = 0xA5A5_5A5A_C3C3_3C3C;

const LAYER_NORM_EPS: f32 = 1e-5;

/// Encoder hyperparameters. `model_dim` must divide evenly into `heads`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub mlp_dim: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub has_cls: bool,
    pub seed: u64,
}

impl Default for EncoderConfig {
    /// Desk-scale defaults: large enough for a multi-event prune schedule,
    /// small enough for exhaustive oracles.
    fn default() -> Self {
        Self {
            layers: 12,
            heads: 4,
            model_dim: 64,
            mlp_dim: 256,
            grid_rows: 8,
            grid_cols: 8,
            has_cls: true,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    pub fn num_patches(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    pub fn num_tokens(&self) -> usize {
        self.num_patches() + usize::from(self.has_cls)
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.layers < 2 {
            return Err(EncoderError::InvalidConfig(
                "at least 2 layers required (a penultimate layer must exist)".into(),
            ));
        }
        if self.heads == 0 || self.model_dim == 0 || self.mlp_dim == 0 {
            return Err(EncoderError::InvalidConfig("zero-sized dimension".into()));
        }
        if self.model_dim % self.heads != 0 {
            return Err(EncoderError::InvalidConfig(format!(
                "model_dim {} not divisible by heads {}",
                self.model_dim, self.heads
            )));
        }
        if self.grid_rows == 0 || self.grid_cols == 0 {
            return Err(EncoderError::InvalidConfig("empty patch grid".into()));
        }
        Ok(())
    }

    /// Seeded pseudo-random input grid in `[0, 1)`, the synthetic stand-in
    /// for an image.
    pub fn synthetic_grid(&self) -> DenseTensor {
        let mut rng = SplitMix64::new(self.seed ^ GRID_SEED_SALT);
        let data = (0..self.num_patches())
            .map(|_| rng.next_unit_f32())
            .collect();
        DenseTensor::new(vec![self.grid_rows, self.grid_cols], data)
            .expect("grid shape covers generated data")
    }
}

/// Errors raised by encoder construction and stepping.
#[derive(Debug, Clone, PartialEq)]
pub enum EncoderError {
    InvalidConfig(String),
    /// Input grid does not match the configured patch grid.
    GridShape {
        expected: (usize, usize),
        got: Vec<usize>,
    },
    /// `encode_step` called with anything but the next unprocessed layer.
    OutOfOrderLayer {
        expected: usize,
        got: usize,
    },
    /// `encode_step` called before any input was embedded.
    NoInput,
    /// Attempt to drop the CLS token while layers remain.
    DropCls,
    /// Attempt to drop a token that is not active.
    UnknownToken(usize),
}

impl fmt::Display for EncoderError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidConfig(why) => write!(f, "invalid encoder config: {why}"),
            Self::GridShape { expected, got } => {
                write!(f, "input grid shape {got:?} does not match {expected:?}")
            }
            Self::OutOfOrderLayer { expected, got } => {
                write!(
                    f,
                    "encode_step for layer {got}, expected next layer {expected}"
                )
            }
            Self::NoInput => write!(f, "no input embedded; call embed_input first"),
            Self::DropCls => write!(f, "cannot drop the CLS token while layers remain"),
            Self::UnknownToken(i) => write!(f, "token {i} is not in the active set"),
        }
    }
}

impl std::error::Error for EncoderError {}

#[derive(Debug, Clone)]
struct LayerWeights {
    norm1_scale: Vec<f32>,
    norm1_shift: Vec<f32>,
    wq: Vec<f32>,
    bq: Vec<f32>,
    wk: Vec<f32>,
    bk: Vec<f32>,
    wv: Vec<f32>,
    bv: Vec<f32>,
    wo: Vec<f32>,
    bo: Vec<f32>,
    norm2_scale: Vec<f32>,
    norm2_shift: Vec<f32>,
    w1: Vec<f32>,
    b1: Vec<f32>,
    w2: Vec<f32>,
    b2: Vec<f32>,
}

#[derive(Debug, Clone)]
pub(crate) struct EncoderWeights {
    patch_weight: Vec<f32>,
    patch_bias: Vec<f32>,
    cls_embed: Option<Vec<f32>>,
    layers: Vec<LayerWeights>,
}

/// A single-owner encoder run: weights, current hidden states, and the
/// active token set.
#[derive(Debug, Clone)]
pub struct EncoderState {
    cfg: EncoderConfig,
    pub(crate) weights: EncoderWeights,
    /// `[active tokens, model_dim]`, present once input is embedded.
    hidden: Option<DenseTensor>,
    /// Original token indices still active, strictly increasing.
    active: Vec<usize>,
    next_layer: usize,
}

/// Build an encoder with weights drawn from the seeded generator.
pub fn build_encoder(cfg: &EncoderConfig) -> Result<EncoderState, EncoderError> {
    cfg.validate()?;
    let mut rng = SplitMix64::new(cfg.seed);
    let d = cfg.model_dim;
    let m = cfg.mlp_dim;
    let draw = |n: usize, rng: &mut SplitMix64| -> Vec<f32> {
        (0..n).map(|_| rng.next_weight()).collect()
    };
    let patch_weight = draw(d, &mut rng);
    let patch_bias = draw(d, &mut rng);
    let cls_embed = cfg.has_cls.then(|| draw(d, &mut rng));
    let mut layers = Vec::with_capacity(cfg.layers);
    for _ in 0..cfg.layers {
        layers.push(LayerWeights {
            norm1_scale: draw(d, &mut rng).into_iter().map(|v| 1.0 + v).collect(),
            norm1_shift: draw(d, &mut rng),
            wq: draw(d * d, &mut rng),
            bq: draw(d, &mut rng),
            wk: draw(d * d, &mut rng),
            bk: draw(d, &mut rng),
            wv: draw(d * d, &mut rng),
            bv: draw(d, &mut rng),
            wo: draw(d * d, &mut rng),
            bo: draw(d, &mut rng),
            norm2_scale: draw(d, &mut rng).into_iter().map(|v| 1.0 + v).collect(),
            norm2_shift: draw(d, &mut rng),
            w1: draw(d * m, &mut rng),
            b1: draw(m, &mut rng),
            w2: draw(m * d, &mut rng),
            b2: draw(d, &mut rng),
        });
    }
    Ok(EncoderState {
        cfg: cfg.clone(),
        weights: EncoderWeights {
            patch_weight,
            patch_bias,
            cls_embed,
            layers,
        },
        hidden: None,
        active: (0..cfg.num_tokens()).collect(),
        next_layer: 0,
    })
}

impl EncoderState {
    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    /// Original indices of the tokens still active.
    pub fn active_tokens(&self) -> &[usize] {
        &self.active
    }

    /// Index of the next unprocessed layer.
    pub fn next_layer(&self) -> usize {
        self.next_layer
    }

    /// Embed an input grid: scalar patch embedding plus sinusoidal position
    /// embedding per patch, CLS embedding for token 0 when configured.
    /// Resets the active set and the layer counter.
    pub fn embed_input(&mut self, grid: &DenseTensor) -> Result<(), EncoderError> {
        if grid.shape() != [self.cfg.grid_rows, self.cfg.grid_cols] {
            return Err(EncoderError::GridShape {
                expected: (self.cfg.grid_rows, self.cfg.grid_cols),
                got: grid.shape().to_vec(),
            });
        }
        let d = self.cfg.model_dim;
        let tokens = self.cfg.num_tokens();
        let mut hidden = vec![0.0f32; tokens * d];
        let patch_base = usize::from(self.cfg.has_cls);
        if let Some(cls) = &self.weights.cls_embed {
            hidden[..d].copy_from_slice(cls);
        }
        for (p, &pixel) in grid.data().iter().enumerate() {
            let row = &mut hidden[(patch_base + p) * d..(patch_base + p + 1) * d];
            for (j, out) in row.iter_mut().enumerate() {
                *out = pixel * self.weights.patch_weight[j]
                    + self.weights.patch_bias[j]
                    + sinusoidal(p, j, d);
            }
        }
        self.hidden =
            Some(DenseTensor::new(vec![tokens, d], hidden).expect("hidden shape covers data"));
        self.active = (0..tokens).collect();
        self.next_layer = 0;
        Ok(())
    }

    /// Run the full stack over a fresh input, emitting one trace per layer.
    pub fn encode(&mut self, grid: &DenseTensor) -> Result<Vec<LayerTrace>, EncoderError> {
        self.embed_input(grid)?;
        (0..self.cfg.layers).map(|l| self.encode_step(l)).collect()
    }

    /// Advance the hidden states one layer over the current active token
    /// set. The returned trace covers exactly the active tokens, in
    /// ascending original-index order.
    pub fn encode_step(&mut self, layer_index: usize) -> Result<LayerTrace, EncoderError> {
        if layer_index != self.next_layer || layer_index >= self.cfg.layers {
            return Err(EncoderError::OutOfOrderLayer {
                expected: self.next_layer,
                got: layer_index,
            });
        }
        let hidden = self.hidden.as_ref().ok_or(EncoderError::NoInput)?;
        let n = self.active.len();
        let d = self.cfg.model_dim;
        let heads = self.cfg.heads;
        let hd = self.cfg.head_dim();
        let lw = &self.weights.layers[layer_index];
        let x = hidden.data();

        let normed1 = layer_norm(x, n, d, &lw.norm1_scale, &lw.norm1_shift);
        let q = affine(&normed1, n, d, d, &lw.wq, &lw.bq);
        let k = affine(&normed1, n, d, d, &lw.wk, &lw.bk);
        let v = affine(&normed1, n, d, d, &lw.wv, &lw.bv);

        let q_heads = split_heads(&q, n, heads, hd);
        let k_heads = split_heads(&k, n, heads, hd);
        let v_heads = split_heads(&v, n, heads, hd);
        let attn =
            attention_from_qk(&q_heads, &k_heads, hd).expect("projected q/k shapes always agree");

        // weighted sum of values, heads re-concatenated feature-wise
        let mut context = vec![0.0f32; n * d];
        for h in 0..heads {
            let ah = attn.slab(h);
            let vh = v_heads.slab(h);
            for i in 0..n {
                for c in 0..hd {
                    let mut acc = 0.0f32;
                    for j in 0..n {
                        acc += ah[i * n + j] * vh[j * hd + c];
                    }
                    context[i * d + h * hd + c] = acc;
                }
            }
        }
        let attn_out = affine(&context, n, d, d, &lw.wo, &lw.bo);
        let mut x1 = vec![0.0f32; n * d];
        for (o, (&a, &b)) in x1.iter_mut().zip(x.iter().zip(&attn_out)) {
            *o = a + b;
        }

        let normed2 = layer_norm(&x1, n, d, &lw.norm2_scale, &lw.norm2_shift);
        let mut inner = affine(&normed2, n, d, self.cfg.mlp_dim, &lw.w1, &lw.b1);
        for v in inner.iter_mut() {
            *v = gelu(*v);
        }
        let mlp_out = affine(&inner, n, self.cfg.mlp_dim, d, &lw.w2, &lw.b2);
        let mut x2 = vec![0.0f32; n * d];
        for (o, (&a, &b)) in x2.iter_mut().zip(x1.iter().zip(&mlp_out)) {
            *o = a + b;
        }

        self.hidden = Some(DenseTensor::new(vec![n, d], x2).expect("hidden shape covers data"));
        self.next_layer += 1;
        Ok(LayerTrace {
            qkv: Some(Qkv {
                q: q_heads,
                k: k_heads,
                v: v_heads,
            }),
            attn: Some(attn),
        })
    }

    /// Remove tokens from the active set and drop their hidden-state rows.
    /// `drop` holds original token indices. The CLS token may only be
    /// dropped once no layers remain.
    pub fn drop_tokens(&mut self, drop: &[usize]) -> Result<(), EncoderError> {
        for &t in drop {
            if self.cfg.has_cls && t == 0 && self.next_layer < self.cfg.layers {
                return Err(EncoderError::DropCls);
            }
            if !self.active.contains(&t) {
                return Err(EncoderError::UnknownToken(t));
            }
        }
        if drop.is_empty() {
            return Ok(());
        }
        let d = self.cfg.model_dim;
        let keep_rows: Vec<usize> = self
            .active
            .iter()
            .enumerate()
            .filter(|(_, t)| !drop.contains(t))
            .map(|(row, _)| row)
            .collect();
        if let Some(hidden) = &self.hidden {
            let mut data = Vec::with_capacity(keep_rows.len() * d);
            for &row in &keep_rows {
                data.extend_from_slice(&hidden.data()[row * d..(row + 1) * d]);
            }
            self.hidden = Some(
                DenseTensor::new(vec![keep_rows.len(), d], data).expect("kept rows cover data"),
            );
        }
        self.active = keep_rows.iter().map(|&row| self.active[row]).collect();
        Ok(())
    }
}

/// Package a full-run trace list into a validated trace file.
pub fn trace_from_layers(
    cfg: &EncoderConfig,
    layers: Vec<LayerTrace>,
) -> Result<TraceFile, TraceError> {
    TraceFile::new(
        cfg.heads,
        cfg.num_tokens(),
        cfg.head_dim(),
        cfg.head_dim(),
        cfg.has_cls,
        cfg.grid_rows,
        cfg.grid_cols,
        layers,
    )
}

fn sinusoidal(pos: usize, dim_index: usize, model_dim: usize) -> f32 {
    let pair = dim_index / 2;
    let freq = 1.0f64 / 10_000f64.powf(2.0 * pair as f64 / model_dim as f64);
    let angle = pos as f64 * freq;
    if dim_index % 2 == 0 {
        angle.sin() as f32
    } else {
        angle.cos() as f32
    }
}

fn gelu(x: f32) -> f32 {
    // tanh approximation
    const SQRT_2_OVER_PI: f32 = 0.797_884_6;
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + 0.044_715 * x * x * x)).tanh())
}

fn layer_norm(x: &[f32], rows: usize, d: usize, scale: &[f32], shift: &[f32]) -> Vec<f32> {
    let mut out = vec![0.0f32; rows * d];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f32>() / d as f32;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        let o = &mut out[r * d..(r + 1) * d];
        for j in 0..d {
            o[j] = scale[j] * (row[j] - mean) * inv + shift[j];
        }
    }
    out
}

/// `x [rows, d_in] · w [d_in, d_out] + b`, sequential accumulation.
fn affine(x: &[f32], rows: usize, d_in: usize, d_out: usize, w: &[f32], b: &[f32]) -> Vec<f32> {
    let mut out = vec![0.0f32; rows * d_out];
    for r in 0..rows {
        let xr = &x[r * d_in..(r + 1) * d_in];
        let or = &mut out[r * d_out..(r + 1) * d_out];
        or.copy_from_slice(b);
        for (i, &xv) in xr.iter().enumerate() {
            let wrow = &w[i * d_out..(i + 1) * d_out];
            for (o, &wv) in or.iter_mut().zip(wrow) {
                *o += xv * wv;
            }
        }
    }
    out
}

/// `[rows, heads*hd]` feature-major to `[heads, rows, hd]`.
fn split_heads(x: &[f32], rows: usize, heads: usize, hd: usize) -> DenseTensor {
    let mut out = vec![0.0f32; heads * rows * hd];
    for h in 0..heads {
        for r in 0..rows {
            for c in 0..hd {
                out[h * rows * hd + r * hd + c] = x[r * heads * hd + h * hd + c];
            }
        }
    }
    DenseTensor::new(vec![heads, rows, hd], out).expect("split shape covers data")
}
