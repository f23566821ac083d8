//! Binary trace file format: per-layer multi-head Q/K/V and attention for a
//! token sequence, as produced by an encoder run.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic      4 bytes  "FCTR"
//! version    u32      currently 1
//! num_layers u32
//! num_heads  u32
//! num_tokens u32
//! head_dim   u32
//! value_dim  u32
//! flags      u32      bit 0 has_cls, bit 1 has_qkv, bit 2 has_attention
//! grid_rows  u32
//! grid_cols  u32
//! payload    per layer: Q, K, V (iff has_qkv), then attention
//!            (iff has_attention), raw f32 row-major
//! ```
//!
//! Q and K are `[heads, tokens, head_dim]`, V is `[heads, tokens,
//! value_dim]`, attention is `[heads, tokens, tokens]`. Round-trips are
//! byte-exact. Readers validate the magic, the version, header/payload
//! consistency, finiteness, and that attention rows are stochastic.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::tensor::DenseTensor;

pub const TRACE_MAGIC: [u8; 4] = *b"FCTR";
pub const TRACE_VERSION: u32 = 1;

const FLAG_HAS_CLS: u32 = 1 << 0;
const FLAG_HAS_QKV: u32 = 1 << 1;
const FLAG_HAS_ATTENTION: u32 = 1 << 2;

/// Row sums of stored attention maps may drift from 1 by at most this much.
pub const ATTENTION_ROW_SUM_TOL: f32 = 1e-4;

/// Query, key, and value projections for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Qkv {
    /// `[heads, tokens, head_dim]`
    pub q: DenseTensor,
    /// `[heads, tokens, head_dim]`
    pub k: DenseTensor,
    /// `[heads, tokens, value_dim]`
    pub v: DenseTensor,
}

/// Tensors recorded for one encoder layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    /// Present iff the trace carries Q/K/V.
    pub qkv: Option<Qkv>,
    /// `[heads, tokens, tokens]`, present iff the trace carries attention.
    pub attn: Option<DenseTensor>,
}

impl LayerTrace {
    /// Token count of this layer, from whichever tensor is present.
    pub fn num_tokens(&self) -> usize {
        if let Some(qkv) = &self.qkv {
            qkv.q.shape()[1]
        } else if let Some(attn) = &self.attn {
            attn.shape()[1]
        } else {
            0
        }
    }
}

/// A complete serialized encoder run.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub version: u32,
    pub num_heads: usize,
    pub num_tokens: usize,
    pub head_dim: usize,
    pub value_dim: usize,
    pub has_cls: bool,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub layers: Vec<LayerTrace>,
}

/// Errors raised while constructing, writing, or reading traces.
#[derive(Debug)]
pub enum TraceError {
    Io(std::io::Error),
    /// File does not start with the `FCTR` magic.
    BadMagic,
    /// Version field is not one this reader understands.
    UnsupportedVersion(u32),
    /// File ends before the header-declared payload does.
    TruncatedPayload,
    /// Bytes remain after the declared payload.
    TrailingData,
    /// Payload contains NaN or infinite values.
    NonFinitePayload,
    /// Header fields are inconsistent with each other.
    InvalidHeader(String),
    /// A per-layer tensor does not conform to the header shapes.
    LayerShape {
        layer: usize,
        what: &'static str,
    },
    /// An attention row is negative or does not sum to 1.
    InvalidAttention {
        layer: usize,
        head: usize,
        row: usize,
        sum: f32,
    },
    /// Neither Q/K/V nor attention is present.
    MissingTensors,
}

impl fmt::Display for TraceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Io(e) => write!(f, "trace i/o error: {e}"),
            Self::BadMagic => write!(f, "bad magic: not a trace file"),
            Self::UnsupportedVersion(v) => write!(f, "unsupported trace version {v}"),
            Self::TruncatedPayload => write!(f, "truncated payload"),
            Self::TrailingData => write!(f, "trailing data after payload"),
            Self::NonFinitePayload => write!(f, "NaN or infinite value in payload"),
            Self::InvalidHeader(why) => write!(f, "invalid header: {why}"),
            Self::LayerShape { layer, what } => {
                write!(
                    f,
                    "layer {layer}: {what} tensor does not match header shape"
                )
            }
            Self::InvalidAttention {
                layer,
                head,
                row,
                sum,
            } => write!(
                f,
                "layer {layer} head {head} row {row}: attention row sums to {sum}, not 1"
            ),
            Self::MissingTensors => {
                write!(f, "trace carries neither Q/K/V nor attention")
            }
        }
    }
}

impl std::error::Error for TraceError {}

impl From<std::io::Error> for TraceError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e)
    }
}

impl TraceFile {
    /// Construct a trace, checking every format invariant.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        num_heads: usize,
        num_tokens: usize,
        head_dim: usize,
        value_dim: usize,
        has_cls: bool,
        grid_rows: usize,
        grid_cols: usize,
        layers: Vec<LayerTrace>,
    ) -> Result<Self, TraceError> {
        let t = Self {
            version: TRACE_VERSION,
            num_heads,
            num_tokens,
            head_dim,
            value_dim,
            has_cls,
            grid_rows,
            grid_cols,
            layers,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Patch-token count (tokens minus the CLS token when present).
    pub fn num_patches(&self) -> usize {
        if self.has_cls {
            self.num_tokens - 1
        } else {
            self.num_tokens
        }
    }

    pub fn has_qkv(&self) -> bool {
        self.layers
            .first()
            .map(|l| l.qkv.is_some())
            .unwrap_or(false)
    }

    pub fn has_attention(&self) -> bool {
        self.layers
            .first()
            .map(|l| l.attn.is_some())
            .unwrap_or(false)
    }

    fn validate(&self) -> Result<(), TraceError> {
        if self.num_heads == 0 || self.num_tokens == 0 {
            return Err(TraceError::InvalidHeader("zero head or token count".into()));
        }
        if self.head_dim == 0 || self.value_dim == 0 {
            return Err(TraceError::InvalidHeader(
                "zero head_dim or value_dim".into(),
            ));
        }
        if self.grid_rows == 0 || self.grid_cols == 0 {
            return Err(TraceError::InvalidHeader("zero grid dimension".into()));
        }
        let patches = self.grid_rows * self.grid_cols;
        let expected_tokens = if self.has_cls { patches + 1 } else { patches };
        if self.num_tokens != expected_tokens {
            return Err(TraceError::InvalidHeader(format!(
                "num_tokens {} does not match grid {}x{} (has_cls={})",
                self.num_tokens, self.grid_rows, self.grid_cols, self.has_cls
            )));
        }
        if self.layers.is_empty() {
            return Err(TraceError::InvalidHeader("zero layers".into()));
        }
        let has_qkv = self.layers[0].qkv.is_some();
        let has_attn = self.layers[0].attn.is_some();
        if !has_qkv && !has_attn {
            return Err(TraceError::MissingTensors);
        }
        for (li, layer) in self.layers.iter().enumerate() {
            if layer.qkv.is_some() != has_qkv || layer.attn.is_some() != has_attn {
                return Err(TraceError::InvalidHeader(format!(
                    "layer {li} disagrees with layer 0 on which tensors are present"
                )));
            }
            if let Some(qkv) = &layer.qkv {
                let qk_shape = [self.num_heads, self.num_tokens, self.head_dim];
                let v_shape = [self.num_heads, self.num_tokens, self.value_dim];
                if qkv.q.shape() != qk_shape {
                    return Err(TraceError::LayerShape {
                        layer: li,
                        what: "Q",
                    });
                }
                if qkv.k.shape() != qk_shape {
                    return Err(TraceError::LayerShape {
                        layer: li,
                        what: "K",
                    });
                }
                if qkv.v.shape() != v_shape {
                    return Err(TraceError::LayerShape {
                        layer: li,
                        what: "V",
                    });
                }
                if !qkv.q.is_finite() || !qkv.k.is_finite() || !qkv.v.is_finite() {
                    return Err(TraceError::NonFinitePayload);
                }
            }
            if let Some(attn) = &layer.attn {
                if attn.shape() != [self.num_heads, self.num_tokens, self.num_tokens] {
                    return Err(TraceError::LayerShape {
                        layer: li,
                        what: "attention",
                    });
                }
                if !attn.is_finite() {
                    return Err(TraceError::NonFinitePayload);
                }
                for h in 0..self.num_heads {
                    let slab = attn.slab(h);
                    for r in 0..self.num_tokens {
                        let row = &slab[r * self.num_tokens..(r + 1) * self.num_tokens];
                        let mut sum = 0.0f32;
                        for &v in row {
                            if v < 0.0 {
                                return Err(TraceError::InvalidAttention {
                                    layer: li,
                                    head: h,
                                    row: r,
                                    sum: v,
                                });
                            }
                            sum += v;
                        }
                        if (sum - 1.0).abs() > ATTENTION_ROW_SUM_TOL {
                            return Err(TraceError::InvalidAttention {
                                layer: li,
                                head: h,
                                row: r,
                                sum,
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Serialize to the binary layout.
    pub fn encode_to_vec(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&TRACE_MAGIC);
        let mut flags = 0u32;
        if self.has_cls {
            flags |= FLAG_HAS_CLS;
        }
        if self.has_qkv() {
            flags |= FLAG_HAS_QKV;
        }
        if self.has_attention() {
            flags |= FLAG_HAS_ATTENTION;
        }
        for field in [
            self.version,
            self.num_layers() as u32,
            self.num_heads as u32,
            self.num_tokens as u32,
            self.head_dim as u32,
            self.value_dim as u32,
            flags,
            self.grid_rows as u32,
            self.grid_cols as u32,
        ] {
            out.extend_from_slice(&field.to_le_bytes());
        }
        for layer in &self.layers {
            if let Some(qkv) = &layer.qkv {
                for t in [&qkv.q, &qkv.k, &qkv.v] {
                    for &v in t.data() {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
            if let Some(attn) = &layer.attn {
                for &v in attn.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    /// Parse and validate the binary layout.
    pub fn decode_from_slice(bytes: &[u8]) -> Result<Self, TraceError> {
        let mut cursor = 0usize;
        let take = |cursor: &mut usize, n: usize| -> Result<&[u8], TraceError> {
            let end = cursor.checked_add(n).ok_or(TraceError::TruncatedPayload)?;
            if end > bytes.len() {
                return Err(TraceError::TruncatedPayload);
            }
            let s = &bytes[*cursor..end];
            *cursor = end;
            Ok(s)
        };
        let magic = take(&mut cursor, 4)?;
        if magic != TRACE_MAGIC {
            return Err(TraceError::BadMagic);
        }
        let read_u32 = |cursor: &mut usize| -> Result<u32, TraceError> {
            let b = take(cursor, 4)?;
            Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        };
        let version = read_u32(&mut cursor)?;
        if version != TRACE_VERSION {
            return Err(TraceError::UnsupportedVersion(version));
        }
        let num_layers = read_u32(&mut cursor)? as usize;
        let num_heads = read_u32(&mut cursor)? as usize;
        let num_tokens = read_u32(&mut cursor)? as usize;
        let head_dim = read_u32(&mut cursor)? as usize;
        let value_dim = read_u32(&mut cursor)? as usize;
        let flags = read_u32(&mut cursor)?;
        let grid_rows = read_u32(&mut cursor)? as usize;
        let grid_cols = read_u32(&mut cursor)? as usize;
        let has_cls = flags & FLAG_HAS_CLS != 0;
        let has_qkv = flags & FLAG_HAS_QKV != 0;
        let has_attn = flags & FLAG_HAS_ATTENTION != 0;
        if !has_qkv && !has_attn {
            return Err(TraceError::MissingTensors);
        }

        let read_tensor =
            |cursor: &mut usize, shape: Vec<usize>| -> Result<DenseTensor, TraceError> {
                let count: usize = shape.iter().product();
                let end = cursor
                    .checked_add(count * 4)
                    .ok_or(TraceError::TruncatedPayload)?;
                if end > bytes.len() {
                    return Err(TraceError::TruncatedPayload);
                }
                let mut data = Vec::with_capacity(count);
                for chunk in bytes[*cursor..end].chunks_exact(4) {
                    let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
                    if !v.is_finite() {
                        return Err(TraceError::NonFinitePayload);
                    }
                    data.push(v);
                }
                *cursor = end;
                DenseTensor::new(shape, data)
                    .map_err(|_| TraceError::InvalidHeader("tensor shape overflow".into()))
            };

        let mut layers = Vec::with_capacity(num_layers);
        for _ in 0..num_layers {
            let qkv = if has_qkv {
                let q = read_tensor(&mut cursor, vec![num_heads, num_tokens, head_dim])?;
                let k = read_tensor(&mut cursor, vec![num_heads, num_tokens, head_dim])?;
                let v = read_tensor(&mut cursor, vec![num_heads, num_tokens, value_dim])?;
                Some(Qkv { q, k, v })
            } else {
                None
            };
            let attn = if has_attn {
                Some(read_tensor(
                    &mut cursor,
                    vec![num_heads, num_tokens, num_tokens],
                )?)
            } else {
                None
            };
            layers.push(LayerTrace { qkv, attn });
        }
        if cursor != bytes.len() {
            return Err(TraceError::TrailingData);
        }
        Self::new(
            num_heads, num_tokens, head_dim, value_dim, has_cls, grid_rows, grid_cols, layers,
        )
    }
}

/// Write a trace to a file.
pub fn write_trace(trace: &TraceFile, path: &Path) -> Result<(), TraceError> {
    trace.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&trace.encode_to_vec())?;
    w.flush()?;
    Ok(())
}

/// Read and validate a trace from a file.
pub fn read_trace(path: &Path) -> Result<TraceFile, TraceError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    TraceFile::decode_from_slice(&bytes)
}
