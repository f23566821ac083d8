//! Minimal dense-tensor arithmetic shared by the encoder, the diagnostics,
//! and the pruning engine.
//!
//! Only the ranks and operations the rest of the crate needs are provided:
//! row softmax, scaled dot-product attention, head averaging, and row L1
//! norms. All reductions run in a fixed sequential order so that identical
//! inputs produce bit-identical outputs within one build; cross-build or
//! cross-implementation comparisons should use a 1e-5 relative tolerance
//! instead of bit equality.

use std::fmt;

/// Row-major dense tensor of `f32` values.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

/// Errors raised by tensor constructors and operations.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorError {
    /// Shape product does not match the data length.
    ShapeDataMismatch { shape: Vec<usize>, len: usize },
    /// Operation requires a different rank than the input has.
    RankMismatch { expected: usize, got: usize },
    /// Two operands disagree on a dimension.
    DimMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },
    /// A value was NaN or infinite where finite input is required.
    NonFinite,
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ShapeDataMismatch { shape, len } => {
                write!(f, "shape {shape:?} does not match data length {len}")
            }
            Self::RankMismatch { expected, got } => {
                write!(f, "expected rank-{expected} tensor, got rank-{got}")
            }
            Self::DimMismatch { what, left, right } => {
                write!(f, "{what} dimensions disagree: {left} vs {right}")
            }
            Self::NonFinite => write!(f, "tensor contains NaN or infinite values"),
        }
    }
}

impl std::error::Error for TensorError {}

impl DenseTensor {
    /// Create a tensor, checking that the shape covers the data exactly.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::ShapeDataMismatch {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    /// All-zero tensor of the given shape.
    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// True when every value is finite.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[f32] {
        debug_assert_eq!(self.rank(), 2);
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    /// Contiguous rank-2 slice `[rows, cols]` at `index` along the first
    /// axis of a rank-3 tensor.
    pub fn slab(&self, index: usize) -> &[f32] {
        debug_assert_eq!(self.rank(), 3);
        let stride = self.shape[1] * self.shape[2];
        &self.data[index * stride..(index + 1) * stride]
    }

    fn expect_rank(&self, expected: usize) -> Result<(), TensorError> {
        if self.rank() != expected {
            return Err(TensorError::RankMismatch {
                expected,
                got: self.rank(),
            });
        }
        Ok(())
    }
}

/// Numerically stable softmax over each row of a rank-2 tensor.
///
/// Subtracts the row maximum before exponentiating, so rows like
/// `[1000, 0]` do not overflow. Each output row sums to 1 within 1e-6.
pub fn softmax_rows(t: &DenseTensor) -> Result<DenseTensor, TensorError> {
    t.expect_rank(2)?;
    if !t.is_finite() {
        return Err(TensorError::NonFinite);
    }
    let (rows, cols) = (t.shape[0], t.shape[1]);
    let mut out = vec![0.0f32; rows * cols];
    for r in 0..rows {
        let row = t.row(r);
        softmax_into(row, &mut out[r * cols..(r + 1) * cols]);
    }
    DenseTensor::new(vec![rows, cols], out)
}

/// Stable softmax of one logit slice into a preallocated output slice.
pub(crate) fn softmax_into(logits: &[f32], out: &mut [f32]) {
    debug_assert_eq!(logits.len(), out.len());
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for (o, &x) in out.iter_mut().zip(logits) {
        let e = (x - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Scaled dot-product attention `softmax(q kᵀ / sqrt(scale_dim))` per head.
///
/// `q` and `k` are `[heads, tokens, dim]`; the result is
/// `[heads, tokens, tokens]`. The inner matmul accumulates sequentially
/// over the shared dimension so traces are reproducible.
pub fn attention_from_qk(
    q: &DenseTensor,
    k: &DenseTensor,
    scale_dim: usize,
) -> Result<DenseTensor, TensorError> {
    q.expect_rank(3)?;
    k.expect_rank(3)?;
    for axis in 0..3 {
        if q.shape[axis] != k.shape[axis] {
            return Err(TensorError::DimMismatch {
                what: "q/k",
                left: q.shape[axis],
                right: k.shape[axis],
            });
        }
    }
    let (heads, tokens, dim) = (q.shape[0], q.shape[1], q.shape[2]);
    let scale = 1.0 / (scale_dim as f32).sqrt();
    let mut out = vec![0.0f32; heads * tokens * tokens];
    for h in 0..heads {
        let qh = q.slab(h);
        let kh = k.slab(h);
        let oh = &mut out[h * tokens * tokens..(h + 1) * tokens * tokens];
        for i in 0..tokens {
            let qi = &qh[i * dim..(i + 1) * dim];
            let logits_row = &mut oh[i * tokens..(i + 1) * tokens];
            for (j, logit) in logits_row.iter_mut().enumerate() {
                let kj = &kh[j * dim..(j + 1) * dim];
                let mut acc = 0.0f32;
                for d in 0..dim {
                    acc += qi[d] * kj[d];
                }
                *logit = acc * scale;
            }
            // softmax the logits row in place
            let snapshot: Vec<f32> = logits_row.to_vec();
            softmax_into(&snapshot, logits_row);
        }
    }
    DenseTensor::new(vec![heads, tokens, tokens], out)
}

/// Arithmetic mean over the head axis of a `[heads, N, N]` tensor.
pub fn average_heads(a: &DenseTensor) -> Result<DenseTensor, TensorError> {
    a.expect_rank(3)?;
    let (heads, rows, cols) = (a.shape[0], a.shape[1], a.shape[2]);
    let inv = 1.0 / heads as f32;
    let mut out = vec![0.0f32; rows * cols];
    for h in 0..heads {
        for (o, &v) in out.iter_mut().zip(a.slab(h)) {
            *o += v;
        }
    }
    for o in out.iter_mut() {
        *o *= inv;
    }
    DenseTensor::new(vec![rows, cols], out)
}

/// Per-row L1 norm of a `[N, d]` tensor: `out[i] = Σ_j |v[i, j]|`.
///
/// Accumulates in f64 so that downstream score comparisons are stable.
pub fn l1_norm_rows(v: &DenseTensor) -> Result<Vec<f64>, TensorError> {
    v.expect_rank(2)?;
    if !v.is_finite() {
        return Err(TensorError::NonFinite);
    }
    let rows = v.shape[0];
    let mut out = Vec::with_capacity(rows);
    for r in 0..rows {
        let mut acc = 0.0f64;
        for &x in v.row(r) {
            acc += (x as f64).abs();
        }
        out.push(acc);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_close(got: f32, want: f32, tol: f32) {
        assert!(
            (got - want).abs() <= tol,
            "got {got}, want {want} (tol {tol})"
        );
    }

    #[test]
    fn softmax_symmetric_row() {
        let t = DenseTensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap();
        let s = softmax_rows(&t).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_survives_large_logits() {
        let t = DenseTensor::new(vec![1, 2], vec![1000.0, 0.0]).unwrap();
        let s = softmax_rows(&t).unwrap();
        assert!(s.is_finite());
        assert_close(s.data()[0], 1.0, 1e-6);
        assert!(s.data()[1] >= 0.0 && s.data()[1] < 1e-6);
    }

    #[test]
    fn softmax_ln2_row() {
        // softmax([ln 2, 0]) = [2/3, 1/3]
        let t = DenseTensor::new(vec![1, 2], vec![2.0f32.ln(), 0.0]).unwrap();
        let s = softmax_rows(&t).unwrap();
        assert_close(s.data()[0], 2.0 / 3.0, 1e-6);
        assert_close(s.data()[1], 1.0 / 3.0, 1e-6);
    }

    #[test]
    fn softmax_rejects_rank3() {
        let t = DenseTensor::zeros(vec![1, 2, 2]);
        assert_eq!(
            softmax_rows(&t).unwrap_err(),
            TensorError::RankMismatch {
                expected: 2,
                got: 3
            }
        );
    }

    #[test]
    fn attention_zero_logits_uniform() {
        let q = DenseTensor::zeros(vec![2, 3, 4]);
        let k = DenseTensor::zeros(vec![2, 3, 4]);
        let a = attention_from_qk(&q, &k, 4).unwrap();
        for &v in a.data() {
            assert_close(v, 1.0 / 3.0, 1e-6);
        }
    }

    #[test]
    fn attention_hand_evaluated_two_tokens() {
        // single head, N=2, d=1: row 0 logits are [2, 0] / sqrt(1)
        let q = DenseTensor::new(vec![1, 2, 1], vec![2.0, 0.0]).unwrap();
        let k = DenseTensor::new(vec![1, 2, 1], vec![1.0, 0.0]).unwrap();
        let a = attention_from_qk(&q, &k, 1).unwrap();
        let e2 = 2.0f32.exp();
        assert_close(a.data()[0], e2 / (e2 + 1.0), 1e-6);
        assert_close(a.data()[1], 1.0 / (e2 + 1.0), 1e-6);
        // row 1 logits are [0, 0]
        assert_close(a.data()[2], 0.5, 1e-6);
        assert_close(a.data()[3], 0.5, 1e-6);
    }

    #[test]
    fn attention_shape_mismatch() {
        let q = DenseTensor::zeros(vec![1, 2, 3]);
        let k = DenseTensor::zeros(vec![1, 2, 4]);
        assert!(matches!(
            attention_from_qk(&q, &k, 3).unwrap_err(),
            TensorError::DimMismatch { .. }
        ));
    }

    #[test]
    fn average_heads_single_head_is_identity() {
        let a = DenseTensor::new(vec![1, 2, 2], vec![0.9, 0.1, 0.4, 0.6]).unwrap();
        let avg = average_heads(&a).unwrap();
        assert_eq!(avg.data(), &[0.9, 0.1, 0.4, 0.6]);
    }

    #[test]
    fn average_heads_two_heads_mean() {
        let a = DenseTensor::new(vec![2, 1, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let avg = average_heads(&a).unwrap();
        assert_eq!(avg.data(), &[0.5, 0.5]);
    }

    #[test]
    fn average_heads_matches_elementwise_oracle() {
        // 3 random-ish stochastic heads over 4 tokens
        let mut data = Vec::new();
        for h in 0..3usize {
            for i in 0..4usize {
                let mut row = [0.0f32; 4];
                for (j, r) in row.iter_mut().enumerate() {
                    *r = ((h * 17 + i * 5 + j * 3 + 1) % 7) as f32 + 0.5;
                }
                let s: f32 = row.iter().sum();
                data.extend(row.iter().map(|v| v / s));
            }
        }
        let a = DenseTensor::new(vec![3, 4, 4], data.clone()).unwrap();
        let avg = average_heads(&a).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let want = (data[i * 4 + j] + data[16 + i * 4 + j] + data[32 + i * 4 + j]) / 3.0;
                assert_close(avg.data()[i * 4 + j], want, 1e-6);
            }
        }
    }

    #[test]
    fn l1_norm_rows_basics() {
        let v = DenseTensor::new(vec![2, 3], vec![0.0, 0.0, 0.0, 1.0, -2.0, 3.0]).unwrap();
        let norms = l1_norm_rows(&v).unwrap();
        assert_eq!(norms, vec![0.0, 6.0]);
    }

    #[test]
    fn l1_norm_rows_matches_summation_oracle() {
        let data: Vec<f32> = (0..20).map(|i| (i as f32 - 9.5) * 0.3).collect();
        let v = DenseTensor::new(vec![5, 4], data.clone()).unwrap();
        let norms = l1_norm_rows(&v).unwrap();
        for r in 0..5 {
            let mut want = 0.0f64;
            for c in 0..4 {
                want += (data[r * 4 + c] as f64).abs();
            }
            assert!((norms[r] - want).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(rows in 1usize..5, cols in 1usize..9, seed in 0u64..1000) {
            let mut rng = crate::rng::SplitMix64::new(seed);
            let data: Vec<f32> = (0..rows * cols)
                .map(|_| (rng.next_unit_f32() - 0.5) * 20.0)
                .collect();
            let t = DenseTensor::new(vec![rows, cols], data).unwrap();
            let s = softmax_rows(&t).unwrap();
            for r in 0..rows {
                let sum: f32 = s.row(r).iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-6);
            }
        }

        #[test]
        fn softmax_shift_invariant(cols in 1usize..9, seed in 0u64..1000, shift in -50.0f32..50.0) {
            let mut rng = crate::rng::SplitMix64::new(seed);
            let data: Vec<f32> = (0..cols).map(|_| (rng.next_unit_f32() - 0.5) * 10.0).collect();
            let shifted: Vec<f32> = data.iter().map(|v| v + shift).collect();
            let a = softmax_rows(&DenseTensor::new(vec![1, cols], data).unwrap()).unwrap();
            let b = softmax_rows(&DenseTensor::new(vec![1, cols], shifted).unwrap()).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!((x - y).abs() < 1e-6);
            }
        }

        #[test]
        fn attention_permutation_equivariant(tokens in 2usize..6, seed in 0u64..500) {
            let dim = 3usize;
            let mut rng = crate::rng::SplitMix64::new(seed);
            let mut gen = |n: usize| -> Vec<f32> {
                (0..n).map(|_| (rng.next_unit_f32() - 0.5) * 4.0).collect()
            };
            let qd = gen(tokens * dim);
            let kd = gen(tokens * dim);
            // rotate token order by one as the permutation
            let perm: Vec<usize> = (0..tokens).map(|i| (i + 1) % tokens).collect();
            let permute = |src: &[f32]| -> Vec<f32> {
                let mut out = vec![0.0f32; src.len()];
                for (dst_i, &src_i) in perm.iter().enumerate() {
                    out[dst_i * dim..(dst_i + 1) * dim]
                        .copy_from_slice(&src[src_i * dim..(src_i + 1) * dim]);
                }
                out
            };
            let a = attention_from_qk(
                &DenseTensor::new(vec![1, tokens, dim], qd.clone()).unwrap(),
                &DenseTensor::new(vec![1, tokens, dim], kd.clone()).unwrap(),
                dim,
            ).unwrap();
            let ap = attention_from_qk(
                &DenseTensor::new(vec![1, tokens, dim], permute(&qd)).unwrap(),
                &DenseTensor::new(vec![1, tokens, dim], permute(&kd)).unwrap(),
                dim,
            ).unwrap();
            for i in 0..tokens {
                for j in 0..tokens {
                    let orig = a.data()[perm[i] * tokens + perm[j]];
                    let perm_v = ap.data()[i * tokens + j];
                    prop_assert!((orig - perm_v).abs() < 1e-5);
                }
            }
        }
    }
}
