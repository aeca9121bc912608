//! Serial math kernels shared by the taped graph and the inference engine.
//!
//! Both execution paths call into these functions, so a value computed during
//! a training forward and the same value computed during cached inference are
//! bit-identical. Kernels are plain loops over contiguous slices; reductions
//! keep a fixed order, which is what the determinism guarantees rest on.

use crate::scalar::Scalar;

/// Rotary frequency base.
pub const ROPE_BASE: f64 = 10000.0;

/// `out[m,n] = a[m,k] · b[k,n]`
pub fn matmul<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + av * bv;
            }
        }
    }
    out
}

/// `out[k,n] = aᵀ[k,m] · b[m,n]` for `a[m,k]`. Accumulates into `out`.
pub fn matmul_at_b_acc<F: Scalar>(out: &mut [F], a: &[F], b: &[F], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    for p in 0..m {
        let a_row = &a[p * k..(p + 1) * k];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + av * bv;
            }
        }
    }
}

/// `out[m,k] = a[m,n] · bᵀ[n,k]` for `b[k,n]`. Accumulates into `out`.
pub fn matmul_a_bt_acc<F: Scalar>(out: &mut [F], a: &[F], b: &[F], m: usize, n: usize, k: usize) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * k);
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        let out_row = &mut out[i * k..(i + 1) * k];
        for (o, j) in out_row.iter_mut().zip(0..k) {
            let b_row = &b[j * n..(j + 1) * n];
            *o = *o + dot(a_row, b_row);
        }
    }
}

#[inline]
pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = F::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc = acc + x * y;
    }
    acc
}

/// Numerically stable softmax over one row, in place.
pub fn softmax_row<F: Scalar>(row: &mut [F]) {
    debug_assert!(!row.is_empty());
    let mut max = row[0];
    for &v in row.iter() {
        if v > max {
            max = v;
        }
    }
    let mut sum = F::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    let inv = F::one() / sum;
    for v in row.iter_mut() {
        *v = *v * inv;
    }
}

/// RMS normalization over rows of length `d`, scaled by `gain`.
pub fn rmsnorm_rows<F: Scalar>(x: &[F], gain: &[F], d: usize, eps: f64) -> Vec<F> {
    debug_assert_eq!(x.len() % d, 0);
    debug_assert_eq!(gain.len(), d);
    let rows = x.len() / d;
    let inv_d = F::from_f64(1.0 / d as f64);
    let eps = F::from_f64(eps);
    let mut out = vec![F::zero(); x.len()];
    for r in 0..rows {
        let xi = &x[r * d..(r + 1) * d];
        let oi = &mut out[r * d..(r + 1) * d];
        let ms = dot(xi, xi) * inv_d;
        let inv_rms = F::one() / (ms + eps).sqrt();
        for ((o, &v), &g) in oi.iter_mut().zip(xi).zip(gain) {
            *o = v * inv_rms * g;
        }
    }
    out
}

#[inline]
pub fn sigmoid<F: Scalar>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

#[inline]
pub fn silu<F: Scalar>(x: F) -> F {
    x * sigmoid(x)
}

// ── Rotary position embedding ───────────────────────────────────────────────

/// Rotate rows of `x` (layout `[rows, n_heads*head_dim]`) in place. Row `t`
/// uses absolute position `pos_start + t`. Pairs are split halfway through
/// each head: `(x[i], x[i + head_dim/2])`.
///
/// Angles are evaluated in f64 regardless of `F`, so the rotation applied to
/// a key at its source layer and to a query at a consuming layer agree
/// exactly for equal positions.
pub fn rope_rows<F: Scalar>(
    x: &mut [F],
    rows: usize,
    n_heads: usize,
    head_dim: usize,
    pos_start: usize,
) {
    rope_rows_signed(x, rows, n_heads, head_dim, pos_start, 1.0);
}

/// Inverse rotation, used by the backward pass.
pub fn rope_rows_inverse<F: Scalar>(
    x: &mut [F],
    rows: usize,
    n_heads: usize,
    head_dim: usize,
    pos_start: usize,
) {
    rope_rows_signed(x, rows, n_heads, head_dim, pos_start, -1.0);
}

fn rope_rows_signed<F: Scalar>(
    x: &mut [F],
    rows: usize,
    n_heads: usize,
    head_dim: usize,
    pos_start: usize,
    sign: f64,
) {
    debug_assert_eq!(head_dim % 2, 0);
    debug_assert_eq!(x.len(), rows * n_heads * head_dim);
    let half = head_dim / 2;
    let width = n_heads * head_dim;
    for t in 0..rows {
        let pos = (pos_start + t) as f64;
        let row = &mut x[t * width..(t + 1) * width];
        for h in 0..n_heads {
            let head = &mut row[h * head_dim..(h + 1) * head_dim];
            for i in 0..half {
                let theta = pos * ROPE_BASE.powf(-2.0 * i as f64 / head_dim as f64);
                let (sin, cos) = (sign * theta).sin_cos();
                let (sin, cos) = (F::from_f64(sin), F::from_f64(cos));
                let a = head[i];
                let b = head[i + half];
                head[i] = a * cos - b * sin;
                head[i + half] = b * cos + a * sin;
            }
        }
    }
}

// ── Attention ───────────────────────────────────────────────────────────────

/// Borrowed view of one layer's key/value storage.
///
/// Covers both layouts in use: the training path's `[seq, n_kv_heads *
/// head_dim]` row tensors and the cache engine's per-head banks. Strides are
/// in elements.
#[derive(Clone, Copy)]
pub struct KvView<'a, F: Scalar> {
    pub keys: &'a [F],
    pub values: &'a [F],
    pub seq: usize,
    pub n_kv_heads: usize,
    pub head_dim: usize,
    /// Elements between consecutive positions within one head.
    pub pos_stride: usize,
    /// Elements between heads.
    pub head_stride: usize,
}

impl<'a, F: Scalar> KvView<'a, F> {
    /// View over `[seq, n_kv_heads * head_dim]` row-major storage.
    pub fn from_rows(
        keys: &'a [F],
        values: &'a [F],
        seq: usize,
        n_kv_heads: usize,
        head_dim: usize,
    ) -> Self {
        debug_assert_eq!(keys.len(), seq * n_kv_heads * head_dim);
        debug_assert_eq!(values.len(), keys.len());
        KvView {
            keys,
            values,
            seq,
            n_kv_heads,
            head_dim,
            pos_stride: n_kv_heads * head_dim,
            head_stride: head_dim,
        }
    }

    #[inline]
    pub fn key(&self, kv_head: usize, t: usize) -> &[F] {
        let off = kv_head * self.head_stride + t * self.pos_stride;
        &self.keys[off..off + self.head_dim]
    }

    #[inline]
    pub fn value(&self, kv_head: usize, t: usize) -> &[F] {
        let off = kv_head * self.head_stride + t * self.pos_stride;
        &self.values[off..off + self.head_dim]
    }
}

/// Causal grouped-query attention.
///
/// `q` has layout `[seq_q, n_heads * head_dim]` with rotary already applied.
/// Query row `t` attends to kv positions `0..=causal_offset + t`; the caller
/// guarantees `kv.seq > causal_offset + seq_q - 1` is not required — rows
/// beyond the mask are simply never read. Scores are scaled by
/// `1/sqrt(head_dim)`.
///
/// When `probs` is `Some`, attention weights are written there with layout
/// `[n_heads, seq_q, kv.seq]` (masked entries stay zero) for the backward
/// pass.
pub fn attn_forward<F: Scalar>(
    q: &[F],
    seq_q: usize,
    n_heads: usize,
    head_dim: usize,
    kv: &KvView<'_, F>,
    causal_offset: usize,
    mut probs: Option<&mut [F]>,
) -> Vec<F> {
    debug_assert_eq!(q.len(), seq_q * n_heads * head_dim);
    debug_assert_eq!(n_heads % kv.n_kv_heads, 0);
    debug_assert_eq!(head_dim, kv.head_dim);
    let group = n_heads / kv.n_kv_heads;
    let width = n_heads * head_dim;
    let scale = F::from_f64(1.0 / (head_dim as f64).sqrt());
    let mut out = vec![F::zero(); seq_q * width];
    let mut scores: Vec<F> = Vec::with_capacity(kv.seq);

    for h in 0..n_heads {
        let g = h / group;
        for t in 0..seq_q {
            let visible = (causal_offset + t + 1).min(kv.seq);
            let q_row = &q[t * width + h * head_dim..t * width + (h + 1) * head_dim];
            scores.clear();
            for j in 0..visible {
                scores.push(dot(q_row, kv.key(g, j)) * scale);
            }
            softmax_row(&mut scores);
            let out_row = &mut out[t * width + h * head_dim..t * width + (h + 1) * head_dim];
            for (j, &p) in scores.iter().enumerate() {
                let v_row = kv.value(g, j);
                for (o, &v) in out_row.iter_mut().zip(v_row) {
                    *o = *o + p * v;
                }
            }
            if let Some(buf) = probs.as_deref_mut() {
                let base = (h * seq_q + t) * kv.seq;
                buf[base..base + visible].copy_from_slice(&scores);
            }
        }
    }
    out
}

/// Backward pass for [`attn_forward`] over row-layout KV storage.
///
/// Returns `(d_q, d_keys, d_values)` with the same layouts as the inputs.
#[allow(clippy::too_many_arguments)]
pub fn attn_backward<F: Scalar>(
    d_out: &[F],
    q: &[F],
    seq_q: usize,
    n_heads: usize,
    head_dim: usize,
    kv: &KvView<'_, F>,
    causal_offset: usize,
    probs: &[F],
) -> (Vec<F>, Vec<F>, Vec<F>) {
    debug_assert_eq!(kv.head_stride, head_dim, "backward expects row layout");
    let group = n_heads / kv.n_kv_heads;
    let width = n_heads * head_dim;
    let kv_width = kv.n_kv_heads * head_dim;
    let scale = F::from_f64(1.0 / (head_dim as f64).sqrt());

    let mut d_q = vec![F::zero(); q.len()];
    let mut d_k = vec![F::zero(); kv.seq * kv_width];
    let mut d_v = vec![F::zero(); kv.seq * kv_width];
    let mut dp: Vec<F> = Vec::with_capacity(kv.seq);

    for h in 0..n_heads {
        let g = h / group;
        for t in 0..seq_q {
            let visible = (causal_offset + t + 1).min(kv.seq);
            let p_row = &probs[(h * seq_q + t) * kv.seq..(h * seq_q + t) * kv.seq + visible];
            let d_out_row = &d_out[t * width + h * head_dim..t * width + (h + 1) * head_dim];
            let q_row = &q[t * width + h * head_dim..t * width + (h + 1) * head_dim];

            // dP[j] = d_out · V[j];  dV[j] += P[j] · d_out
            dp.clear();
            for j in 0..visible {
                dp.push(dot(d_out_row, kv.value(g, j)));
                let dv_row = &mut d_v[j * kv_width + g * head_dim..j * kv_width + (g + 1) * head_dim];
                for (o, &dv) in dv_row.iter_mut().zip(d_out_row) {
                    *o = *o + p_row[j] * dv;
                }
            }
            // softmax backward: dS[j] = P[j] (dP[j] − Σ P·dP), then scale
            let mut pp = F::zero();
            for j in 0..visible {
                pp = pp + p_row[j] * dp[j];
            }
            let d_q_row = &mut d_q[t * width + h * head_dim..t * width + (h + 1) * head_dim];
            for j in 0..visible {
                let ds = p_row[j] * (dp[j] - pp) * scale;
                let k_row = kv.key(g, j);
                for (o, &kvl) in d_q_row.iter_mut().zip(k_row) {
                    *o = *o + ds * kvl;
                }
                let dk_row = &mut d_k[j * kv_width + g * head_dim..j * kv_width + (g + 1) * head_dim];
                for (o, &qv) in dk_row.iter_mut().zip(q_row) {
                    *o = *o + ds * qv;
                }
            }
        }
    }
    (d_q, d_k, d_v)
}

// ── Cross entropy ───────────────────────────────────────────────────────────

/// Next-token cross entropy summed over rows whose target is not `ignore`.
///
/// Returns `(loss_sum, counted_rows, probs)`; `probs` holds the softmax of
/// each counted row (zeros for ignored rows) for the backward pass.
pub fn cross_entropy_sum<F: Scalar>(
    logits: &[F],
    rows: usize,
    vocab: usize,
    targets: &[u32],
    ignore: u32,
) -> (f64, usize, Vec<F>) {
    debug_assert_eq!(logits.len(), rows * vocab);
    debug_assert_eq!(targets.len(), rows);
    let mut probs = vec![F::zero(); logits.len()];
    let mut loss = 0.0f64;
    let mut count = 0usize;
    for r in 0..rows {
        if targets[r] == ignore {
            continue;
        }
        let row = &logits[r * vocab..(r + 1) * vocab];
        let p_row = &mut probs[r * vocab..(r + 1) * vocab];
        p_row.copy_from_slice(row);
        softmax_row(p_row);
        let p_t = p_row[targets[r] as usize].as_f64();
        loss -= p_t.max(f64::MIN_POSITIVE).ln();
        count += 1;
    }
    (loss, count, probs)
}
