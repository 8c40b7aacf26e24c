//! Attention kernels on channel-first `[width, M, H, W]` feature maps.
//!
//! `width = heads * head_dim`; channel `h * head_dim + e` is component `e`
//! of head `h`.

use std::cmp::Ordering;

use crate::numerics::Array;
use crate::numerics::ops::softmax_in_place;

fn dims(x: &Array) -> (usize, usize, usize) {
    let s = x.shape();
    (s[0], s[1], s[2] * s[3])
}

/// Self-attention among the spatial sites of each frame independently.
pub(crate) fn spatial_self_attention(q: &Array, k: &Array, v: &Array, heads: usize) -> Array {
    let (width, m, p) = dims(q);
    let d = width / heads;
    let scale = 1.0 / (d as f32).sqrt();
    let (qd, kd, vd) = (q.data(), k.data(), v.data());
    let mut out = vec![0.0f32; qd.len()];
    let mut scores = vec![0.0f32; p * p];
    for f in 0..m {
        for head in 0..heads {
            scores.fill(0.0);
            for e in 0..d {
                let off = ((head * d + e) * m + f) * p;
                let ke = &kd[off..off + p];
                for (p1, row) in scores.chunks_mut(p).enumerate() {
                    let a = qd[off + p1] * scale;
                    for (s, &kv) in row.iter_mut().zip(ke) {
                        *s += a * kv;
                    }
                }
            }
            for row in scores.chunks_mut(p) {
                softmax_in_place(row);
            }
            for e in 0..d {
                let off = ((head * d + e) * m + f) * p;
                let ve = &vd[off..off + p];
                for (p1, row) in scores.chunks(p).enumerate() {
                    let mut acc = 0.0f32;
                    for (&s, &vv) in row.iter().zip(ve) {
                        acc += s * vv;
                    }
                    out[off + p1] = acc;
                }
            }
        }
    }
    Array::from_vec(q.shape(), out).expect("same shape as q")
}

/// Cross-attention of one frame's sites (queries from `q`) onto text keys and
/// values `[tokens, width]`; writes the frame's output into `out`.
pub(crate) fn cross_attention_frame(
    q: &Array,
    frame: usize,
    keys: &Array,
    values: &Array,
    heads: usize,
    out: &mut [f32],
) {
    let (width, m, p) = dims(q);
    let d = width / heads;
    let tokens = keys.shape()[0];
    let scale = 1.0 / (d as f32).sqrt();
    let (qd, kd, vd) = (q.data(), keys.data(), values.data());
    let mut scores = vec![0.0f32; p * tokens];
    for head in 0..heads {
        scores.fill(0.0);
        for e in 0..d {
            let ch = head * d + e;
            let qe = &qd[(ch * m + frame) * p..(ch * m + frame + 1) * p];
            for tok in 0..tokens {
                let kv = kd[tok * width + ch] * scale;
                for (pi, &qv) in qe.iter().enumerate() {
                    scores[pi * tokens + tok] += qv * kv;
                }
            }
        }
        for row in scores.chunks_mut(tokens) {
            softmax_in_place(row);
        }
        for e in 0..d {
            let ch = head * d + e;
            let dst = &mut out[(ch * m + frame) * p..(ch * m + frame + 1) * p];
            for (pi, row) in scores.chunks(tokens).enumerate() {
                let mut acc = 0.0f32;
                for (tok, &s) in row.iter().enumerate() {
                    acc += s * vd[tok * width + ch];
                }
                dst[pi] = acc;
            }
        }
    }
}

/// Attention along the frame axis over frames `start..start+len`, at every
/// spatial site and head; returns `[width, len, H, W]`.
///
/// There is no positional encoding, and sums over key frames run in an order
/// fixed by the key/value contents rather than by frame position. Permuting
/// the input frames therefore permutes the output frames bitwise.
pub(crate) fn temporal_attention(
    q: &Array,
    k: &Array,
    v: &Array,
    heads: usize,
    start: usize,
    len: usize,
) -> Array {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2, checked just above.
        return unsafe { temporal_attention_avx2(q, k, v, heads, start, len) };
    }
    temporal_attention_generic(q, k, v, heads, start, len)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn temporal_attention_avx2(
    q: &Array,
    k: &Array,
    v: &Array,
    heads: usize,
    start: usize,
    len: usize,
) -> Array {
    temporal_attention_generic(q, k, v, heads, start, len)
}

#[inline(always)]
fn temporal_attention_generic(
    q: &Array,
    k: &Array,
    v: &Array,
    heads: usize,
    start: usize,
    len: usize,
) -> Array {
    let (width, m, site) = dims(q);
    let d = width / heads;
    let scale = 1.0 / (d as f32).sqrt();
    let (qd, kd, vd) = (q.data(), k.data(), v.data());
    let mut out = vec![0.0f32; width * len * site];
    let mut qv = vec![0.0f32; len * d];
    let mut kv = vec![0.0f32; len * d];
    let mut vv = vec![0.0f32; len * d];
    // keys transposed and values row-major, both in canonical order
    let mut kt = vec![0.0f32; d * len];
    let mut vs = vec![0.0f32; len * d];
    let mut order: Vec<usize> = Vec::with_capacity(len);
    let mut probs = vec![0.0f32; len];
    let mut acc = vec![0.0f32; d];
    for s in 0..site {
        for head in 0..heads {
            for j in 0..len {
                for e in 0..d {
                    let idx = ((head * d + e) * m + start + j) * site + s;
                    qv[j * d + e] = qd[idx] * scale;
                    kv[j * d + e] = kd[idx];
                    vv[j * d + e] = vd[idx];
                }
            }
            order.clear();
            order.extend(0..len);
            order.sort_by(|&a, &b| {
                cmp_bits(&kv[a * d..(a + 1) * d], &kv[b * d..(b + 1) * d])
                    .then_with(|| cmp_bits(&vv[a * d..(a + 1) * d], &vv[b * d..(b + 1) * d]))
            });
            for (r, &j) in order.iter().enumerate() {
                for e in 0..d {
                    kt[e * len + r] = kv[j * d + e];
                }
                vs[r * d..(r + 1) * d].copy_from_slice(&vv[j * d..(j + 1) * d]);
            }
            for i in 0..len {
                let qi = &qv[i * d..(i + 1) * d];
                probs.fill(0.0);
                for (e, &qe) in qi.iter().enumerate() {
                    for (p, &kj) in probs.iter_mut().zip(&kt[e * len..(e + 1) * len]) {
                        *p += qe * kj;
                    }
                }
                let max = probs.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                let mut denom = 0.0f32;
                for p in probs.iter_mut() {
                    *p = (*p - max).exp();
                    denom += *p;
                }
                acc.fill(0.0);
                for (r, p) in probs.iter_mut().enumerate() {
                    *p /= denom;
                    for (a, &vj) in acc.iter_mut().zip(&vs[r * d..(r + 1) * d]) {
                        *a += *p * vj;
                    }
                }
                for (e, &a) in acc.iter().enumerate() {
                    out[((head * d + e) * len + i) * site + s] = a;
                }
            }
        }
    }
    Array::from_vec(&[width, len, q.shape()[2], q.shape()[3]], out).expect("non-zero dims")
}

fn cmp_bits(a: &[f32], b: &[f32]) -> Ordering {
    a.iter()
        .map(|x| x.to_bits())
        .cmp(b.iter().map(|x| x.to_bits()))
}
