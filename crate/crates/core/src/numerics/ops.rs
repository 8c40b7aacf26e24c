use rayon::prelude::*;

use super::Array;
use crate::error::{Error, Result};

const LAYER_NORM_EPS: f64 = 1e-5;

/// Execution mode for the heavier kernels.
///
/// Parallel mode splits work over independent output rows only, so its
/// results are bitwise identical to serial mode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Exec {
    pub parallel: bool,
}

impl Exec {
    pub const SERIAL: Exec = Exec { parallel: false };
    pub const PARALLEL: Exec = Exec { parallel: true };
}

pub fn matmul(a: &Array, b: &Array) -> Result<Array> {
    matmul_with(a, b, Exec::SERIAL)
}

/// Matrix product of `[m, k]` and `[k, n]`, accumulating in ascending `k`.
pub fn matmul_with(a: &Array, b: &Array, exec: Exec) -> Result<Array> {
    if a.ndim() != 2 || b.ndim() != 2 {
        return Err(Error::dim(format!(
            "matmul needs 2-D operands, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    if k != k2 {
        return Err(Error::dim(format!(
            "matmul inner dimensions differ: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![0.0f32; m * n];
    matmul_into(a.data(), b.data(), m, k, n, &mut out, exec);
    Array::from_vec(&[m, n], out)
}

pub(crate) fn matmul_into(
    a: &[f32],
    b: &[f32],
    m: usize,
    k: usize,
    n: usize,
    out: &mut [f32],
    exec: Exec,
) {
    debug_assert_eq!(out.len(), m * n);
    if exec.parallel && m > MR {
        out.par_chunks_mut(MR * n).enumerate().for_each(|(blk, rows)| {
            let i0 = blk * MR;
            let mr = rows.len() / n;
            matmul_rows(&a[i0 * k..(i0 + mr) * k], b, mr, k, n, rows);
        });
        return;
    }
    matmul_rows(a, b, m, k, n, out);
}

const MR: usize = 4;
const NR: usize = 16;

fn matmul_rows(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2, checked just above.
        unsafe { matmul_rows_avx2(a, b, m, k, n, out) };
        return;
    }
    matmul_rows_generic(a, b, m, k, n, out);
}

/// Same code compiled with wider vectors. Multiplies and adds stay separate
/// instructions, so results match the generic build bit for bit.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn matmul_rows_avx2(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    matmul_rows_generic(a, b, m, k, n, out);
}

/// Register-blocked product. Every output element accumulates its `k` terms
/// in ascending order starting from zero, exactly like the textbook loop.
#[inline(always)]
fn matmul_rows_generic(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    let n_full = n - n % NR;
    for j0 in (0..n_full).step_by(NR) {
        let mut i0 = 0;
        while i0 + MR <= m {
            let mut acc = [[0.0f32; NR]; MR];
            for kk in 0..k {
                let brow: &[f32; NR] = b[kk * n + j0..kk * n + j0 + NR].try_into().unwrap();
                for (r, acc_r) in acc.iter_mut().enumerate() {
                    let av = a[(i0 + r) * k + kk];
                    for (o, &bv) in acc_r.iter_mut().zip(brow) {
                        *o += av * bv;
                    }
                }
            }
            for (r, acc_r) in acc.iter().enumerate() {
                out[(i0 + r) * n + j0..(i0 + r) * n + j0 + NR].copy_from_slice(acc_r);
            }
            i0 += MR;
        }
        for i in i0..m {
            let mut acc = [0.0f32; NR];
            for kk in 0..k {
                let av = a[i * k + kk];
                for (o, &bv) in acc.iter_mut().zip(&b[kk * n + j0..kk * n + j0 + NR]) {
                    *o += av * bv;
                }
            }
            out[i * n + j0..i * n + j0 + NR].copy_from_slice(&acc);
        }
    }
    for i in 0..m {
        for j in n_full..n {
            let mut acc = 0.0f32;
            for kk in 0..k {
                acc += a[i * k + kk] * b[kk * n + j];
            }
            out[i * n + j] = acc;
        }
    }
}

fn axis_layout(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::dim(format!("axis {axis} out of range for {shape:?}")));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

/// Numerically stable softmax along `axis`.
pub fn softmax(a: &Array, axis: usize) -> Result<Array> {
    if !a.all_finite() {
        return Err(Error::Numeric("softmax input is not finite".into()));
    }
    let (outer, len, inner) = axis_layout(a.shape(), axis)?;
    let mut out = a.clone();
    let data = out.data_mut();
    let mut buf = vec![0.0f32; len];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * len + j) * inner + i;
            for (j, slot) in buf.iter_mut().enumerate() {
                *slot = data[idx(j)];
            }
            softmax_in_place(&mut buf);
            for (j, &v) in buf.iter().enumerate() {
                data[idx(j)] = v;
            }
        }
    }
    Ok(out)
}

/// Softmax of a finite slice; the normalizer is accumulated in `f64`.
pub(crate) fn softmax_in_place(xs: &mut [f32]) {
    let max = xs.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f64;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x as f64;
    }
    for x in xs.iter_mut() {
        *x = (*x as f64 / sum) as f32;
    }
}

/// 1-D convolution along the frame axis of a `[C, M, H, W]` video with
/// replicate (edge-clamp) padding; `kernel` is `[C_out, C, k]` with `k` odd.
pub fn conv_temporal(x: &Array, kernel: &Array, bias: Option<&Array>) -> Result<Array> {
    if x.ndim() != 4 || kernel.ndim() != 3 {
        return Err(Error::dim(format!(
            "conv_temporal expects [C,M,H,W] and [Co,C,k], got {:?} and {:?}",
            x.shape(),
            kernel.shape()
        )));
    }
    let (c, m, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, kc, k) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[2]);
    if k % 2 == 0 {
        return Err(Error::config(
            "temporal_kernel",
            format!("kernel size must be odd, got {k}"),
        ));
    }
    if kc != c {
        return Err(Error::dim(format!(
            "conv_temporal kernel has {kc} input channels, input has {c}"
        )));
    }
    check_bias(bias, co)?;
    let site = h * w;
    let r = k / 2;
    let xd = x.data();
    let kd = kernel.data();
    let mut out = vec![0.0f32; co * m * site];
    for o in 0..co {
        for f in 0..m {
            let acc = &mut out[(o * m + f) * site..(o * m + f + 1) * site];
            for ci in 0..c {
                for tap in 0..k {
                    let src = (f + tap).saturating_sub(r).min(m - 1);
                    let wv = kd[(o * c + ci) * k + tap];
                    let plane = &xd[(ci * m + src) * site..(ci * m + src + 1) * site];
                    for (a, &v) in acc.iter_mut().zip(plane) {
                        *a += wv * v;
                    }
                }
            }
            if let Some(b) = bias {
                let bv = b.data()[o];
                acc.iter_mut().for_each(|a| *a += bv);
            }
        }
    }
    Array::from_vec(&[co, m, h, w], out)
}

pub fn conv_spatial(x: &Array, kernel: &Array, bias: Option<&Array>) -> Result<Array> {
    conv_spatial_with(x, kernel, bias, Exec::SERIAL)
}

/// 2-D convolution applied to every frame of a `[C, M, H, W]` video with zero
/// "same" padding; `kernel` is `[C_out, C, kh, kw]` with odd extents.
pub fn conv_spatial_with(
    x: &Array,
    kernel: &Array,
    bias: Option<&Array>,
    exec: Exec,
) -> Result<Array> {
    if x.ndim() != 4 || kernel.ndim() != 4 {
        return Err(Error::dim(format!(
            "conv_spatial expects [C,M,H,W] and [Co,C,kh,kw], got {:?} and {:?}",
            x.shape(),
            kernel.shape()
        )));
    }
    let (c, m, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, kc, kh, kw) = (
        kernel.shape()[0],
        kernel.shape()[1],
        kernel.shape()[2],
        kernel.shape()[3],
    );
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::config(
            "spatial_kernel",
            format!("kernel extents must be odd, got {kh}x{kw}"),
        ));
    }
    if kc != c {
        return Err(Error::dim(format!(
            "conv_spatial kernel has {kc} input channels, input has {c}"
        )));
    }
    check_bias(bias, co)?;
    let cols_n = m * h * w;
    let rows = c * kh * kw;
    let out_data = if kh == 1 && kw == 1 {
        let mut out = vec![0.0f32; co * cols_n];
        matmul_into(kernel.data(), x.data(), co, c, cols_n, &mut out, exec);
        out
    } else {
        let (rh, rw) = (kh / 2, kw / 2);
        let xd = x.data();
        let mut cols = vec![0.0f32; rows * cols_n];
        for ci in 0..c {
            for dy in 0..kh {
                for dx in 0..kw {
                    let row = (ci * kh + dy) * kw + dx;
                    let dst = &mut cols[row * cols_n..(row + 1) * cols_n];
                    for f in 0..m {
                        let plane = &xd[(ci * m + f) * h * w..(ci * m + f + 1) * h * w];
                        for y in 0..h {
                            let sy = y + dy;
                            if sy < rh || sy - rh >= h {
                                continue;
                            }
                            let sy = sy - rh;
                            let drow = &mut dst[(f * h + y) * w..(f * h + y + 1) * w];
                            for (xx, d) in drow.iter_mut().enumerate() {
                                let sx = xx + dx;
                                if sx >= rw && sx - rw < w {
                                    *d = plane[sy * w + sx - rw];
                                }
                            }
                        }
                    }
                }
            }
        }
        let mut out = vec![0.0f32; co * cols_n];
        matmul_into(kernel.data(), &cols, co, rows, cols_n, &mut out, exec);
        out
    };
    let mut out = Array::from_vec(&[co, m, h, w], out_data)?;
    if let Some(b) = bias {
        add_channel_bias(&mut out, b)?;
    }
    Ok(out)
}

fn check_bias(bias: Option<&Array>, n: usize) -> Result<()> {
    match bias {
        Some(b) if b.len() != n => Err(Error::dim(format!(
            "bias has {} entries, expected {n}",
            b.len()
        ))),
        _ => Ok(()),
    }
}

/// Adds `bias[c]` to every element of channel `c` (axis 0).
pub fn add_channel_bias(x: &mut Array, bias: &Array) -> Result<()> {
    let c = x.shape()[0];
    check_bias(Some(bias), c)?;
    let per = x.len() / c;
    for (chunk, &b) in x.data_mut().chunks_mut(per).zip(bias.data()) {
        chunk.iter_mut().for_each(|v| *v += b);
    }
    Ok(())
}

/// Normalizes every slice along `axis` to zero mean and unit variance, then
/// applies the optional per-element `gain` and `bias` (length = extent of `axis`).
pub fn layer_norm(
    x: &Array,
    axis: usize,
    gain: Option<&Array>,
    bias: Option<&Array>,
) -> Result<Array> {
    let (outer, len, inner) = axis_layout(x.shape(), axis)?;
    check_bias(gain, len)?;
    check_bias(bias, len)?;
    let xd = x.data();
    let mut out = vec![0.0f32; xd.len()];
    let mut mean = vec![0.0f64; inner];
    let mut var = vec![0.0f64; inner];
    for o in 0..outer {
        let base = o * len * inner;
        mean.fill(0.0);
        var.fill(0.0);
        for j in 0..len {
            let row = &xd[base + j * inner..base + (j + 1) * inner];
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= len as f64);
        for j in 0..len {
            let row = &xd[base + j * inner..base + (j + 1) * inner];
            for ((s, &m), &v) in var.iter_mut().zip(&mean).zip(row) {
                let d = v as f64 - m;
                *s += d * d;
            }
        }
        let inv: Vec<f64> = var
            .iter()
            .map(|s| 1.0 / (s / len as f64 + LAYER_NORM_EPS).sqrt())
            .collect();
        for j in 0..len {
            let g = gain.map_or(1.0, |g| g.data()[j]);
            let b = bias.map_or(0.0, |b| b.data()[j]);
            let src = &xd[base + j * inner..base + (j + 1) * inner];
            let dst = &mut out[base + j * inner..base + (j + 1) * inner];
            for i in 0..inner {
                let n = ((src[i] as f64 - mean[i]) * inv[i]) as f32;
                dst[i] = n * g + b;
            }
        }
    }
    Array::from_vec(x.shape(), out)
}

pub fn silu(x: &Array) -> Array {
    x.map(|v| v / (1.0 + (-v).exp()))
}

/// `x · Wᵀ + b` over the last axis: `x` is `[.., in]`, `weight` is `[out, in]`.
pub fn linear(x: &Array, weight: &Array, bias: Option<&Array>) -> Result<Array> {
    if weight.ndim() != 2 {
        return Err(Error::dim("linear weight must be 2-D"));
    }
    let (n_out, n_in) = (weight.shape()[0], weight.shape()[1]);
    let last = *x.shape().last().unwrap();
    if last != n_in {
        return Err(Error::dim(format!(
            "linear expects last axis {n_in}, got {:?}",
            x.shape()
        )));
    }
    check_bias(bias, n_out)?;
    let rows = x.len() / n_in;
    let wd = weight.data();
    let mut out = Vec::with_capacity(rows * n_out);
    for r in 0..rows {
        let xr = &x.data()[r * n_in..(r + 1) * n_in];
        for o in 0..n_out {
            let wr = &wd[o * n_in..(o + 1) * n_in];
            let mut acc = 0.0f32;
            for (a, b) in xr.iter().zip(wr) {
                acc += a * b;
            }
            if let Some(b) = bias {
                acc += b.data()[o];
            }
            out.push(acc);
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = n_out;
    Array::from_vec(&shape, out)
}

/// Per-position channel mixing on a channel-first array: `x` is `[C, ...]`,
/// `weight` is `[C_out, C]`; the result is `[C_out, ...]`.
pub fn channel_mix(x: &Array, weight: &Array, bias: Option<&Array>, exec: Exec) -> Result<Array> {
    if weight.ndim() != 2 || weight.shape()[1] != x.shape()[0] {
        return Err(Error::dim(format!(
            "channel_mix weight {:?} does not match input {:?}",
            weight.shape(),
            x.shape()
        )));
    }
    let (co, c) = (weight.shape()[0], weight.shape()[1]);
    let p = x.len() / c;
    let mut out = vec![0.0f32; co * p];
    matmul_into(weight.data(), x.data(), co, c, p, &mut out, exec);
    let mut shape = x.shape().to_vec();
    shape[0] = co;
    let mut out = Array::from_vec(&shape, out)?;
    if let Some(b) = bias {
        add_channel_bias(&mut out, b)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{rng_normal, Rng};

    fn randn(seed: u64, shape: &[usize]) -> Array {
        rng_normal(&mut Rng::new(seed, 0), shape)
    }

    fn naive_matmul(a: &Array, b: &Array) -> Vec<f32> {
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0f32;
                for kk in 0..k {
                    s += a.data()[i * k + kk] * b.data()[kk * n + j];
                }
                out[i * n + j] = s;
            }
        }
        out
    }

    #[test]
    fn matmul_identity_is_bitwise() {
        let a = randn(1, &[3, 3]);
        let i = Array::identity(3);
        assert!(matmul(&i, &a).unwrap().bitwise_eq(&a));
        assert!(matmul(&a, &i).unwrap().bitwise_eq(&a));
    }

    #[test]
    fn matmul_small_by_hand() {
        let a = Array::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Array::from_vec(&[2, 1], vec![1.0, 1.0]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_exactly() {
        let a = randn(2, &[5, 7]);
        let b = randn(3, &[7, 3]);
        assert_eq!(matmul(&a, &b).unwrap().data(), naive_matmul(&a, &b).as_slice());
        // wide enough to cross column tiles
        let a = randn(4, &[6, 9]);
        let b = randn(5, &[9, 1300]);
        let want = naive_matmul(&a, &b);
        assert_eq!(matmul(&a, &b).unwrap().data(), want.as_slice());
        assert_eq!(
            matmul_with(&a, &b, Exec::PARALLEL).unwrap().data(),
            want.as_slice()
        );
    }

    #[test]
    fn matmul_shape_mismatch() {
        let err = matmul(&Array::zeros(&[2, 3]), &Array::zeros(&[2, 3])).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn softmax_cases() {
        let c = Array::full(&[3], 2.5);
        for v in softmax(&c, 0).unwrap().data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-7);
        }
        let x = Array::from_vec(&[2], vec![0.0, 2f32.ln()]).unwrap();
        let s = softmax(&x, 0).unwrap();
        assert!((s.data()[0] - 1.0 / 3.0).abs() < 1e-7);
        assert!((s.data()[1] - 2.0 / 3.0).abs() < 1e-7);

        let r = randn(9, &[4, 6]);
        let s = softmax(&r, 1).unwrap();
        for row in s.data().chunks(6) {
            let sum: f64 = row.iter().map(|&v| v as f64).sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&v| v > 0.0 && v <= 1.0));
        }
        // axis 0 as well
        let s0 = softmax(&r, 0).unwrap();
        for j in 0..6 {
            let sum: f64 = (0..4).map(|i| s0.data()[i * 6 + j] as f64).sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_rejects_nan() {
        let x = Array::from_vec(&[2], vec![f32::NAN, 0.0]).unwrap();
        assert!(matches!(softmax(&x, 0), Err(Error::Numeric(_))));
    }

    fn temporal_oracle(x: &Array, k: &Array) -> Array {
        let (c, m, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (co, ks) = (k.shape()[0], k.shape()[2]);
        let mut out = Array::zeros(&[co, m, h, w]);
        for o in 0..co {
            for f in 0..m {
                for s in 0..h * w {
                    let mut acc = 0.0f64;
                    for ci in 0..c {
                        for t in 0..ks {
                            let src = (f as isize + t as isize - (ks / 2) as isize)
                                .clamp(0, m as isize - 1) as usize;
                            acc += k.data()[(o * c + ci) * ks + t] as f64
                                * x.data()[(ci * m + src) * h * w + s] as f64;
                        }
                    }
                    out.data_mut()[(o * m + f) * h * w + s] = acc as f32;
                }
            }
        }
        out
    }

    #[test]
    fn conv_temporal_identity_kernel() {
        let x = randn(4, &[3, 5, 2, 2]);
        let mut k = Array::zeros(&[3, 3, 3]);
        for c in 0..3 {
            k.data_mut()[(c * 3 + c) * 3 + 1] = 1.0;
        }
        assert!(conv_temporal(&x, &k, None).unwrap().bitwise_eq(&x));
    }

    #[test]
    fn conv_temporal_single_frame_sums_taps() {
        let x = randn(5, &[1, 1, 2, 3]);
        let k = Array::from_vec(&[1, 1, 3], vec![0.5, 2.0, -1.0]).unwrap();
        let y = conv_temporal(&x, &k, None).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - 1.5 * b).abs() < 1e-6);
        }
    }

    #[test]
    fn conv_temporal_matches_oracle() {
        let x = randn(6, &[4, 7, 3, 2]);
        let k = randn(7, &[5, 4, 3]);
        let y = conv_temporal(&x, &k, None).unwrap();
        assert!(y.max_abs_diff(&temporal_oracle(&x, &k)).unwrap() < 1e-6 * 10.0);
    }

    #[test]
    fn conv_temporal_even_kernel_is_config_error() {
        let x = randn(6, &[1, 4, 1, 1]);
        let err = conv_temporal(&x, &Array::zeros(&[1, 1, 2]), None).unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
    }

    #[test]
    fn conv_temporal_keeps_frame_constant_video_constant() {
        let frame = randn(8, &[3, 1, 2, 2]);
        let x = frame.gather_frames(&[0; 6]).unwrap();
        let y = conv_temporal(&x, &randn(9, &[2, 3, 3]), None).unwrap();
        for f in 1..6 {
            for c in 0..2 {
                assert_eq!(y.frame_plane(c, f), y.frame_plane(c, 0));
            }
        }
    }

    fn spatial_oracle(x: &Array, k: &Array) -> Array {
        let (c, m, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (co, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
        let mut out = Array::zeros(&[co, m, h, w]);
        for o in 0..co {
            for f in 0..m {
                for y in 0..h {
                    for xx in 0..w {
                        let mut acc = 0.0f64;
                        for ci in 0..c {
                            for dy in 0..kh {
                                for dx in 0..kw {
                                    let sy = y as isize + dy as isize - (kh / 2) as isize;
                                    let sx = xx as isize + dx as isize - (kw / 2) as isize;
                                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                        continue;
                                    }
                                    acc += k.data()[((o * c + ci) * kh + dy) * kw + dx] as f64
                                        * x.data()[((ci * m + f) * h + sy as usize) * w
                                            + sx as usize]
                                            as f64;
                                }
                            }
                        }
                        out.data_mut()[((o * m + f) * h + y) * w + xx] = acc as f32;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_spatial_identity_kernel() {
        let x = randn(10, &[2, 3, 4, 5]);
        let mut k = Array::zeros(&[2, 2, 3, 3]);
        for c in 0..2 {
            k.data_mut()[((c * 2 + c) * 3 + 1) * 3 + 1] = 1.0;
        }
        assert!(conv_spatial(&x, &k, None).unwrap().bitwise_eq(&x));
    }

    #[test]
    fn conv_spatial_one_by_one_is_channel_mix() {
        let x = randn(11, &[3, 2, 4, 4]);
        let k = randn(12, &[5, 3, 1, 1]);
        let y = conv_spatial(&x, &k, None).unwrap();
        let w = k.clone().reshape(&[5, 3]).unwrap();
        let z = channel_mix(&x, &w, None, Exec::SERIAL).unwrap();
        assert!(y.bitwise_eq(&z));
    }

    #[test]
    fn conv_spatial_matches_oracle() {
        let x = randn(13, &[3, 2, 5, 6]);
        let k = randn(14, &[4, 3, 3, 3]);
        let b = randn(15, &[4]);
        let mut want = spatial_oracle(&x, &k);
        add_channel_bias(&mut want, &b).unwrap();
        let y = conv_spatial(&x, &k, Some(&b)).unwrap();
        assert!(y.max_abs_diff(&want).unwrap() < 1e-5);
    }

    #[test]
    fn layer_norm_cases() {
        let g = randn(16, &[4]);
        let b = randn(17, &[4]);
        let z = layer_norm(&Array::zeros(&[4, 3]), 0, Some(&g), Some(&b)).unwrap();
        for j in 0..4 {
            for i in 0..3 {
                assert_eq!(z.data()[j * 3 + i], b.data()[j]);
            }
        }
        let c = layer_norm(&Array::full(&[5, 2], 0.1), 0, None, None).unwrap();
        assert!(c.data().iter().all(|&v| v.abs() < 1e-5));

        let x = randn(18, &[6, 7]);
        let y = layer_norm(&x, 0, None, None).unwrap();
        for i in 0..7 {
            let col: Vec<f64> = (0..6).map(|j| x.data()[j * 7 + i] as f64).collect();
            let mean = col.iter().sum::<f64>() / 6.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
            let mut m2 = 0.0;
            let mut v2 = 0.0;
            for j in 0..6 {
                let want = (col[j] - mean) / (var + 1e-5).sqrt();
                let got = y.data()[j * 7 + i] as f64;
                assert!((got - want).abs() < 1e-6);
                m2 += got / 6.0;
                v2 += got * got / 6.0;
            }
            assert!(m2.abs() < 1e-5);
            assert!((v2 - var / (var + 1e-5)).abs() < 1e-5);
        }
    }

    #[test]
    fn silu_and_linear() {
        assert!(silu(&Array::zeros(&[3])).data().iter().all(|&v| v == 0.0));
        let x = randn(19, &[10]);
        let y = silu(&x);
        for (a, b) in x.data().iter().zip(y.data()) {
            let want = *a as f64 / (1.0 + (-*a as f64).exp());
            assert!((*b as f64 - want).abs() < 1e-6);
        }

        let w = randn(20, &[3, 4]);
        let b = randn(21, &[3]);
        let zero = linear(&Array::zeros(&[2, 4]), &w, Some(&b)).unwrap();
        assert_eq!(&zero.data()[..3], b.data());
        let x = randn(22, &[2, 4]);
        let y = linear(&x, &w, Some(&b)).unwrap();
        for r in 0..2 {
            for o in 0..3 {
                let want: f64 = (0..4)
                    .map(|i| x.data()[r * 4 + i] as f64 * w.data()[o * 4 + i] as f64)
                    .sum::<f64>()
                    + b.data()[o] as f64;
                assert!((y.data()[r * 3 + o] as f64 - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn ops_are_pure() {
        let x = randn(23, &[3, 4, 4, 4]);
        let k = randn(24, &[3, 3, 3, 3]);
        let a = conv_spatial(&x, &k, None).unwrap();
        let b = conv_spatial(&x, &k, None).unwrap();
        assert!(a.bitwise_eq(&b));
    }
}
