//! Dense CPU kernels behind the graph operators.
//!
//! Every kernel computes each output element with a fixed reduction order,
//! so splitting work across rayon threads never changes the result.

use rayon::prelude::*;

/// Work (multiply-adds) below which kernels stay on the calling thread.
const PAR_THRESHOLD: usize = 1 << 16;

/// Transposes a row-major `[rows, cols]` matrix.
pub fn transpose(src: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut out = vec![0.0; src.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

#[inline]
fn axpy(alpha: f32, x: &[f32], y: &mut [f32]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Rows per independent block of [`gemm`]. Blocks are fixed, not derived
/// from the thread count, so the result is the same however they are
/// scheduled.
const ROW_BLOCK: usize = 64;

/// `out[m,n] = op(x) · op(y)` for a single matrix pair, where `op` is an
/// optional transpose. Stored shapes: `x` is `[m,k]` (or `[k,m]` when
/// `tx`), `y` is `[k,n]` (or `[n,k]` when `ty`).
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    x: &[f32],
    tx: bool,
    y: &[f32],
    ty: bool,
    m: usize,
    k: usize,
    n: usize,
    out: &mut [f32],
) {
    assert_eq!(out.len(), m * n);
    assert_eq!(x.len(), m * k);
    assert_eq!(y.len(), k * n);
    if m * n == 0 {
        return;
    }
    let (rsx, csx) = if tx { (1, m as isize) } else { (k as isize, 1) };
    let (rsy, csy) = if ty { (1, k as isize) } else { (n as isize, 1) };
    let block = |(b, chunk): (usize, &mut [f32])| {
        let r0 = b * ROW_BLOCK;
        let rows = chunk.len() / n;
        // SAFETY: rows r0..r0+rows of op(x) and all of op(y) lie inside the
        // asserted slice lengths, and `chunk` is exactly rows × n.
        unsafe {
            matrixmultiply::sgemm(
                rows,
                k,
                n,
                1.0,
                x.as_ptr().offset(r0 as isize * rsx),
                rsx,
                csx,
                y.as_ptr(),
                rsy,
                csy,
                0.0,
                chunk.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    };
    if m > ROW_BLOCK && m * n * k >= PAR_THRESHOLD {
        out.par_chunks_mut(ROW_BLOCK * n).enumerate().for_each(block);
    } else {
        out.chunks_mut(ROW_BLOCK * n).enumerate().for_each(block);
    }
}

/// Batched [`gemm`]. `x` holds `batches` matrices; `y` holds `y_batches`
/// matrices with `batches % y_batches == 0`, and batch `t` of `x` pairs with
/// batch `t % y_batches` of `y`.
#[allow(clippy::too_many_arguments)]
pub fn batched_gemm(
    x: &[f32],
    tx: bool,
    y: &[f32],
    ty: bool,
    batches: usize,
    y_batches: usize,
    m: usize,
    k: usize,
    n: usize,
) -> Vec<f32> {
    let mut out = vec![0.0; batches * m * n];
    if m * n == 0 {
        return out;
    }
    let (xs, ys) = (m * k, k * n);
    let one = |(t, chunk): (usize, &mut [f32])| {
        let yb = t % y_batches;
        gemm(
            &x[t * xs..(t + 1) * xs],
            tx,
            &y[yb * ys..(yb + 1) * ys],
            ty,
            m,
            k,
            n,
            chunk,
        );
    };
    if batches > 1 && batches * m * n * k >= PAR_THRESHOLD {
        out.par_chunks_mut(m * n).enumerate().for_each(one);
    } else {
        out.chunks_mut(m * n).enumerate().for_each(one);
    }
    out
}

/// Reduces a `[batches, len]` buffer to `[y_batches, len]` by summing the
/// batches that share `t % y_batches`, in increasing `t`.
pub fn fold_batches(src: &[f32], batches: usize, y_batches: usize, len: usize) -> Vec<f32> {
    if batches == y_batches {
        return src.to_vec();
    }
    let mut out = vec![0.0; y_batches * len];
    for t in 0..batches {
        let yb = t % y_batches;
        axpy(1.0, &src[t * len..(t + 1) * len], &mut out[yb * len..(yb + 1) * len]);
    }
    out
}

/// Exact GELU, `x·Φ(x)`, evaluated in double precision.
#[inline]
pub fn gelu(x: f32) -> f32 {
    let x = x as f64;
    (0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))) as f32
}

/// Derivative of exact GELU: `Φ(x) + x·φ(x)`.
#[inline]
pub fn gelu_grad(x: f32) -> f32 {
    let x = x as f64;
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    (cdf + x * pdf) as f32
}
