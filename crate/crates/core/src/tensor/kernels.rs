//! Raw numeric kernels behind the tape ops.
//!
//! Plain loops ordered so the innermost dimension is contiguous in memory and
//! auto-vectorizes. Convolutions use NHWC layout with NHWC-friendly weight
//! layout `[kh, kw, cin, cout]` so the channel-out loop is the hot one.

use super::Real;

/// C[m,n] += A[m,k] * B[k,n]
pub fn matmul_nn<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow.iter()) {
                *cv += av * bv;
            }
        }
    }
}

/// Dot product with 32 accumulator lanes so the FMA chain is not
/// latency-bound.
#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    if a.len() < 64 {
        let mut acc = [T::ZERO; 8];
        let mut ca = a.chunks_exact(8);
        let mut cb = b.chunks_exact(8);
        for (x, y) in (&mut ca).zip(&mut cb) {
            for i in 0..8 {
                acc[i] += x[i] * y[i];
            }
        }
        let mut s = ca
            .remainder()
            .iter()
            .zip(cb.remainder())
            .map(|(&x, &y)| x * y)
            .sum::<T>();
        for v in acc {
            s += v;
        }
        return s;
    }
    let mut acc = [T::ZERO; 32];
    let mut ca = a.chunks_exact(32);
    let mut cb = b.chunks_exact(32);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for i in 0..32 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut s = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(&x, &y)| x * y)
        .sum::<T>();
    for v in acc {
        s += v;
    }
    s
}

/// C[m,n] += A[m,k] * B[n,k]^T  (rows of both operands are contiguous dots)
pub fn matmul_nt<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (cj, brow) in crow.iter_mut().zip(b.chunks_exact(k)) {
            *cj += dot(arow, brow);
        }
    }
}

/// C[k,n] += A[m,k]^T * B[m,n], via an explicit transpose of A so the hot
/// loop matches [`matmul_nn`]'s access pattern instead of sweeping all of C
/// for every row of A.
pub fn matmul_tn<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    let mut at = vec![T::ZERO; k * m];
    for i in 0..m {
        for p in 0..k {
            at[p * m + i] = a[i * k + p];
        }
    }
    matmul_nn(&at, b, c, k, m, n);
}

/// Geometry of a 2D convolution over NHWC input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dGeom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2dGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        let oh = (self.h + 2 * self.pad - self.kh) / self.stride + 1;
        let ow = (self.w + 2 * self.pad - self.kw) / self.stride + 1;
        (oh, ow)
    }

    /// Output spatial size for the transposed (fractionally-strided) variant.
    pub fn tconv_out_hw(&self) -> (usize, usize) {
        let oh = (self.h - 1) * self.stride + self.kh - 2 * self.pad;
        let ow = (self.w - 1) * self.stride + self.kw - 2 * self.pad;
        (oh, ow)
    }
}

/// Gathers kh*kw*c patches around each of the n*rh*rw row positions into a
/// `[n*rh*rw, kh*kw*c]` matrix; out-of-frame taps read zero. `th x tw` is the
/// geometry of the tensor being gathered from (`c` channels).
fn gather_patches<T: Real>(
    src: &[T],
    n: usize,
    rh: usize,
    rw: usize,
    th: usize,
    tw: usize,
    c: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Vec<T> {
    let patch = kh * kw * c;
    let mut cols = vec![T::ZERO; n * rh * rw * patch];
    for ni in 0..n {
        let img = &src[ni * th * tw * c..(ni + 1) * th * tw * c];
        for ry in 0..rh {
            for rx in 0..rw {
                let row = &mut cols[((ni * rh + ry) * rw + rx) * patch..][..patch];
                for ky in 0..kh {
                    let ty = (ry * stride + ky) as isize - pad as isize;
                    if ty < 0 || ty >= th as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let tx = (rx * stride + kx) as isize - pad as isize;
                        if tx < 0 || tx >= tw as isize {
                            continue;
                        }
                        let dst = &mut row[(ky * kw + kx) * c..][..c];
                        dst.copy_from_slice(&img[((ty as usize) * tw + tx as usize) * c..][..c]);
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`gather_patches`]: scatter-adds patch rows back into a
/// `[n, th, tw, c]` tensor.
fn scatter_patches_add<T: Real>(
    cols: &[T],
    dst: &mut [T],
    n: usize,
    rh: usize,
    rw: usize,
    th: usize,
    tw: usize,
    c: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) {
    let patch = kh * kw * c;
    for ni in 0..n {
        let img = &mut dst[ni * th * tw * c..(ni + 1) * th * tw * c];
        for ry in 0..rh {
            for rx in 0..rw {
                let row = &cols[((ni * rh + ry) * rw + rx) * patch..][..patch];
                for ky in 0..kh {
                    let ty = (ry * stride + ky) as isize - pad as isize;
                    if ty < 0 || ty >= th as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let tx = (rx * stride + kx) as isize - pad as isize;
                        if tx < 0 || tx >= tw as isize {
                            continue;
                        }
                        let s = &row[(ky * kw + kx) * c..][..c];
                        let d = &mut img[((ty as usize) * tw + tx as usize) * c..][..c];
                        for (dv, &sv) in d.iter_mut().zip(s) {
                            *dv += sv;
                        }
                    }
                }
            }
        }
    }
}

/// Reorders `[kh, kw, cin, cout]` weights to `[cin, kh*kw*cout]`, the layout
/// the transposed-conv matmul needs.
fn weight_cin_major<T: Real>(w: &[T], kh: usize, kw: usize, cin: usize, cout: usize) -> Vec<T> {
    let mut out = vec![T::ZERO; w.len()];
    for kk in 0..kh * kw {
        for ci in 0..cin {
            for co in 0..cout {
                out[ci * kh * kw * cout + kk * cout + co] = w[(kk * cin + ci) * cout + co];
            }
        }
    }
    out
}

/// out[n,oh,ow,co] = sum_{kh,kw,ci} in[n, oh*s-p+kh, ow*s-p+kw, ci] * w[kh,kw,ci,co] (+ bias[co])
///
/// Computed as im2col followed by one big matmul; the `[kh,kw,cin,cout]`
/// weight layout flattens to the matmul operand directly.
pub fn conv2d_forward<T: Real>(
    input: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    g: &Conv2dGeom,
) -> Vec<T> {
    let (oh, ow) = g.out_hw();
    let rows = g.n * oh * ow;
    let patch = g.kh * g.kw * g.cin;
    let cols = gather_patches(input, g.n, oh, ow, g.h, g.w, g.cin, g.kh, g.kw, g.stride, g.pad);
    let mut out = vec![T::ZERO; rows * g.cout];
    if let Some(b) = bias {
        for chunk in out.chunks_exact_mut(g.cout) {
            chunk.copy_from_slice(b);
        }
    }
    matmul_nn(&cols, weight, &mut out, rows, patch, g.cout);
    out
}

/// Accumulates conv2d input/weight/bias gradients from the output gradient.
pub fn conv2d_backward<T: Real>(
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    g: &Conv2dGeom,
    grad_in: &mut [T],
    grad_w: &mut [T],
    grad_b: Option<&mut [T]>,
) {
    let (oh, ow) = g.out_hw();
    let rows = g.n * oh * ow;
    let patch = g.kh * g.kw * g.cin;
    if let Some(gb) = grad_b {
        for chunk in grad_out.chunks_exact(g.cout) {
            for (b, &gv) in gb.iter_mut().zip(chunk.iter()) {
                *b += gv;
            }
        }
    }
    // dW = cols^T . dOut
    let cols = gather_patches(input, g.n, oh, ow, g.h, g.w, g.cin, g.kh, g.kw, g.stride, g.pad);
    matmul_tn(&cols, grad_out, grad_w, rows, patch, g.cout);
    // dIn = col2im(dOut . W^T)
    let mut dcols = vec![T::ZERO; rows * patch];
    matmul_nt(grad_out, weight, &mut dcols, rows, g.cout, patch);
    scatter_patches_add(&dcols, grad_in, g.n, oh, ow, g.h, g.w, g.cin, g.kh, g.kw, g.stride, g.pad);
}

/// Transposed conv: out[n, iy*s-p+ky, ix*s-p+kx, co] += in[n,iy,ix,ci] * w[ky,kx,ci,co]
pub fn tconv2d_forward<T: Real>(
    input: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    g: &Conv2dGeom,
) -> Vec<T> {
    let (oh, ow) = g.tconv_out_hw();
    let rows = g.n * g.h * g.w;
    let patch = g.kh * g.kw * g.cout;
    let w2 = weight_cin_major(weight, g.kh, g.kw, g.cin, g.cout);
    let mut cols = vec![T::ZERO; rows * patch];
    matmul_nn(input, &w2, &mut cols, rows, g.cin, patch);
    let mut out = vec![T::ZERO; g.n * oh * ow * g.cout];
    if let Some(b) = bias {
        for chunk in out.chunks_exact_mut(g.cout) {
            chunk.copy_from_slice(b);
        }
    }
    scatter_patches_add(&cols, &mut out, g.n, g.h, g.w, oh, ow, g.cout, g.kh, g.kw, g.stride, g.pad);
    out
}

/// Accumulates transposed-conv input/weight/bias gradients.
pub fn tconv2d_backward<T: Real>(
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    g: &Conv2dGeom,
    grad_in: &mut [T],
    grad_w: &mut [T],
    grad_b: Option<&mut [T]>,
) {
    let (oh, ow) = g.tconv_out_hw();
    let rows = g.n * g.h * g.w;
    let patch = g.kh * g.kw * g.cout;
    if let Some(gb) = grad_b {
        for chunk in grad_out.chunks_exact(g.cout) {
            for (b, &gv) in gb.iter_mut().zip(chunk.iter()) {
                *b += gv;
            }
        }
    }
    let dcols = gather_patches(grad_out, g.n, g.h, g.w, oh, ow, g.cout, g.kh, g.kw, g.stride, g.pad);
    // dIn = dcols . w2^T
    matmul_nt(&dcols, &weight_cin_major(weight, g.kh, g.kw, g.cin, g.cout), grad_in, rows, patch, g.cin);
    // dw2 = in^T . dcols, then back to [kh,kw,cin,cout]
    let mut dw2 = vec![T::ZERO; g.cin * patch];
    matmul_tn(input, &dcols, &mut dw2, rows, g.cin, patch);
    for kk in 0..g.kh * g.kw {
        for ci in 0..g.cin {
            for co in 0..g.cout {
                grad_w[(kk * g.cin + ci) * g.cout + co] +=
                    dw2[ci * g.kh * g.kw * g.cout + kk * g.cout + co];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree() {
        // A: 2x3, B: 3x2. Check nn against hand result, nt/tn against nn on
        // pre-transposed operands.
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0f64, 8.0, 9.0, 10.0, 11.0, 12.0];
        let mut c = [0.0f64; 4];
        matmul_nn(&a, &b, &mut c, 2, 3, 2);
        assert_eq!(c, [58.0, 64.0, 139.0, 154.0]);

        let bt = [7.0f64, 9.0, 11.0, 8.0, 10.0, 12.0]; // B^T: 2x3
        let mut c2 = [0.0f64; 4];
        matmul_nt(&a, &bt, &mut c2, 2, 3, 2);
        assert_eq!(c, c2);

        let at = [1.0f64, 4.0, 2.0, 5.0, 3.0, 6.0]; // A^T: 3x2
        let mut c3 = [0.0f64; 4];
        matmul_tn(&at, &b, &mut c3, 3, 2, 2);
        assert_eq!(c, c3);
    }

    #[test]
    fn conv_identity_kernel_passes_through() {
        // 1x1 kernel with identity channel map leaves the input unchanged.
        let g = Conv2dGeom {
            n: 1,
            h: 3,
            w: 3,
            cin: 2,
            cout: 2,
            kh: 1,
            kw: 1,
            stride: 1,
            pad: 0,
        };
        let input: Vec<f64> = (0..18).map(|i| i as f64).collect();
        let weight = [1.0, 0.0, 0.0, 1.0];
        let out = conv2d_forward(&input, &weight, None, &g);
        assert_eq!(out, input);
    }

    #[test]
    fn stride2_kernel4_pad1_halves_spatial() {
        let g = Conv2dGeom {
            n: 1,
            h: 8,
            w: 8,
            cin: 1,
            cout: 1,
            kh: 4,
            kw: 4,
            stride: 2,
            pad: 1,
        };
        assert_eq!(g.out_hw(), (4, 4));
        assert_eq!(g.tconv_out_hw(), (16, 16));
    }

    #[test]
    fn tconv_inverts_conv_shape() {
        // Transposed conv forward is the adjoint of conv forward: check
        // <conv(x), y> == <x, tconv(y)> with shared weights.
        let g = Conv2dGeom {
            n: 1,
            h: 6,
            w: 6,
            cin: 2,
            cout: 3,
            kh: 4,
            kw: 4,
            stride: 2,
            pad: 1,
        };
        let x: Vec<f64> = (0..g.n * g.h * g.w * g.cin).map(|i| (i as f64).sin()).collect();
        let w: Vec<f64> = (0..g.kh * g.kw * g.cin * g.cout)
            .map(|i| (i as f64 * 0.7).cos())
            .collect();
        let cx = conv2d_forward(&x, &w, None, &g);
        let (oh, ow) = g.out_hw();
        let y: Vec<f64> = (0..g.n * oh * ow * g.cout).map(|i| (i as f64 * 0.3).sin()).collect();
        // tconv with swapped channel roles maps y back to input space
        let gt = Conv2dGeom {
            n: 1,
            h: oh,
            w: ow,
            cin: g.cout,
            cout: g.cin,
            kh: 4,
            kw: 4,
            stride: 2,
            pad: 1,
        };
        // Re-layout weights [kh,kw,cin,cout] -> [kh,kw,cout,cin]
        let mut wt = vec![0.0f64; w.len()];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                for ci in 0..g.cin {
                    for co in 0..g.cout {
                        wt[((ky * g.kw + kx) * g.cout + co) * g.cin + ci] =
                            w[((ky * g.kw + kx) * g.cin + ci) * g.cout + co];
                    }
                }
            }
        }
        let ty = tconv2d_forward(&y, &wt, None, &gt);
        assert_eq!(ty.len(), x.len());
        let lhs: f64 = cx.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(ty.iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9, "adjoint mismatch {lhs} vs {rhs}");
    }
}
