//! Raw forward/backward kernels over `(C, H, W)` buffers.

/// Unfolds a zero-padded `(c, h, w)` image into a `(c*k*k, h*w)` column matrix.
pub(crate) fn im2col(x: &[f32], c: usize, h: usize, w: usize, k: usize) -> Vec<f32> {
    let pad = (k - 1) / 2;
    let hw = h * w;
    let mut cols = vec![0.0f32; c * k * k * hw];
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let dx = kx as isize - pad as isize;
                let dy = ky as isize - pad as isize;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let iy = y as isize + dy;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = iy as usize * w;
                    let sx_lo = (x_lo as isize + dx) as usize;
                    let n = x_hi - x_lo;
                    dst[y * w + x_lo..y * w + x_hi]
                        .copy_from_slice(&plane[src_row + sx_lo..src_row + sx_lo + n]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the image.
pub(crate) fn col2im(cols: &[f32], c: usize, h: usize, w: usize, k: usize, out: &mut [f32]) {
    let pad = (k - 1) / 2;
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut out[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let dx = kx as isize - pad as isize;
                let dy = ky as isize - pad as isize;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let iy = y as isize + dy;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = iy as usize * w;
                    let sx_lo = (x_lo as isize + dx) as usize;
                    for (d, s) in plane[dst_row + sx_lo..dst_row + sx_lo + (x_hi - x_lo)]
                        .iter_mut()
                        .zip(&src[y * w + x_lo..y * w + x_hi])
                    {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// Row-major `c = a(m×k) · b(k×n) + beta·c` with explicit strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    rsa: usize,
    csa: usize,
    b: &[f32],
    rsb: usize,
    csb: usize,
    beta: f32,
    c: &mut [f32],
) {
    assert!(c.len() >= m * n);
    assert!(m == 0 || k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(k == 0 || n == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn maxpool2(x: &[f32], c: usize, h: usize, w: usize) -> (Vec<f32>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        let base = ci * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let candidates = [
                    base + 2 * oy * w + 2 * ox,
                    base + 2 * oy * w + 2 * ox + 1,
                    base + (2 * oy + 1) * w + 2 * ox,
                    base + (2 * oy + 1) * w + 2 * ox + 1,
                ];
                let mut best = candidates[0];
                for &i in &candidates[1..] {
                    // strict comparison keeps the first occurrence on ties
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                out.push(x[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

pub(crate) fn upsample_nearest2(x: &[f32], c: usize, h: usize, w: usize) -> Vec<f32> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; c * oh * ow];
    for ci in 0..c {
        for y in 0..oh {
            let src = &x[ci * h * w + (y / 2) * w..ci * h * w + (y / 2) * w + w];
            let dst = &mut out[ci * oh * ow + y * ow..ci * oh * ow + (y + 1) * ow];
            for (xo, d) in dst.iter_mut().enumerate() {
                *d = src[xo / 2];
            }
        }
    }
    out
}

/// Gradient of [`upsample_nearest2`]: each source pixel receives the sum of its 2×2 block.
pub(crate) fn upsample_nearest2_backward(g: &[f32], c: usize, h: usize, w: usize) -> Vec<f32> {
    let ow = 2 * w;
    let mut out = vec![0.0; c * h * w];
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                let base = ci * 4 * h * w;
                let r0 = base + 2 * y * ow + 2 * x;
                let r1 = r0 + ow;
                out[ci * h * w + y * w + x] = g[r0] + g[r0 + 1] + g[r1] + g[r1 + 1];
            }
        }
    }
    out
}

/// Space-to-depth: `(c, h, w)` to `(c*r*r, h/r, w/r)`; sub-pixel `(dy, dx)` goes to
/// channel `c*r*r + dy*r + dx`.
pub fn pixel_unshuffle_raw(x: &[f32], c: usize, h: usize, w: usize, r: usize) -> Vec<f32> {
    let (oh, ow) = (h / r, w / r);
    let mut out = vec![0.0; x.len()];
    for ci in 0..c {
        for dy in 0..r {
            for dx in 0..r {
                let oc = ci * r * r + dy * r + dx;
                for oy in 0..oh {
                    for ox in 0..ow {
                        out[(oc * oh + oy) * ow + ox] = x[(ci * h + oy * r + dy) * w + ox * r + dx];
                    }
                }
            }
        }
    }
    out
}

/// Depth-to-space, the exact inverse of [`pixel_unshuffle_raw`]. `c` is the
/// output channel count; the input has `c*r*r` channels of `(h, w)`.
pub fn pixel_shuffle_raw(x: &[f32], c: usize, h: usize, w: usize, r: usize) -> Vec<f32> {
    let (oh, ow) = (h * r, w * r);
    let mut out = vec![0.0; x.len()];
    for ci in 0..c {
        for dy in 0..r {
            for dx in 0..r {
                let ic = ci * r * r + dy * r + dx;
                for y in 0..h {
                    for xx in 0..w {
                        out[(ci * oh + y * r + dy) * ow + xx * r + dx] = x[(ic * h + y) * w + xx];
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f32], c: usize, h: usize, w: usize, wt: &[f32], o: usize, k: usize) -> Vec<f32> {
        let pad = (k - 1) as isize / 2;
        let mut out = vec![0.0; o * h * w];
        for oc in 0..o {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = y as isize + ky as isize - pad;
                                let ix = xx as isize + kx as isize - pad;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += x[(ci * h + iy as usize) * w + ix as usize]
                                    * wt[((oc * c + ci) * k + ky) * k + kx];
                            }
                        }
                    }
                    out[(oc * h + y) * w + xx] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn im2col_gemm_matches_naive_convolution() {
        let (c, h, w, o, k) = (2, 5, 4, 3, 3);
        let x: Vec<f32> = (0..c * h * w).map(|i| ((i * 7) % 11) as f32 - 5.0).collect();
        let wt: Vec<f32> = (0..o * c * k * k).map(|i| ((i * 5) % 7) as f32 * 0.1 - 0.3).collect();
        let cols = im2col(&x, c, h, w, k);
        let mut out = vec![0.0; o * h * w];
        gemm(o, c * k * k, h * w, &wt, c * k * k, 1, &cols, h * w, 1, 0.0, &mut out);
        let expect = naive_conv(&x, c, h, w, &wt, o, k);
        for (a, b) in out.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let (c, h, w, k) = (2, 4, 3, 3);
        let x: Vec<f32> = (0..c * h * w).map(|i| (i as f32 * 0.37).sin()).collect();
        let g: Vec<f32> = (0..c * k * k * h * w).map(|i| (i as f32 * 0.11).cos()).collect();
        let cols = im2col(&x, c, h, w, k);
        let lhs: f32 = cols.iter().zip(&g).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; c * h * w];
        col2im(&g, c, h, w, k, &mut back);
        let rhs: f32 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-4);
    }

    #[test]
    fn maxpool_first_occurrence_on_ties() {
        let x = [1.0, 1.0, 1.0, 1.0];
        let (out, arg) = maxpool2(&x, 1, 2, 2);
        assert_eq!(out, vec![1.0]);
        assert_eq!(arg, vec![0]);
    }
}
