//! Batched forward/backward kernels. All image buffers are laid out
//! `[batch, channels, height, width]` row-major; fully connected buffers
//! are `[batch, features]`.

use super::tensor::{gemm, Element};

/// Geometry of a stride-1, size-preserving convolution.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
}

impl ConvGeom {
    fn plane(&self) -> usize {
        self.height * self.width
    }

    fn col_rows(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }
}

/// Unfolds one sample `[C, H, W]` into `[C·k·k, H·W]` with zero padding.
fn im2col<T: Element>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let (h, w, k) = (g.height, g.width, g.kernel);
    let pad = (k / 2) as isize;
    let plane = h * w;
    let mut row = 0;
    for c in 0..g.in_channels {
        let src = &x[c * plane..(c + 1) * plane];
        for ky in 0..k {
            for kx in 0..k {
                let dst = &mut cols[row * plane..(row + 1) * plane];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    let out_row = &mut dst[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src_row = &src[sy as usize * w..(sy as usize + 1) * w];
                    // valid x range: 0 <= x + dx < w
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize) as usize;
                    out_row[..x0].fill(T::zero());
                    out_row[x1..].fill(T::zero());
                    let s0 = (x0 as isize + dx) as usize;
                    out_row[x0..x1].copy_from_slice(&src_row[s0..s0 + (x1 - x0)]);
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `dx`.
fn col2im_add<T: Element>(g: &ConvGeom, cols: &[T], dx: &mut [T]) {
    let (h, w, k) = (g.height, g.width, g.kernel);
    let pad = (k / 2) as isize;
    let plane = h * w;
    let mut row = 0;
    for c in 0..g.in_channels {
        let dst = &mut dx[c * plane..(c + 1) * plane];
        for ky in 0..k {
            for kx in 0..k {
                let src = &cols[row * plane..(row + 1) * plane];
                let dy = ky as isize - pad;
                let dxo = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let x0 = (-dxo).max(0) as usize;
                    let x1 = (w as isize - dxo).min(w as isize) as usize;
                    let s0 = (x0 as isize + dxo) as usize;
                    let col_row = &src[y * w + x0..y * w + x1];
                    let img_row = &mut dst[sy as usize * w + s0..sy as usize * w + s0 + (x1 - x0)];
                    for (d, s) in img_row.iter_mut().zip(col_row) {
                        *d += *s;
                    }
                }
                row += 1;
            }
        }
    }
}

pub(crate) fn conv_forward<T: Element>(
    g: &ConvGeom,
    batch: usize,
    x: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    out: &mut [T],
) {
    let plane = g.plane();
    let in_len = g.in_channels * plane;
    let out_len = g.out_channels * plane;
    let rows = g.col_rows();
    let mut cols = if g.kernel == 1 {
        Vec::new()
    } else {
        vec![T::zero(); rows * plane]
    };
    for b in 0..batch {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let yb = &mut out[b * out_len..(b + 1) * out_len];
        match bias {
            Some(bias) => {
                for (co, chunk) in yb.chunks_mut(plane).enumerate() {
                    chunk.fill(bias[co]);
                }
            }
            None => yb.fill(T::zero()),
        }
        let src: &[T] = if g.kernel == 1 {
            xb
        } else {
            im2col(g, xb, &mut cols);
            &cols
        };
        gemm(
            false,
            false,
            g.out_channels,
            rows,
            plane,
            weight,
            src,
            T::one(),
            yb,
        );
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward<T: Element>(
    g: &ConvGeom,
    batch: usize,
    x: &[T],
    weight: &[T],
    dy: &[T],
    mut dweight: Option<&mut [T]>,
    mut dbias: Option<&mut [T]>,
    mut dx: Option<&mut [T]>,
) {
    let plane = g.plane();
    let in_len = g.in_channels * plane;
    let out_len = g.out_channels * plane;
    let rows = g.col_rows();
    let need_cols = g.kernel != 1 && dweight.is_some();
    let mut cols = if need_cols {
        vec![T::zero(); rows * plane]
    } else {
        Vec::new()
    };
    let mut dcols = if g.kernel != 1 && dx.is_some() {
        vec![T::zero(); rows * plane]
    } else {
        Vec::new()
    };
    for b in 0..batch {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let dyb = &dy[b * out_len..(b + 1) * out_len];
        if let Some(db) = dbias.as_deref_mut() {
            for (co, chunk) in dyb.chunks(plane).enumerate() {
                db[co] += chunk.iter().copied().sum::<T>();
            }
        }
        if let Some(dw) = dweight.as_deref_mut() {
            let src: &[T] = if g.kernel == 1 {
                xb
            } else {
                im2col(g, xb, &mut cols);
                &cols
            };
            // dW[co, r] += Σ_p dy[co, p] · cols[r, p]
            gemm(
                false,
                true,
                g.out_channels,
                plane,
                rows,
                dyb,
                src,
                T::one(),
                dw,
            );
        }
        if let Some(dxall) = dx.as_deref_mut() {
            let dxb = &mut dxall[b * in_len..(b + 1) * in_len];
            if g.kernel == 1 {
                gemm(
                    true,
                    false,
                    rows,
                    g.out_channels,
                    plane,
                    weight,
                    dyb,
                    T::one(),
                    dxb,
                );
            } else {
                gemm(
                    true,
                    false,
                    rows,
                    g.out_channels,
                    plane,
                    weight,
                    dyb,
                    T::zero(),
                    &mut dcols,
                );
                col2im_add(g, &dcols, dxb);
            }
        }
    }
}

pub(crate) fn fc_forward<T: Element>(
    batch: usize,
    in_dim: usize,
    out_dim: usize,
    x: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    out: &mut [T],
) {
    match bias {
        Some(bias) => {
            for row in out.chunks_mut(out_dim) {
                row.copy_from_slice(bias);
            }
        }
        None => out.fill(T::zero()),
    }
    // y[b, o] = Σ_i x[b, i] · W[o, i]
    gemm(
        false,
        true,
        batch,
        in_dim,
        out_dim,
        x,
        weight,
        T::one(),
        out,
    );
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn fc_backward<T: Element>(
    batch: usize,
    in_dim: usize,
    out_dim: usize,
    x: &[T],
    weight: &[T],
    dy: &[T],
    dweight: Option<&mut [T]>,
    dbias: Option<&mut [T]>,
    dx: Option<&mut [T]>,
) {
    if let Some(db) = dbias {
        for row in dy.chunks(out_dim) {
            for (d, g) in db.iter_mut().zip(row) {
                *d += *g;
            }
        }
    }
    if let Some(dw) = dweight {
        gemm(true, false, out_dim, batch, in_dim, dy, x, T::one(), dw);
    }
    if let Some(dx) = dx {
        gemm(
            false,
            false,
            batch,
            out_dim,
            in_dim,
            dy,
            weight,
            T::one(),
            dx,
        );
    }
}

/// 2×2 block mean over `planes` planes of `h×w`.
pub(crate) fn avg_pool_forward<T: Element>(
    planes: usize,
    h: usize,
    w: usize,
    x: &[T],
    out: &mut [T],
) {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::from_f64_lossy(0.25);
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for oy in 0..oh {
            let r0 = &src[2 * oy * w..(2 * oy + 1) * w];
            let r1 = &src[(2 * oy + 1) * w..(2 * oy + 2) * w];
            for ox in 0..ow {
                let s = r0[2 * ox] + r0[2 * ox + 1] + r1[2 * ox] + r1[2 * ox + 1];
                dst[oy * ow + ox] = s * quarter;
            }
        }
    }
}

pub(crate) fn avg_pool_backward<T: Element>(
    planes: usize,
    h: usize,
    w: usize,
    dy: &[T],
    dx: &mut [T],
) {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::from_f64_lossy(0.25);
    for p in 0..planes {
        let src = &dy[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] += src[(y / 2) * ow + x / 2] * quarter;
            }
        }
    }
}

/// Nearest-neighbour 2× replication; input planes are `h×w`.
pub(crate) fn upsample_forward<T: Element>(
    planes: usize,
    h: usize,
    w: usize,
    x: &[T],
    out: &mut [T],
) {
    let (oh, ow) = (2 * h, 2 * w);
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for y in 0..oh {
            for x in 0..ow {
                dst[y * ow + x] = src[(y / 2) * w + x / 2];
            }
        }
    }
}

pub(crate) fn upsample_backward<T: Element>(
    planes: usize,
    h: usize,
    w: usize,
    dy: &[T],
    dx: &mut [T],
) {
    let (oh, ow) = (2 * h, 2 * w);
    for p in 0..planes {
        let src = &dy[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            let r0 = &src[2 * y * ow..(2 * y + 1) * ow];
            let r1 = &src[(2 * y + 1) * ow..(2 * y + 2) * ow];
            for x in 0..w {
                dst[y * w + x] += r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(g: &ConvGeom, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
        let (h, wd, k) = (g.height as isize, g.width as isize, g.kernel as isize);
        let pad = k / 2;
        let mut out = vec![0.0; g.out_channels * g.plane()];
        for co in 0..g.out_channels {
            for y in 0..h {
                for xx in 0..wd {
                    let mut s = b[co];
                    for ci in 0..g.in_channels {
                        for ky in 0..k {
                            for kx in 0..k {
                                let sy = y + ky - pad;
                                let sx = xx + kx - pad;
                                if sy < 0 || sx < 0 || sy >= h || sx >= wd {
                                    continue;
                                }
                                let wi = ((co * g.in_channels + ci) as isize * k + ky) * k + kx;
                                s += w[wi as usize] * x[ci * g.plane() + (sy * wd + sx) as usize];
                            }
                        }
                    }
                    out[co * g.plane() + (y * wd + xx) as usize] = s;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_loops() {
        for &k in &[1usize, 3] {
            let g = ConvGeom {
                in_channels: 2,
                out_channels: 3,
                height: 5,
                width: 4,
                kernel: k,
            };
            let x: Vec<f64> = (0..2 * 20).map(|i| ((i * 7 % 11) as f64) - 5.0).collect();
            let w: Vec<f64> = (0..3 * 2 * k * k)
                .map(|i| ((i * 5 % 7) as f64) * 0.1 - 0.3)
                .collect();
            let b = vec![0.5, -1.0, 0.25];
            let mut out = vec![0.0; 3 * 20];
            conv_forward(&g, 1, &x, &w, Some(&b), &mut out);
            let want = naive_conv(&g, &x, &w, &b);
            for (a, e) in out.iter().zip(&want) {
                assert!((a - e).abs() < 1e-12, "{a} vs {e}");
            }
        }
    }

    #[test]
    fn im2col_adjoint() {
        // <im2col(x), c> == <x, col2im(c)>
        let g = ConvGeom {
            in_channels: 2,
            out_channels: 1,
            height: 3,
            width: 4,
            kernel: 3,
        };
        let x: Vec<f64> = (0..24).map(|i| (i as f64).sin()).collect();
        let c: Vec<f64> = (0..18 * 12).map(|i| (i as f64 * 0.37).cos()).collect();
        let mut cols = vec![0.0; 18 * 12];
        im2col(&g, &x, &mut cols);
        let lhs: f64 = cols.iter().zip(&c).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; 24];
        col2im_add(&g, &c, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
