//! Spatial operators: "same"-padded 2-D convolution, 2×2 max pooling and
//! 2× bilinear upsampling.

use super::{matmul_into, matmul_strided, Scalar, Tensor, Var};

/// Patch-matrix tiles are kept near this many elements so they stay in cache.
const TILE_ELEMS: usize = 1 << 16;

/// Unfolds output rows `y0..y1` of one `(C,H,W)` sample into a
/// `(C·k·k, (y1-y0)·W)` patch matrix with zero padding `k/2`.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, k: usize, y0: usize, y1: usize, col: &mut [T]) {
    let p = k / 2;
    let hw = h * w;
    let cols = (y1 - y0) * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((ci * k + ky) * k + kx) * cols..][..cols];
                // valid output x range where 0 <= x + kx - p < w
                let x_lo = p.saturating_sub(kx);
                let x_hi = (w + p).saturating_sub(kx).min(w);
                for y in y0..y1 {
                    let dst = &mut row[(y - y0) * w..(y - y0 + 1) * w];
                    let yy = y + ky;
                    if yy < p || yy - p >= h || x_lo >= x_hi {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[(yy - p) * w..(yy - p + 1) * w];
                    dst[..x_lo].fill(T::zero());
                    dst[x_hi..].fill(T::zero());
                    let s0 = x_lo + kx - p;
                    dst[x_lo..x_hi].copy_from_slice(&src[s0..s0 + (x_hi - x_lo)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates patch gradients back into the image.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(col: &[T], c: usize, h: usize, w: usize, k: usize, y0: usize, y1: usize, x: &mut [T]) {
    let p = k / 2;
    let hw = h * w;
    let cols = (y1 - y0) * w;
    for ci in 0..c {
        let plane = &mut x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((ci * k + ky) * k + kx) * cols..][..cols];
                let x_lo = p.saturating_sub(kx);
                let x_hi = (w + p).saturating_sub(kx).min(w);
                if x_lo >= x_hi {
                    continue;
                }
                for y in y0..y1 {
                    let yy = y + ky;
                    if yy < p || yy - p >= h {
                        continue;
                    }
                    let src = &row[(y - y0) * w + x_lo..(y - y0) * w + x_hi];
                    let s0 = (yy - p) * w + x_lo + kx - p;
                    for (d, &s) in plane[s0..s0 + src.len()].iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// Output row ranges whose patch matrices fit in one tile.
fn row_tiles(h: usize, w: usize, kk: usize) -> impl Iterator<Item = (usize, usize)> {
    let step = (TILE_ELEMS / (kk * w).max(1)).clamp(1, h);
    (0..h).step_by(step).map(move |y0| (y0, (y0 + step).min(h)))
}

/// Output positions along one axis that read inside the input for kernel
/// tap `t` with padding `p`.
fn span(n: usize, p: usize, t: usize) -> (usize, usize) {
    (p.saturating_sub(t), (n + p).saturating_sub(t).min(n))
}

/// Loops over every kernel tap and valid output row of one `(ci, co)`
/// pair, passing `(tap, output row offset, input row offset, len)`.
fn for_each_row(h: usize, w: usize, k: usize, mut f: impl FnMut(usize, usize, usize, usize)) {
    let p = k / 2;
    for ky in 0..k {
        let (y_lo, y_hi) = span(h, p, ky);
        for kx in 0..k {
            let (x_lo, x_hi) = span(w, p, kx);
            if x_lo >= x_hi {
                continue;
            }
            for y in y_lo..y_hi {
                f(ky * k + kx, y * w + x_lo, (y + ky - p) * w + x_lo + kx - p, x_hi - x_lo);
            }
        }
    }
}

/// Dot product with eight independent partial sums so it vectorizes.
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: T = ca.remainder().iter().zip(cb.remainder()).map(|(&x, &y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    acc.iter().copied().sum::<T>() + tail
}

/// Weight gradient by one dot product per tap and row, accumulated into
/// `gw`. Used for large kernels with very few output channels.
#[allow(clippy::too_many_arguments)]
fn direct_weight_grad<T: Scalar>(g: &[T], x: &[T], cin: usize, h: usize, w: usize, cout: usize, k: usize, gw: &mut [T]) {
    let (hw, kk) = (h * w, k * k);
    for co in 0..cout {
        let gs = &g[co * hw..(co + 1) * hw];
        for ci in 0..cin {
            let xs = &x[ci * hw..(ci + 1) * hw];
            let taps = &mut gw[(co * cin + ci) * kk..][..kk];
            for_each_row(h, w, k, |t, o, i, len| taps[t] += dot(&gs[o..o + len], &xs[i..i + len]));
        }
    }
}

/// Output channels accumulated together by [`blocked_forward`].
const CO_BLOCK: usize = 4;

/// Zero-padded copy of `c` planes with `p` extra samples on every side.
fn pad_planes<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, p: usize) -> Vec<T> {
    let (ph, pw) = (h + 2 * p, w + 2 * p);
    let mut out = vec![T::zero(); c * ph * pw];
    for ci in 0..c {
        for y in 0..h {
            let src = &x[(ci * h + y) * w..][..w];
            out[(ci * ph + y + p) * pw + p..][..w].copy_from_slice(src);
        }
    }
    out
}

/// Weights `(cout, cin, k, k)` regrouped as `[block][ci][tap][j]`, zero
/// filled past `cout`. With `adjoint` the roles of cin and cout swap and
/// taps are mirrored, which turns the forward kernel into the input
/// gradient.
fn block_weights<T: Scalar>(wt: &[T], cout: usize, cin: usize, k: usize, adjoint: bool) -> Vec<T> {
    let kk = k * k;
    let (rows, inner) = if adjoint { (cin, cout) } else { (cout, cin) };
    let blocks = rows.div_ceil(CO_BLOCK);
    let mut out = vec![T::zero(); blocks * inner * kk * CO_BLOCK];
    for r in 0..rows {
        for i in 0..inner {
            for t in 0..kk {
                let v = if adjoint { wt[(i * cin + r) * kk + (kk - 1 - t)] } else { wt[(r * cin + i) * kk + t] };
                out[(((r / CO_BLOCK) * inner + i) * kk + t) * CO_BLOCK + r % CO_BLOCK] = v;
            }
        }
    }
    out
}

/// `out[co] += Σ_ci Σ_taps w · window` over a padded input, `L` output
/// pixels at a time with `CO_BLOCK` channels held in registers.
#[allow(clippy::too_many_arguments)]
fn blocked_forward<T: Scalar, const L: usize>(
    xp: &[T],
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    wb: &[T],
    cout: usize,
    out: &mut [T],
) {
    let (ph, pw, hw, kk) = (h + k - 1, w + k - 1, h * w, k * k);
    for blk in 0..cout.div_ceil(CO_BLOCK) {
        let wblk = &wb[blk * cin * kk * CO_BLOCK..][..cin * kk * CO_BLOCK];
        let nb = CO_BLOCK.min(cout - blk * CO_BLOCK);
        for y in 0..h {
            for x0 in (0..w).step_by(L) {
                let mut acc = [[T::zero(); L]; CO_BLOCK];
                for ci in 0..cin {
                    let plane = &xp[ci * ph * pw..][..ph * pw];
                    for ky in 0..k {
                        let row = &plane[(y + ky) * pw + x0..];
                        for kx in 0..k {
                            let src: &[T; L] = row[kx..kx + L].try_into().expect("window");
                            let taps = &wblk[((ci * kk) + ky * k + kx) * CO_BLOCK..][..CO_BLOCK];
                            for j in 0..CO_BLOCK {
                                let wv = taps[j];
                                for i in 0..L {
                                    acc[j][i] += wv * src[i];
                                }
                            }
                        }
                    }
                }
                for (j, a) in acc.iter().enumerate().take(nb) {
                    let dst = &mut out[(blk * CO_BLOCK + j) * hw + y * w + x0..][..L];
                    for i in 0..L {
                        dst[i] += a[i];
                    }
                }
            }
        }
    }
}

/// Weight gradient of a 3×3 convolution over a padded input, two output
/// channels and all nine taps accumulated in registers.
#[allow(clippy::too_many_arguments)]
fn blocked_weight_grad3<T: Scalar, const L: usize>(
    g: &[T],
    xp: &[T],
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    gw: &mut [T],
) {
    let (ph, pw, hw) = (h + 2, w + 2, h * w);
    for co0 in (0..cout).step_by(2) {
        let pair = 2.min(cout - co0);
        for ci in 0..cin {
            let plane = &xp[ci * ph * pw..][..ph * pw];
            let mut acc = [[[T::zero(); L]; 9]; 2];
            for y in 0..h {
                for x0 in (0..w).step_by(L) {
                    let mut gv = [[T::zero(); L]; 2];
                    for (j, v) in gv.iter_mut().enumerate().take(pair) {
                        v.copy_from_slice(&g[(co0 + j) * hw + y * w + x0..][..L]);
                    }
                    for ky in 0..3 {
                        let row = &plane[(y + ky) * pw + x0..];
                        for kx in 0..3 {
                            let src: &[T; L] = row[kx..kx + L].try_into().expect("window");
                            for j in 0..2 {
                                for i in 0..L {
                                    acc[j][ky * 3 + kx][i] += gv[j][i] * src[i];
                                }
                            }
                        }
                    }
                }
            }
            for (j, a) in acc.iter().enumerate().take(pair) {
                for (t, lanes) in a.iter().enumerate() {
                    gw[((co0 + j) * cin + ci) * 9 + t] += lanes.iter().copied().sum::<T>();
                }
            }
        }
    }
}

/// Dispatches [`blocked_forward`] on the row width (a multiple of 8).
#[allow(clippy::too_many_arguments)]
fn blocked<T: Scalar>(xp: &[T], cin: usize, h: usize, w: usize, k: usize, wb: &[T], cout: usize, out: &mut [T]) {
    if w % 16 == 0 {
        blocked_forward::<T, 16>(xp, cin, h, w, k, wb, cout, out);
    } else {
        blocked_forward::<T, 8>(xp, cin, h, w, k, wb, cout, out);
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum WeightGrad {
    Gemm,
    Blocked3,
    Dot,
}

/// Kernel choice per pass. Narrow layers skip the patch matrix, whose
/// packing costs more than the product when few output channels share it;
/// the thresholds come from timing the layer shapes the network uses.
#[derive(Clone, Copy)]
struct Plan {
    forward: bool,
    input_grad: bool,
    weight_grad: WeightGrad,
}

impl Plan {
    fn new(k: usize, w: usize, cout: usize) -> Self {
        let rows = k > 1 && w % 8 == 0;
        Plan {
            forward: rows && cout <= 16,
            input_grad: rows && cout <= 8,
            weight_grad: match k {
                3 if rows && cout <= 8 => WeightGrad::Blocked3,
                k if k > 3 && cout <= 2 => WeightGrad::Dot,
                _ => WeightGrad::Gemm,
            },
        }
    }
}

/// Stride-1 convolution with "same" zero padding and odd square kernels.
///
/// `x: (N,Cin,H,W)`, `weight: (Cout,Cin,k,k)`, optional `bias: (Cout)`.
pub fn conv2d<'t, T: Scalar>(
    x: Var<'t, T>,
    weight: Var<'t, T>,
    bias: Option<Var<'t, T>>,
) -> Var<'t, T> {
    let (xv, wv) = (x.value(), weight.value());
    let [n, cin, h, w] = xv.dims4();
    let ws = wv.shape().to_vec();
    assert_eq!(ws.len(), 4, "conv weight must be rank 4");
    let (cout, k) = (ws[0], ws[2]);
    assert_eq!(ws[1], cin, "conv input channels {cin} vs weight {ws:?}");
    assert_eq!(ws[3], k);
    assert_eq!(k % 2, 1, "even kernels unsupported");
    let hw = h * w;
    let kk = cin * k * k;
    let mut out = vec![T::zero(); n * cout * hw];
    let plan = Plan::new(k, w, cout);
    let wblk = plan.forward.then(|| block_weights(wv.data(), cout, cin, k, false));
    let mut col = vec![T::zero(); if k > 1 && !plan.forward { TILE_ELEMS.max(kk * w) } else { 0 }];
    for b in 0..n {
        let xs = &xv.data()[b * cin * hw..(b + 1) * cin * hw];
        let dst = &mut out[b * cout * hw..(b + 1) * cout * hw];
        if let Some(bias) = bias.as_ref() {
            let bv = bias.value();
            for (co, chunk) in dst.chunks_mut(hw).enumerate() {
                chunk.fill(bv.data()[co]);
            }
        }
        if k == 1 {
            matmul_into(cout, kk, hw, wv.data(), false, xs, false, T::one(), dst);
            continue;
        }
        if let Some(wb) = wblk.as_ref() {
            let xp = pad_planes(xs, cin, h, w, k / 2);
            blocked(&xp, cin, h, w, k, wb, cout, dst);
            continue;
        }
        for (y0, y1) in row_tiles(h, w, kk) {
            let cols = (y1 - y0) * w;
            let tile = &mut col[..kk * cols];
            im2col(xs, cin, h, w, k, y0, y1, tile);
            matmul_strided(cout, kk, cols, wv.data(), (kk, 1), tile, (cols, 1), T::one(), &mut dst[y0 * w..], hw);
        }
    }
    let out = Tensor::new(&[n, cout, h, w], out);
    let mut parents = vec![x, weight];
    parents.extend(bias);
    x.tape().record(out, &parents, move |args| {
        let (xv, wv) = (&args.inputs[0], &args.inputs[1]);
        let g = args.grad.data();
        let mut gx = args.needs[0].then(|| Tensor::zeros(xv.shape()));
        let mut gw = args.needs[1].then(|| Tensor::zeros(wv.shape()));
        let gb = (args.inputs.len() > 2 && args.needs[2]).then(|| {
            let mut gb = vec![T::zero(); cout];
            for b in 0..n {
                for (co, acc) in gb.iter_mut().enumerate() {
                    *acc += g[(b * cout + co) * hw..(b * cout + co + 1) * hw]
                        .iter()
                        .copied()
                        .sum::<T>();
                }
            }
            Tensor::new(&[cout], gb)
        });
        let wadj = (plan.input_grad && gx.is_some()).then(|| block_weights(wv.data(), cout, cin, k, true));
        let tile_len = if k > 1 { TILE_ELEMS.max(kk * w) } else { 0 };
        let mut col = vec![T::zero(); if gw.is_some() && plan.weight_grad == WeightGrad::Gemm { tile_len } else { 0 }];
        let mut dcol = vec![T::zero(); if gx.is_some() && !plan.input_grad { tile_len } else { 0 }];
        for b in 0..n {
            let gs = &g[b * cout * hw..(b + 1) * cout * hw];
            let xs = &xv.data()[b * cin * hw..(b + 1) * cin * hw];
            if k == 1 {
                if let Some(gw) = gw.as_mut() {
                    matmul_into(cout, hw, kk, gs, false, xs, true, T::one(), gw.data_mut());
                }
                if let Some(gx) = gx.as_mut() {
                    let gxs = &mut gx.data_mut()[b * cin * hw..(b + 1) * cin * hw];
                    matmul_into(kk, cout, hw, wv.data(), true, gs, false, T::zero(), gxs);
                }
                continue;
            }
            if plan.weight_grad == WeightGrad::Blocked3 {
                if let Some(gw) = gw.as_mut() {
                    let xp = pad_planes(xs, cin, h, w, 1);
                    if w % 16 == 0 {
                        blocked_weight_grad3::<T, 16>(gs, &xp, cin, h, w, cout, gw.data_mut());
                    } else {
                        blocked_weight_grad3::<T, 8>(gs, &xp, cin, h, w, cout, gw.data_mut());
                    }
                }
            }
            if plan.weight_grad == WeightGrad::Dot {
                if let Some(gw) = gw.as_mut() {
                    direct_weight_grad(gs, xs, cin, h, w, cout, k, gw.data_mut());
                }
            }
            if let (Some(gx), Some(wa)) = (gx.as_mut(), wadj.as_ref()) {
                let gp = pad_planes(gs, cout, h, w, k / 2);
                let gxs = &mut gx.data_mut()[b * cin * hw..(b + 1) * cin * hw];
                blocked(&gp, cout, h, w, k, wa, cin, gxs);
            }
            if plan.weight_grad != WeightGrad::Gemm && plan.input_grad {
                continue;
            }
            for (y0, y1) in row_tiles(h, w, kk) {
                let cols = (y1 - y0) * w;
                let gtile = &gs[y0 * w..];
                if let Some(gw) = gw.as_mut().filter(|_| plan.weight_grad == WeightGrad::Gemm) {
                    let tile = &mut col[..kk * cols];
                    im2col(xs, cin, h, w, k, y0, y1, tile);
                    // gw += g_tile (cout×cols) · tileᵀ (cols×kk)
                    matmul_strided(cout, cols, kk, gtile, (hw, 1), tile, (1, cols), T::one(), gw.data_mut(), kk);
                }
                if let Some(gx) = gx.as_mut().filter(|_| !plan.input_grad) {
                    let tile = &mut dcol[..kk * cols];
                    // tile = wᵀ (kk×cout) · g_tile (cout×cols)
                    matmul_strided(kk, cout, cols, wv.data(), (1, kk), gtile, (hw, 1), T::zero(), tile, cols);
                    let gxs = &mut gx.data_mut()[b * cin * hw..(b + 1) * cin * hw];
                    col2im(tile, cin, h, w, k, y0, y1, gxs);
                }
            }
        }
        let mut grads = vec![gx, gw];
        if args.inputs.len() > 2 {
            grads.push(gb);
        }
        grads
    })
}

/// 2×2 max pooling with stride 2; spatial dims must be even.
pub fn max_pool2x2<'t, T: Scalar>(x: Var<'t, T>) -> Var<'t, T> {
    let xv = x.value();
    let [n, c, h, w] = xv.dims4();
    assert!(h % 2 == 0 && w % 2 == 0, "max pool needs even dims, got {h}x{w}");
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    let d = xv.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let i0 = base + 2 * oy * w + 2 * ox;
                let mut best = i0;
                for cand in [i0 + 1, i0 + w, i0 + w + 1] {
                    if d[cand] > d[best] {
                        best = cand;
                    }
                }
                out.push(d[best]);
                arg.push(best as u32);
            }
        }
    }
    x.tape()
        .record(Tensor::new(&[n, c, oh, ow], out), &[x], move |args| {
            let mut g = Tensor::zeros(args.inputs[0].shape());
            for (&src, &gv) in arg.iter().zip(args.grad.data()) {
                g.data_mut()[src as usize] += gv;
            }
            vec![Some(g)]
        })
}

/// Interpolation taps for one axis of a 2× upsample (half-pixel centers).
fn taps(size: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * size)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(size - 1);
            let i1 = (i0 + 1).min(size - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear 2× upsampling with half-pixel alignment (`align_corners = false`).
pub fn upsample_bilinear2x<'t, T: Scalar>(x: Var<'t, T>) -> Var<'t, T> {
    let xv = x.value();
    let [n, c, h, w] = xv.dims4();
    let (ty, tx) = (taps(h), taps(w));
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); n * c * oh * ow];
    for plane in 0..n * c {
        let src = &xv.data()[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            let (ly1, ly0) = (T::lit(ly), T::lit(1.0 - ly));
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let (lx1, lx0) = (T::lit(lx), T::lit(1.0 - lx));
                dst[oy * ow + ox] = ly0 * (lx0 * src[y0 * w + x0] + lx1 * src[y0 * w + x1])
                    + ly1 * (lx0 * src[y1 * w + x0] + lx1 * src[y1 * w + x1]);
            }
        }
    }
    x.tape()
        .record(Tensor::new(&[n, c, oh, ow], out), &[x], move |args| {
            let mut g = Tensor::zeros(args.inputs[0].shape());
            for plane in 0..n * c {
                let gsrc = &args.grad.data()[plane * oh * ow..(plane + 1) * oh * ow];
                let dst = &mut g.data_mut()[plane * h * w..(plane + 1) * h * w];
                for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                    let (ly1, ly0) = (T::lit(ly), T::lit(1.0 - ly));
                    for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                        let (lx1, lx0) = (T::lit(lx), T::lit(1.0 - lx));
                        let gv = gsrc[oy * ow + ox];
                        dst[y0 * w + x0] += gv * ly0 * lx0;
                        dst[y0 * w + x1] += gv * ly0 * lx1;
                        dst[y1 * w + x0] += gv * ly1 * lx0;
                        dst[y1 * w + x1] += gv * ly1 * lx1;
                    }
                }
            }
            vec![Some(g)]
        })
}

#[cfg(test)]
mod tests {
    use super::super::gradcheck::{check, random};
    use super::super::Tape;
    use super::*;

    /// Direct nested-loop convolution used as an independent reference.
    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>) -> Vec<f64> {
        let [n, cin, h, wd] = x.dims4();
        let (cout, k) = (w.shape()[0], w.shape()[2]);
        let p = (k / 2) as isize;
        let mut out = vec![0.0; n * cout * h * wd];
        for bi in 0..n {
            for co in 0..cout {
                for y in 0..h {
                    for xx in 0..wd {
                        let mut acc = b.map_or(0.0, |b| b.data()[co]);
                        for ci in 0..cin {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let yy = y as isize + ky as isize - p;
                                    let xs = xx as isize + kx as isize - p;
                                    if yy < 0 || xs < 0 || yy >= h as isize || xs >= wd as isize {
                                        continue;
                                    }
                                    acc += w.data()[((co * cin + ci) * k + ky) * k + kx]
                                        * x.data()[((bi * cin + ci) * h + yy as usize) * wd + xs as usize];
                                }
                            }
                        }
                        out[((bi * cout + co) * h + y) * wd + xx] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_loops() {
        let cases = [(3, 2, 3, 6), (1, 4, 2, 6), (7, 2, 1, 6), (3, 3, 17, 6), (5, 2, 20, 6)];
        // row widths of 8 and 16 take the register-blocked kernels
        let blocked = [(3, 2, 5, 8), (3, 3, 4, 16), (7, 2, 1, 16), (5, 3, 9, 8), (3, 2, 20, 8)];
        for &(k, cin, cout, width) in cases.iter().chain(&blocked) {
            let x = random(&[2, cin, 5, width], 10 + k as u64);
            let w = random(&[cout, cin, k, k], 20 + k as u64);
            let b = random(&[cout], 30);
            let tape = Tape::new();
            let y = conv2d(tape.constant(x.clone()), tape.constant(w.clone()), Some(tape.constant(b.clone())));
            let reference = naive_conv(&x, &w, Some(&b));
            for (a, r) in y.value().data().iter().zip(&reference) {
                assert!((a - r).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_gradients() {
        let x = random(&[2, 2, 4, 5], 1);
        let w = random(&[3, 2, 3, 3], 2);
        let b = random(&[3], 3);
        check(&[x.clone(), w.clone(), b], |_, v| conv2d(v[0], v[1], Some(v[2])), 1e-6);
        let w1 = random(&[2, 2, 1, 1], 4);
        check(&[x.clone(), w1], |_, v| conv2d(v[0], v[1], None), 1e-6);
        let w7 = random(&[1, 2, 7, 7], 5);
        check(&[x.clone(), w7], |_, v| conv2d(v[0], v[1], None), 1e-6);
        // wide enough for the patch-matrix path
        let wide = random(&[17, 2, 3, 3], 6);
        check(&[x, wide], |_, v| conv2d(v[0], v[1], None), 1e-6);
    }

    #[test]
    fn blocked_conv_gradients() {
        for width in [8, 16] {
            let x = random(&[2, 3, 3, width], 40 + width as u64);
            let w = random(&[5, 3, 3, 3], 41);
            let b = random(&[5], 42);
            check(&[x.clone(), w, b], |_, v| conv2d(v[0], v[1], Some(v[2])), 1e-6);
            let w7 = random(&[1, 3, 7, 7], 43);
            check(&[x.clone(), w7], |_, v| conv2d(v[0], v[1], None), 1e-6);
            // forward blocked, backward through the patch matrix
            let w12 = random(&[12, 3, 3, 3], 44);
            check(&[x, w12], |_, v| conv2d(v[0], v[1], None), 1e-6);
        }
    }

    #[test]
    fn pool_and_upsample_shapes() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(random(&[1, 2, 4, 6], 9));
        assert_eq!(max_pool2x2(x).shape(), vec![1, 2, 2, 3]);
        assert_eq!(upsample_bilinear2x(x).shape(), vec![1, 2, 8, 12]);
    }

    #[test]
    fn upsample_preserves_constants() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full(&[1, 1, 3, 5], 2.5));
        assert!(upsample_bilinear2x(x).value().data().iter().all(|&v| (v - 2.5).abs() < 1e-15));
    }

    #[test]
    fn pool_and_upsample_gradients() {
        let x = random(&[2, 2, 4, 4], 7);
        check(&[x.clone()], |_, v| max_pool2x2(v[0]), 1e-6);
        check(&[x], |_, v| upsample_bilinear2x(v[0]), 1e-6);
    }
}
