//! Forward/backward numeric kernels shared by the eager evaluator and the
//! gradient tape. Keeping both engines on the same code path means the taped
//! forward is bit-identical to the plain forward.
//!
//! Layout conventions:
//! - 1D feature maps are `[time, channel]` matrices.
//! - Stacked maps are `[scale, time, channel]` tensors.
//! - Conv kernels are `[c_out, c_in, k]` (1D) or `[c_out, c_in, kh, kw]` (2D).
//! - Deformable kernels are depthwise: `[taps, channel]` over the sampling
//!   grid; channel mixing is done by the separate mixing layer.

use crate::tensor::Tensor;

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

pub fn relu(x: &Tensor) -> Tensor {
    Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| v.max(0.0)).collect())
}

pub fn relu_backward(adj: &Tensor, x: &Tensor) -> Tensor {
    let data = adj
        .data()
        .iter()
        .zip(x.data())
        .map(|(&a, &v)| if v > 0.0 { a } else { 0.0 })
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    Tensor::new(
        x.shape().to_vec(),
        x.data().iter().map(|&v| sigmoid_scalar(v)).collect(),
    )
}

#[inline]
pub fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// d sigmoid = y (1 - y), expressed in terms of the forward output.
pub fn sigmoid_backward(adj: &Tensor, y: &Tensor) -> Tensor {
    let data = adj
        .data()
        .iter()
        .zip(y.data())
        .map(|(&a, &o)| a * o * (1.0 - o))
        .collect();
    Tensor::new(y.shape().to_vec(), data)
}

// ---------------------------------------------------------------------------
// row-broadcast ops over [rows, c] matrices
// ---------------------------------------------------------------------------

/// Add vector `v` (length c) to every row.
pub fn add_row(x: &Tensor, v: &Tensor) -> Tensor {
    let (r, c) = (x.nrows(), x.ncols());
    assert_eq!(v.len(), c, "add_row length mismatch");
    let mut out = x.clone();
    for i in 0..r {
        for j in 0..c {
            out.data_mut()[i * c + j] += v.data()[j];
        }
    }
    out
}

pub fn add_row_backward(adj: &Tensor) -> (Tensor, Tensor) {
    let (r, c) = (adj.nrows(), adj.ncols());
    let mut dv = vec![0.0; c];
    for i in 0..r {
        for j in 0..c {
            dv[j] += adj.at2(i, j);
        }
    }
    (adj.clone(), Tensor::new(vec![c], dv))
}

/// Multiply every row elementwise by `v` (length c).
pub fn mul_row(x: &Tensor, v: &Tensor) -> Tensor {
    let (r, c) = (x.nrows(), x.ncols());
    assert_eq!(v.len(), c, "mul_row length mismatch");
    let mut out = x.clone();
    for i in 0..r {
        for j in 0..c {
            out.data_mut()[i * c + j] *= v.data()[j];
        }
    }
    out
}

pub fn mul_row_backward(adj: &Tensor, x: &Tensor, v: &Tensor) -> (Tensor, Tensor) {
    let (r, c) = (x.nrows(), x.ncols());
    let mut dx = Tensor::zeros(&[r, c]);
    let mut dv = vec![0.0; c];
    for i in 0..r {
        for j in 0..c {
            let a = adj.at2(i, j);
            dx.set2(i, j, a * v.data()[j]);
            dv[j] += a * x.at2(i, j);
        }
    }
    (dx, Tensor::new(vec![c], dv))
}

/// Per-row standardization over the last axis: `y = (x - mean) / sqrt(var + eps)`
/// with population variance. This is the normalization core of the per-timestep
/// layer norm; affine scale/shift are separate ops.
pub fn row_standardize(x: &Tensor, eps: f64) -> Tensor {
    let (r, c) = (x.nrows(), x.ncols());
    let mut out = Tensor::zeros(&[r, c]);
    for i in 0..r {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let s = (var + eps).sqrt();
        for j in 0..c {
            out.set2(i, j, (row[j] - mean) / s);
        }
    }
    out
}

/// Row-standardize backward. With y = (x - mean)/s, s^2 = var + eps:
/// dx_j = (a_j - mean(a) - y_j * mean(a .* y)) / s, per row.
pub fn row_standardize_backward(adj: &Tensor, x: &Tensor, y: &Tensor, eps: f64) -> Tensor {
    let (r, c) = (x.nrows(), x.ncols());
    let mut dx = Tensor::zeros(&[r, c]);
    for i in 0..r {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let s = (var + eps).sqrt();
        let arow = adj.row(i);
        let yrow = y.row(i);
        let abar = arow.iter().sum::<f64>() / c as f64;
        let aybar = arow.iter().zip(yrow).map(|(&a, &yy)| a * yy).sum::<f64>() / c as f64;
        for j in 0..c {
            dx.set2(i, j, (arow[j] - abar - yrow[j] * aybar) / s);
        }
    }
    dx
}

// ---------------------------------------------------------------------------
// dilated 1D convolution over [time, channel]
// ---------------------------------------------------------------------------

/// Tap offset for 1-based tap index `i` of a k-tap kernel, centered so the
/// `ceil(k/2)`-th tap reads the current timestep: `d * (i - ceil(k/2))`.
/// Out-of-range reads are zero, so the output keeps length `l`.
#[inline]
fn tap_offset(i0: usize, k: usize, d: usize) -> isize {
    let center = k.div_ceil(2) as isize; // ceil(k/2), 1-based
    d as isize * (i0 as isize + 1 - center)
}

/// Dilated 1D convolution: x [l, c_in], w [c_out, c_in, k], b [c_out] -> [l, c_out].
pub fn conv1d(x: &Tensor, w: &Tensor, b: &Tensor, d: usize) -> Tensor {
    let (l, c_in) = (x.nrows(), x.ncols());
    let (c_out, wc_in, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    assert_eq!(c_in, wc_in, "conv1d channel mismatch");
    assert_eq!(b.len(), c_out, "conv1d bias mismatch");
    let mut out = Tensor::zeros(&[l, c_out]);
    for t in 0..l {
        for co in 0..c_out {
            let mut acc = b.data()[co];
            for i0 in 0..k {
                let src = t as isize + tap_offset(i0, k, d);
                if src < 0 || src >= l as isize {
                    continue;
                }
                let xrow = x.row(src as usize);
                for ci in 0..c_in {
                    acc += w.at3(co, ci, i0) * xrow[ci];
                }
            }
            out.set2(t, co, acc);
        }
    }
    out
}

pub fn conv1d_backward(
    adj: &Tensor,
    x: &Tensor,
    w: &Tensor,
    d: usize,
) -> (Tensor, Tensor, Tensor) {
    let (l, c_in) = (x.nrows(), x.ncols());
    let (c_out, _, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let mut dx = Tensor::zeros(&[l, c_in]);
    let mut dw = Tensor::zeros(&[c_out, c_in, k]);
    let mut db = vec![0.0; c_out];
    for t in 0..l {
        for co in 0..c_out {
            let a = adj.at2(t, co);
            if a == 0.0 {
                continue;
            }
            db[co] += a;
            for i0 in 0..k {
                let src = t as isize + tap_offset(i0, k, d);
                if src < 0 || src >= l as isize {
                    continue;
                }
                let s = src as usize;
                for ci in 0..c_in {
                    dw.set3(co, ci, i0, dw.at3(co, ci, i0) + a * x.at2(s, ci));
                    dx.set2(s, ci, dx.at2(s, ci) + a * w.at3(co, ci, i0));
                }
            }
        }
    }
    (dx, dw, Tensor::new(vec![c_out], db))
}

// ---------------------------------------------------------------------------
// adaptive average pooling / linear upsampling along the time axis
// ---------------------------------------------------------------------------

#[inline]
fn pool_bin(i: usize, l: usize, p: usize) -> (usize, usize) {
    (i * l / p, (i + 1) * l / p)
}

/// Adaptive average pool over rows: [l, c] -> [p, c] with bin edges
/// floor(i*l/p) .. floor((i+1)*l/p).
pub fn avg_pool_rows(x: &Tensor, p: usize) -> Tensor {
    let (l, c) = (x.nrows(), x.ncols());
    assert!(p >= 1 && p <= l, "pool size {p} out of range for length {l}");
    let mut out = Tensor::zeros(&[p, c]);
    for i in 0..p {
        let (lo, hi) = pool_bin(i, l, p);
        let width = (hi - lo) as f64;
        for j in 0..c {
            let mut acc = 0.0;
            for t in lo..hi {
                acc += x.at2(t, j);
            }
            out.set2(i, j, acc / width);
        }
    }
    out
}

pub fn avg_pool_rows_backward(adj: &Tensor, l: usize) -> Tensor {
    let (p, c) = (adj.nrows(), adj.ncols());
    let mut dx = Tensor::zeros(&[l, c]);
    for i in 0..p {
        let (lo, hi) = pool_bin(i, l, p);
        let width = (hi - lo) as f64;
        for j in 0..c {
            let g = adj.at2(i, j) / width;
            for t in lo..hi {
                dx.set2(t, j, dx.at2(t, j) + g);
            }
        }
    }
    dx
}

/// Interpolation source for upsampling p rows to l rows (align-corners style,
/// which maps both endpoints exactly and preserves constants).
#[inline]
fn lerp_source(j: usize, l: usize, p: usize) -> (usize, usize, f64) {
    if p == 1 || l == 1 {
        return (0, 0, 0.0);
    }
    let pos = j as f64 * (p - 1) as f64 / (l - 1) as f64;
    let mut i0 = pos.floor() as usize;
    if i0 >= p - 1 {
        i0 = p - 2;
    }
    (i0, i0 + 1, pos - i0 as f64)
}

/// Linear-interpolation upsample over rows: [p, c] -> [l, c].
pub fn upsample_rows(x: &Tensor, l: usize) -> Tensor {
    let (p, c) = (x.nrows(), x.ncols());
    let mut out = Tensor::zeros(&[l, c]);
    for j in 0..l {
        let (i0, i1, f) = lerp_source(j, l, p);
        for ch in 0..c {
            out.set2(j, ch, (1.0 - f) * x.at2(i0, ch) + f * x.at2(i1, ch));
        }
    }
    out
}

pub fn upsample_rows_backward(adj: &Tensor, p: usize) -> Tensor {
    let (l, c) = (adj.nrows(), adj.ncols());
    let mut dx = Tensor::zeros(&[p, c]);
    for j in 0..l {
        let (i0, i1, f) = lerp_source(j, l, p);
        for ch in 0..c {
            let a = adj.at2(j, ch);
            dx.set2(i0, ch, dx.at2(i0, ch) + (1.0 - f) * a);
            dx.set2(i1, ch, dx.at2(i1, ch) + f * a);
        }
    }
    dx
}

// ---------------------------------------------------------------------------
// 2D convolution over the (scale, time) plane of [s, l, c] tensors
// ---------------------------------------------------------------------------

/// Zero-padded same-size 2D convolution: x [s, l, c_in],
/// w [c_out, c_in, kh, kw] (kh, kw odd), b [c_out] -> [s, l, c_out].
pub fn conv2d(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let (s, l, c_in) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (c_out, wc_in, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    assert_eq!(c_in, wc_in, "conv2d channel mismatch");
    assert!(kh % 2 == 1 && kw % 2 == 1, "conv2d kernel must be odd");
    let (ph, pw) = (kh as isize / 2, kw as isize / 2);
    let mut out = Tensor::zeros(&[s, l, c_out]);
    for si in 0..s {
        for t in 0..l {
            for co in 0..c_out {
                let mut acc = b.data()[co];
                for di in 0..kh {
                    let ss = si as isize + di as isize - ph;
                    if ss < 0 || ss >= s as isize {
                        continue;
                    }
                    for dj in 0..kw {
                        let tt = t as isize + dj as isize - pw;
                        if tt < 0 || tt >= l as isize {
                            continue;
                        }
                        for ci in 0..c_in {
                            acc += w.data()[((co * c_in + ci) * kh + di) * kw + dj]
                                * x.at3(ss as usize, tt as usize, ci);
                        }
                    }
                }
                out.set3(si, t, co, acc);
            }
        }
    }
    out
}

pub fn conv2d_backward(adj: &Tensor, x: &Tensor, w: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (s, l, c_in) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (c_out, _, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    let (ph, pw) = (kh as isize / 2, kw as isize / 2);
    let mut dx = Tensor::zeros(&[s, l, c_in]);
    let mut dw = Tensor::zeros(&[c_out, c_in, kh, kw]);
    let mut db = vec![0.0; c_out];
    for si in 0..s {
        for t in 0..l {
            for co in 0..c_out {
                let a = adj.at3(si, t, co);
                if a == 0.0 {
                    continue;
                }
                db[co] += a;
                for di in 0..kh {
                    let ss = si as isize + di as isize - ph;
                    if ss < 0 || ss >= s as isize {
                        continue;
                    }
                    for dj in 0..kw {
                        let tt = t as isize + dj as isize - pw;
                        if tt < 0 || tt >= l as isize {
                            continue;
                        }
                        for ci in 0..c_in {
                            let wi = ((co * c_in + ci) * kh + di) * kw + dj;
                            dw.data_mut()[wi] += a * x.at3(ss as usize, tt as usize, ci);
                            let xi = ((ss as usize * l) + tt as usize) * c_in + ci;
                            dx.data_mut()[xi] += a * w.data()[wi];
                        }
                    }
                }
            }
        }
    }
    (dx, dw, Tensor::new(vec![c_out], db))
}

// ---------------------------------------------------------------------------
// deformable sampling over the (scale, time) plane
// ---------------------------------------------------------------------------

/// Sampling geometry shared by forward and backward: for output location
/// (si, t) and tap n of a kh x kw grid, the nominal sample point is the grid
/// neighbor displaced by the learned offset, expressed in the coordinates of
/// an input zero-padded by 1 on each side, then clamped to the padded
/// rectangle.
struct SamplePoint {
    y0: usize,
    x0: usize,
    fy: f64,
    fx: f64,
    y_clamped: bool,
    x_clamped: bool,
}

#[inline]
#[allow(clippy::too_many_arguments)]
fn locate(
    si: usize,
    t: usize,
    di: usize,
    dj: usize,
    dy: f64,
    dx: f64,
    kh: usize,
    kw: usize,
    s: usize,
    l: usize,
) -> SamplePoint {
    // padded coordinate = original + 1; grid offsets run -kh/2 ..= kh/2
    let base_y = si as f64 + 1.0 + di as f64 - (kh / 2) as f64;
    let base_x = t as f64 + 1.0 + dj as f64 - (kw / 2) as f64;
    let max_y = (s + 1) as f64;
    let max_x = (l + 1) as f64;
    let ry = base_y + dy;
    let rx = base_x + dx;
    let cy = ry.clamp(0.0, max_y);
    let cx = rx.clamp(0.0, max_x);
    let mut y0 = cy.floor();
    if y0 >= max_y {
        y0 = max_y - 1.0;
    }
    let mut x0 = cx.floor();
    if x0 >= max_x {
        x0 = max_x - 1.0;
    }
    SamplePoint {
        y0: y0 as usize,
        x0: x0 as usize,
        fy: cy - y0,
        fx: cx - x0,
        y_clamped: ry != cy,
        x_clamped: rx != cx,
    }
}

/// Read the zero-padded input at padded coordinates (py, px).
#[inline]
fn padded_get(x: &Tensor, py: usize, px: usize, c: usize) -> f64 {
    let (s, l) = (x.shape()[0], x.shape()[1]);
    if py == 0 || px == 0 || py > s || px > l {
        0.0
    } else {
        x.at3(py - 1, px - 1, c)
    }
}

/// Depthwise deformable convolution with bilinear sampling.
///
/// x [s, l, c], offsets [s, l, 2*taps] as (dy, dx) pairs per tap,
/// w [taps, c] -> [s, l, c]. With all offsets zero this reduces exactly to a
/// depthwise zero-padded kh x kw convolution with kernel w.
pub fn deform_sample(x: &Tensor, offsets: &Tensor, w: &Tensor, kh: usize, kw: usize) -> Tensor {
    let (s, l, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let taps = kh * kw;
    assert_eq!(offsets.shape(), &[s, l, 2 * taps], "offset shape mismatch");
    assert_eq!(w.shape(), &[taps, c], "deform kernel shape mismatch");
    let mut out = Tensor::zeros(&[s, l, c]);
    for si in 0..s {
        for t in 0..l {
            let orow = offsets.row(si * l + t);
            for n in 0..taps {
                let (di, dj) = (n / kw, n % kw);
                let p = locate(si, t, di, dj, orow[2 * n], orow[2 * n + 1], kh, kw, s, l);
                let (y0, x0, fy, fx) = (p.y0, p.x0, p.fy, p.fx);
                for ch in 0..c {
                    let v00 = padded_get(x, y0, x0, ch);
                    let v01 = padded_get(x, y0, x0 + 1, ch);
                    let v10 = padded_get(x, y0 + 1, x0, ch);
                    let v11 = padded_get(x, y0 + 1, x0 + 1, ch);
                    let v = (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01)
                        + fy * ((1.0 - fx) * v10 + fx * v11);
                    out.set3(si, t, ch, out.at3(si, t, ch) + w.at2(n, ch) * v);
                }
            }
        }
    }
    out
}

/// Accumulate into the unpadded input gradient; writes landing on the padding
/// ring are discarded (padding is constant zero).
#[inline]
fn padded_add(dx: &mut Tensor, py: usize, px: usize, c: usize, v: f64) {
    let (s, l) = (dx.shape()[0], dx.shape()[1]);
    if py == 0 || px == 0 || py > s || px > l {
        return;
    }
    let idx = ((py - 1) * l + (px - 1)) * dx.shape()[2] + c;
    dx.data_mut()[idx] += v;
}

pub fn deform_sample_backward(
    adj: &Tensor,
    x: &Tensor,
    offsets: &Tensor,
    w: &Tensor,
    kh: usize,
    kw: usize,
) -> (Tensor, Tensor, Tensor) {
    let (s, l, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let taps = kh * kw;
    let mut dx = Tensor::zeros(&[s, l, c]);
    let mut doff = Tensor::zeros(&[s, l, 2 * taps]);
    let mut dw = Tensor::zeros(&[taps, c]);
    for si in 0..s {
        for t in 0..l {
            let orow = offsets.row(si * l + t);
            for n in 0..taps {
                let (di, dj) = (n / kw, n % kw);
                let p = locate(si, t, di, dj, orow[2 * n], orow[2 * n + 1], kh, kw, s, l);
                let (y0, x0, fy, fx) = (p.y0, p.x0, p.fy, p.fx);
                let mut gy = 0.0;
                let mut gx = 0.0;
                for ch in 0..c {
                    let a = adj.at3(si, t, ch);
                    if a == 0.0 {
                        continue;
                    }
                    let v00 = padded_get(x, y0, x0, ch);
                    let v01 = padded_get(x, y0, x0 + 1, ch);
                    let v10 = padded_get(x, y0 + 1, x0, ch);
                    let v11 = padded_get(x, y0 + 1, x0 + 1, ch);
                    let v = (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01)
                        + fy * ((1.0 - fx) * v10 + fx * v11);
                    dw.set2(n, ch, dw.at2(n, ch) + a * v);
                    let aw = a * w.at2(n, ch);
                    padded_add(&mut dx, y0, x0, ch, aw * (1.0 - fy) * (1.0 - fx));
                    padded_add(&mut dx, y0, x0 + 1, ch, aw * (1.0 - fy) * fx);
                    padded_add(&mut dx, y0 + 1, x0, ch, aw * fy * (1.0 - fx));
                    padded_add(&mut dx, y0 + 1, x0 + 1, ch, aw * fy * fx);
                    // d v / d fy and d v / d fx of the bilinear form
                    gy += aw * ((1.0 - fx) * (v10 - v00) + fx * (v11 - v01));
                    gx += aw * ((1.0 - fy) * (v01 - v00) + fy * (v11 - v10));
                }
                // clamped coordinates have zero derivative w.r.t. the offset
                let oi = (si * l + t) * 2 * taps + 2 * n;
                if !p.y_clamped {
                    doff.data_mut()[oi] += gy;
                }
                if !p.x_clamped {
                    doff.data_mut()[oi + 1] += gx;
                }
            }
        }
    }
    (dx, doff, dw)
}

// ---------------------------------------------------------------------------
// stacking / gating / reductions over [s, l, c]
// ---------------------------------------------------------------------------

/// Stack `parts` ([l, c] each) into [s, l, c], scale-major.
pub fn stack(parts: &[&Tensor]) -> Tensor {
    assert!(!parts.is_empty());
    let (l, c) = (parts[0].nrows(), parts[0].ncols());
    let s = parts.len();
    let mut data = Vec::with_capacity(s * l * c);
    for p in parts {
        assert_eq!(p.shape(), &[l, c], "stack shape mismatch");
        data.extend_from_slice(p.data());
    }
    Tensor::new(vec![s, l, c], data)
}

/// Multiply [s, l, c] by a per-location gate [s, l, 1] broadcast over channels.
pub fn mul_gate(x: &Tensor, g: &Tensor) -> Tensor {
    let (s, l, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    assert_eq!(g.shape(), &[s, l, 1], "gate shape mismatch");
    let mut out = x.clone();
    for i in 0..s * l {
        let gv = g.data()[i];
        for ch in 0..c {
            out.data_mut()[i * c + ch] *= gv;
        }
    }
    out
}

pub fn mul_gate_backward(adj: &Tensor, x: &Tensor, g: &Tensor) -> (Tensor, Tensor) {
    let (s, l, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut dx = Tensor::zeros(&[s, l, c]);
    let mut dg = Tensor::zeros(&[s, l, 1]);
    for i in 0..s * l {
        let gv = g.data()[i];
        let mut acc = 0.0;
        for ch in 0..c {
            let a = adj.data()[i * c + ch];
            dx.data_mut()[i * c + ch] = a * gv;
            acc += a * x.data()[i * c + ch];
        }
        dg.data_mut()[i] = acc;
    }
    (dx, dg)
}

/// Mean over the scale axis: [s, l, c] -> [l, c].
pub fn mean_scale(x: &Tensor) -> Tensor {
    let (s, l, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = Tensor::zeros(&[l, c]);
    for si in 0..s {
        for i in 0..l * c {
            out.data_mut()[i] += x.data()[si * l * c + i];
        }
    }
    out.scale(1.0 / s as f64)
}

pub fn mean_scale_backward(adj: &Tensor, s: usize) -> Tensor {
    let (l, c) = (adj.nrows(), adj.ncols());
    let g = adj.scale(1.0 / s as f64);
    let mut data = Vec::with_capacity(s * l * c);
    for _ in 0..s {
        data.extend_from_slice(g.data());
    }
    Tensor::new(vec![s, l, c], data)
}
