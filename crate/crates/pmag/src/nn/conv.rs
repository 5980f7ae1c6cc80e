//! 3x3x3 convolution over time-major volumes, implemented as blocked
//! im2col + GEMM with analytic backward passes.
//!
//! Boundary handling: spatial padding is zero, temporal padding replicates
//! the edge frame. Replication keeps time-constant inputs exactly
//! time-constant through the network, which the estimator's contracts rely
//! on.
//!
//! Inputs are passed as channel-concatenated `parts` so U-Net skip
//! concatenations never materialize.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};
use rayon::prelude::*;

use super::tensor::{Tensor, Volume};

const KT: usize = 3;
const KS: usize = 3;
const TAPS: usize = KT * KS * KS;

/// Column budget per GEMM call; keeps the im2col buffer cache-friendly.
const COL_TARGET: usize = 2304;
/// Upper bound on the im2col buffer, in elements.
const BUF_ELEMS_MAX: usize = 2_000_000;

fn total_channels(parts: &[&Volume]) -> usize {
    parts.iter().map(|p| p.c).sum()
}

/// Time-chunk length for parallel loops: as many frames as fit the column
/// budget, at least one.
fn time_block(hw: usize, k_rows: usize) -> usize {
    let by_cols = (COL_TARGET / hw).max(1);
    let by_buf = (BUF_ELEMS_MAX / (k_rows * hw).max(1)).max(1);
    by_cols.min(by_buf)
}

/// Row blocks inside one frame when a single plane exceeds the budget.
fn y_blocks(h: usize, w: usize) -> Vec<(usize, usize)> {
    if h * w <= 2 * COL_TARGET {
        return vec![(0, h)];
    }
    let rows = (COL_TARGET / w).max(1);
    let mut blocks = Vec::new();
    let mut y = 0;
    while y < h {
        blocks.push((y, (y + rows).min(h)));
        y += rows;
    }
    blocks
}

/// Copy one kernel-tap-shifted row block of `plane` into `dst`.
///
/// `dst` covers rows `y0..y1` of the output plane (already zeroed); the
/// source is shifted by `(ky - 1, kx - 1)` with zero padding.
fn fill_tap(plane: &[f64], h: usize, w: usize, ky: usize, kx: usize, y0: usize, y1: usize, dst: &mut [f64]) {
    let dy = ky as isize - 1;
    let dx = kx as isize - 1;
    let x_dst0 = (-dx).max(0) as usize;
    let x_src0 = dx.max(0) as usize;
    let seg = w - dx.unsigned_abs();
    for y in y0..y1 {
        let ys = y as isize + dy;
        if ys < 0 || ys >= h as isize {
            continue;
        }
        let src = &plane[ys as usize * w + x_src0..ys as usize * w + x_src0 + seg];
        let doff = (y - y0) * w + x_dst0;
        dst[doff..doff + seg].copy_from_slice(src);
    }
}

#[derive(Clone, Copy, PartialEq)]
enum TemporalPad {
    Replicate,
    Zero,
}

/// Build the im2col matrix for output positions `(t0..t0+tb) x (y0..y1) x w`.
///
/// Rows are ordered `(channel, kt, ky, kx)` across all `parts`; columns are
/// `(t, y, x)` row-major. `buf` must hold `k_rows * n_cols` elements.
#[allow(clippy::too_many_arguments)]
fn im2col(
    parts: &[&Volume],
    t0: usize,
    tb: usize,
    y0: usize,
    y1: usize,
    pad: TemporalPad,
    buf: &mut [f64],
) {
    let (t_len, h, w) = (parts[0].t, parts[0].h, parts[0].w);
    let rows_hw = (y1 - y0) * w;
    let n = tb * rows_hw;
    buf[..total_channels(parts) * TAPS * n].fill(0.0);
    let mut row = 0usize;
    for part in parts {
        for c in 0..part.c {
            for kt in 0..KT {
                for ky in 0..KS {
                    for kx in 0..KS {
                        let dst_row = &mut buf[row * n..(row + 1) * n];
                        for ti in 0..tb {
                            let t_abs = t0 + ti;
                            let ts = t_abs as isize + kt as isize - 1;
                            let ts = match pad {
                                TemporalPad::Replicate => Some(ts.clamp(0, t_len as isize - 1)),
                                TemporalPad::Zero if ts < 0 || ts >= t_len as isize => None,
                                TemporalPad::Zero => Some(ts),
                            };
                            let Some(ts) = ts else { continue };
                            let plane = part.plane(ts as usize, c);
                            fill_tap(
                                plane,
                                h,
                                w,
                                ky,
                                kx,
                                y0,
                                y1,
                                &mut dst_row[ti * rows_hw..(ti + 1) * rows_hw],
                            );
                        }
                        row += 1;
                    }
                }
            }
        }
    }
}

fn gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], beta: f64) {
    let av = ArrayView2::from_shape((m, k), &a[..m * k]).expect("gemm a shape");
    let bv = ArrayView2::from_shape((k, n), &b[..k * n]).expect("gemm b shape");
    let mut cv = ArrayViewMut2::from_shape((m, n), &mut c[..m * n]).expect("gemm c shape");
    general_mat_mul(1.0, &av, &bv, beta, &mut cv);
}

/// `dW += dOut_block x B^T`, with `dout_block` given as an `m x n` buffer.
fn gemm_nt_accum(m: usize, n: usize, k: usize, dout_block: &[f64], b: &[f64], dw: &mut [f64]) {
    let av = ArrayView2::from_shape((m, n), &dout_block[..m * n]).expect("gemm a shape");
    let bv = ArrayView2::from_shape((k, n), &b[..k * n]).expect("gemm b shape");
    let mut cv = ArrayViewMut2::from_shape((m, k), &mut dw[..m * k]).expect("gemm c shape");
    general_mat_mul(1.0, &av, &bv.t(), 1.0, &mut cv);
}

/// Forward convolution. `weight` has shape `[co, ci_total, 3, 3, 3]`,
/// `bias` shape `[co]`; spatial size is preserved and `t` is unchanged.
pub fn conv3d_forward(parts: &[&Volume], weight: &Tensor, bias: &Tensor) -> Volume {
    let (t, h, w) = (parts[0].t, parts[0].h, parts[0].w);
    debug_assert!(parts.iter().all(|p| p.t == t && p.h == h && p.w == w));
    let ci = total_channels(parts);
    assert_eq!(weight.shape, vec![bias.len(), ci, KT, KS, KS], "conv weight shape");
    let co = bias.len();
    let k_rows = ci * TAPS;
    let hw = h * w;
    let tb = time_block(hw, k_rows);
    let yb = y_blocks(h, w);

    let mut out = Volume::zeros(t, co, h, w);
    let frame = out.frame_len();
    out.data
        .par_chunks_mut(frame * tb)
        .enumerate()
        .for_each_init(
            || (Vec::<f64>::new(), Vec::<f64>::new()),
            |(bbuf, cbuf), (chunk_idx, chunk)| {
                let t0 = chunk_idx * tb;
                let tb_here = chunk.len() / frame;
                for &(y0, y1) in &yb {
                    let n = tb_here * (y1 - y0) * w;
                    bbuf.resize(k_rows * n, 0.0);
                    cbuf.resize(co * n, 0.0);
                    im2col(parts, t0, tb_here, y0, y1, TemporalPad::Replicate, bbuf);
                    gemm(co, k_rows, n, &weight.data, bbuf, cbuf, 0.0);
                    let rows_hw = (y1 - y0) * w;
                    for ti in 0..tb_here {
                        for c in 0..co {
                            let src = &cbuf[c * n + ti * rows_hw..c * n + (ti + 1) * rows_hw];
                            let doff = ti * frame + c * hw + y0 * w;
                            let dst = &mut chunk[doff..doff + rows_hw];
                            let b = bias.data[c];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d = s + b;
                            }
                        }
                    }
                }
            },
        );
    out
}

/// Gradient with respect to the inputs; one volume per input part.
///
/// This is the correlation of `dout` with the flipped kernel plus two
/// single-frame corrections that fold back the replicated temporal padding.
pub fn conv3d_input_grad(dout: &Volume, weight: &Tensor, part_channels: &[usize]) -> Vec<Volume> {
    let (t, h, w) = (dout.t, dout.h, dout.w);
    let co = dout.c;
    let ci: usize = part_channels.iter().sum();
    assert_eq!(weight.shape, vec![co, ci, KT, KS, KS], "conv weight shape");

    // w_flip[ci][(co, jt, jy, jx)] = w[co][ci][2-jt][2-jy][2-jx]
    let k2 = co * TAPS;
    let mut w_flip = vec![0.0; ci * k2];
    for c_out in 0..co {
        for c_in in 0..ci {
            for jt in 0..KT {
                for jy in 0..KS {
                    for jx in 0..KS {
                        let src = (((c_out * ci + c_in) * KT + (2 - jt)) * KS + (2 - jy)) * KS + (2 - jx);
                        let dst = c_in * k2 + ((c_out * KT + jt) * KS + jy) * KS + jx;
                        w_flip[dst] = weight.data[src];
                    }
                }
            }
        }
    }

    let hw = h * w;
    let tb = time_block(hw, k2);
    let yb = y_blocks(h, w);
    let mut din = Volume::zeros(t, ci, h, w);
    let frame = din.frame_len();
    let dparts = [dout];
    din.data
        .par_chunks_mut(frame * tb)
        .enumerate()
        .for_each_init(
            || (Vec::<f64>::new(), Vec::<f64>::new()),
            |(bbuf, cbuf), (chunk_idx, chunk)| {
                let t0 = chunk_idx * tb;
                let tb_here = chunk.len() / frame;
                for &(y0, y1) in &yb {
                    let n = tb_here * (y1 - y0) * w;
                    bbuf.resize(k2 * n, 0.0);
                    cbuf.resize(ci * n, 0.0);
                    im2col(&dparts, t0, tb_here, y0, y1, TemporalPad::Zero, bbuf);
                    gemm(ci, k2, n, &w_flip, bbuf, cbuf, 0.0);
                    let rows_hw = (y1 - y0) * w;
                    for ti in 0..tb_here {
                        for c in 0..ci {
                            let src = &cbuf[c * n + ti * rows_hw..c * n + (ti + 1) * rows_hw];
                            let doff = ti * frame + c * hw + y0 * w;
                            chunk[doff..doff + rows_hw].copy_from_slice(src);
                        }
                    }
                }
            },
        );

    // Replicated temporal padding: the edge input frames also receive the
    // would-be out-of-range taps (kt = 0 at t = 0, kt = 2 at t = T-1).
    for (edge_t, kt) in [(0usize, 0usize), (t - 1, KT - 1)] {
        let mut w_edge = vec![0.0; ci * co * KS * KS];
        for c_out in 0..co {
            for c_in in 0..ci {
                for jy in 0..KS {
                    for jx in 0..KS {
                        let src = (((c_out * ci + c_in) * KT + kt) * KS + (2 - jy)) * KS + (2 - jx);
                        let dst = c_in * (co * KS * KS) + (c_out * KS + jy) * KS + jx;
                        w_edge[dst] = weight.data[src];
                    }
                }
            }
        }
        let mut bbuf = vec![0.0; co * KS * KS * hw];
        let rows_hw = hw;
        for c_out in 0..co {
            for jy in 0..KS {
                for jx in 0..KS {
                    let row = (c_out * KS + jy) * KS + jx;
                    fill_tap(
                        dout.plane(edge_t, c_out),
                        h,
                        w,
                        jy,
                        jx,
                        0,
                        h,
                        &mut bbuf[row * rows_hw..(row + 1) * rows_hw],
                    );
                }
            }
        }
        let mut cbuf = vec![0.0; ci * hw];
        gemm(ci, co * KS * KS, hw, &w_edge, &bbuf, &mut cbuf, 0.0);
        for c in 0..ci {
            let dst = din.plane_mut(edge_t, c);
            for (d, s) in dst.iter_mut().zip(&cbuf[c * hw..(c + 1) * hw]) {
                *d += s;
            }
        }
    }

    // split into parts
    let mut outputs = Vec::with_capacity(part_channels.len());
    let mut c_off = 0usize;
    for &pc in part_channels {
        let mut part = Volume::zeros(t, pc, h, w);
        for ti in 0..t {
            for c in 0..pc {
                part.plane_mut(ti, c).copy_from_slice(din.plane(ti, c_off + c));
            }
        }
        outputs.push(part);
        c_off += pc;
    }
    outputs
}

/// Gradients with respect to the weights and bias.
pub fn conv3d_param_grads(parts: &[&Volume], dout: &Volume) -> (Tensor, Tensor) {
    let (t, h, w) = (dout.t, dout.h, dout.w);
    let co = dout.c;
    let ci = total_channels(parts);
    let k_rows = ci * TAPS;
    let hw = h * w;
    let tb = time_block(hw, k_rows);
    let yb = y_blocks(h, w);

    // fixed-size time chunks, reduced in index order for determinism
    let n_chunks = t.div_ceil(tb);
    let partials: Vec<(Vec<f64>, Vec<f64>)> = (0..n_chunks)
        .into_par_iter()
        .map_init(
            || (Vec::<f64>::new(), Vec::<f64>::new()),
            |(bbuf, dbuf), chunk_idx| {
                let t0 = chunk_idx * tb;
                let tb_here = tb.min(t - t0);
                let mut dw = vec![0.0; co * k_rows];
                let mut db = vec![0.0; co];
                for &(y0, y1) in &yb {
                    let rows_hw = (y1 - y0) * w;
                    let n = tb_here * rows_hw;
                    bbuf.resize(k_rows * n, 0.0);
                    dbuf.resize(co * n, 0.0);
                    im2col(parts, t0, tb_here, y0, y1, TemporalPad::Replicate, bbuf);
                    // gather the matching dout block (co x n)
                    for ti in 0..tb_here {
                        for c in 0..co {
                            let src_off = (t0 + ti) * co * hw + c * hw + y0 * w;
                            let src = &dout.data[src_off..src_off + rows_hw];
                            dbuf[c * n + ti * rows_hw..c * n + (ti + 1) * rows_hw].copy_from_slice(src);
                        }
                    }
                    gemm_nt_accum(co, n, k_rows, dbuf, bbuf, &mut dw);
                    for c in 0..co {
                        db[c] += dbuf[c * n..(c + 1) * n].iter().sum::<f64>();
                    }
                }
                (dw, db)
            },
        )
        .collect();

    let mut dw = Tensor::zeros(&[co, ci, KT, KS, KS]);
    let mut db = Tensor::zeros(&[co]);
    for (pw, pb) in partials {
        for (a, b) in dw.data.iter_mut().zip(&pw) {
            *a += b;
        }
        for (a, b) in db.data.iter_mut().zip(&pb) {
            *a += b;
        }
    }
    (dw, db)
}

/// Temporal 1-D convolution head: maps `(t, c)` features to one value per
/// frame with a kernel of 5 and replicated edges. `weight` shape `[c, k]`,
/// `bias` shape `[1]`.
pub fn conv1d_forward(input: &Volume, weight: &Tensor, bias: &Tensor) -> Vec<f64> {
    let (t, c) = (input.t, input.c);
    debug_assert_eq!(input.h * input.w, 1, "conv1d expects pooled features");
    let k = weight.shape[1];
    let half = k as isize / 2;
    let mut out = vec![0.0; t];
    for ti in 0..t {
        let mut acc = bias.data[0];
        for j in 0..k {
            let ts = (ti as isize + j as isize - half).clamp(0, t as isize - 1) as usize;
            let frame = &input.data[ts * c..(ts + 1) * c];
            let wrow = &weight.data[j..];
            for ci in 0..c {
                acc += wrow[ci * k] * frame[ci];
            }
        }
        out[ti] = acc;
    }
    out
}

/// Backward of [`conv1d_forward`]: input, weight and bias gradients.
pub fn conv1d_backward(
    input: &Volume,
    weight: &Tensor,
    dy: &[f64],
) -> (Volume, Tensor, Tensor) {
    let (t, c) = (input.t, input.c);
    let k = weight.shape[1];
    let half = k as isize / 2;
    let mut din = Volume::zeros(t, c, 1, 1);
    let mut dw = Tensor::zeros(&[c, k]);
    let mut db = Tensor::zeros(&[1]);
    for ti in 0..t {
        let g = dy[ti];
        db.data[0] += g;
        for j in 0..k {
            let ts = (ti as isize + j as isize - half).clamp(0, t as isize - 1) as usize;
            let frame = &input.data[ts * c..(ts + 1) * c];
            let dframe = &mut din.data[ts * c..(ts + 1) * c];
            for ci in 0..c {
                dw.data[ci * k + j] += g * frame[ci];
                dframe[ci] += g * weight.data[ci * k + j];
            }
        }
    }
    (din, dw, db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn rand_volume(t: usize, c: usize, h: usize, w: usize, seed: u64) -> Volume {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut v = Volume::zeros(t, c, h, w);
        for x in &mut v.data {
            *x = rng.gen_range(-1.0..1.0);
        }
        v
    }

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut t = Tensor::zeros(shape);
        for x in &mut t.data {
            *x = rng.gen_range(-0.5..0.5);
        }
        t
    }

    /// Direct 7-loop reference convolution.
    fn conv3d_reference(parts: &[&Volume], weight: &Tensor, bias: &Tensor) -> Volume {
        let (t, h, w) = (parts[0].t, parts[0].h, parts[0].w);
        let ci: usize = parts.iter().map(|p| p.c).sum();
        let co = bias.len();
        let mut out = Volume::zeros(t, co, h, w);
        let read = |c_glob: usize, ts: isize, y: isize, x: isize| -> f64 {
            if y < 0 || y >= h as isize || x < 0 || x >= w as isize {
                return 0.0;
            }
            let ts = ts.clamp(0, t as isize - 1) as usize;
            let mut c = c_glob;
            for p in parts {
                if c < p.c {
                    return p.plane(ts, c)[y as usize * w + x as usize];
                }
                c -= p.c;
            }
            unreachable!()
        };
        for ti in 0..t {
            for c_out in 0..co {
                for y in 0..h {
                    for x in 0..w {
                        let mut acc = bias.data[c_out];
                        for c_in in 0..ci {
                            for kt in 0..3 {
                                for ky in 0..3 {
                                    for kx in 0..3 {
                                        let widx = (((c_out * ci + c_in) * 3 + kt) * 3 + ky) * 3 + kx;
                                        acc += weight.data[widx]
                                            * read(
                                                c_in,
                                                ti as isize + kt as isize - 1,
                                                y as isize + ky as isize - 1,
                                                x as isize + kx as isize - 1,
                                            );
                                    }
                                }
                            }
                        }
                        out.plane_mut(ti, c_out)[y * w + x] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn forward_matches_reference() {
        let a = rand_volume(5, 2, 6, 7, 1);
        let b = rand_volume(5, 3, 6, 7, 2);
        let w = rand_tensor(&[4, 5, 3, 3, 3], 3);
        let bias = rand_tensor(&[4], 4);
        let fast = conv3d_forward(&[&a, &b], &w, &bias);
        let slow = conv3d_reference(&[&a, &b], &w, &bias);
        for (x, y) in fast.data.iter().zip(&slow.data) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn forward_matches_reference_large_plane() {
        // large enough that y-blocking kicks in
        let a = rand_volume(2, 1, 80, 80, 5);
        let w = rand_tensor(&[2, 1, 3, 3, 3], 6);
        let bias = rand_tensor(&[2], 7);
        let fast = conv3d_forward(&[&a], &w, &bias);
        let slow = conv3d_reference(&[&a], &w, &bias);
        for (x, y) in fast.data.iter().zip(&slow.data) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let t = 4;
        let (h, w) = (5, 6);
        let mut a = rand_volume(t, 2, h, w, 10);
        let b = rand_volume(t, 1, h, w, 11);
        let mut wt = rand_tensor(&[3, 3, 3, 3, 3], 12);
        let bias = rand_tensor(&[3], 13);
        // scalar objective: weighted sum of outputs
        let probe = rand_volume(t, 3, h, w, 14);
        let loss = |a: &Volume, wt: &Tensor| -> f64 {
            let out = conv3d_forward(&[a, &b], wt, &bias);
            out.data.iter().zip(&probe.data).map(|(o, p)| o * p).sum()
        };

        let grads_in = conv3d_input_grad(&probe, &wt, &[2, 1]);
        let (dw, db) = conv3d_param_grads(&[&a, &b], &probe);

        let h_step = 1e-6;
        for i in (0..a.data.len()).step_by(17) {
            let orig = a.data[i];
            a.data[i] = orig + h_step;
            let fp = loss(&a, &wt);
            a.data[i] = orig - h_step;
            let fm = loss(&a, &wt);
            a.data[i] = orig;
            let fd = (fp - fm) / (2.0 * h_step);
            let an = grads_in[0].data[i];
            assert!(
                (fd - an).abs() <= 1e-5 * fd.abs().max(an.abs()).max(1.0),
                "input grad {i}: fd {fd} analytic {an}"
            );
        }
        for i in (0..wt.data.len()).step_by(13) {
            let orig = wt.data[i];
            wt.data[i] = orig + h_step;
            let fp = loss(&a, &wt);
            wt.data[i] = orig - h_step;
            let fm = loss(&a, &wt);
            wt.data[i] = orig;
            let fd = (fp - fm) / (2.0 * h_step);
            let an = dw.data[i];
            assert!(
                (fd - an).abs() <= 1e-5 * fd.abs().max(an.abs()).max(1.0),
                "weight grad {i}: fd {fd} analytic {an}"
            );
        }
        // bias gradient is the plain sum of dout per channel
        for c in 0..3 {
            let expect: f64 = (0..t).map(|ti| probe.plane(ti, c).iter().sum::<f64>()).sum();
            assert!((db.data[c] - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn single_frame_replication() {
        // T = 1 exercises both temporal clamps at once
        let a = rand_volume(1, 2, 5, 5, 20);
        let w = rand_tensor(&[2, 2, 3, 3, 3], 21);
        let bias = rand_tensor(&[2], 22);
        let fast = conv3d_forward(&[&a], &w, &bias);
        let slow = conv3d_reference(&[&a], &w, &bias);
        for (x, y) in fast.data.iter().zip(&slow.data) {
            assert!((x - y).abs() < 1e-12);
        }
        // and the input gradient still matches finite differences
        let probe = rand_volume(1, 2, 5, 5, 23);
        let gin = conv3d_input_grad(&probe, &w, &[2]);
        let mut a2 = a.clone();
        let h_step = 1e-6;
        for i in 0..a2.data.len() {
            let orig = a2.data[i];
            a2.data[i] = orig + h_step;
            let fp: f64 = conv3d_forward(&[&a2], &w, &bias)
                .data
                .iter()
                .zip(&probe.data)
                .map(|(o, p)| o * p)
                .sum();
            a2.data[i] = orig - h_step;
            let fm: f64 = conv3d_forward(&[&a2], &w, &bias)
                .data
                .iter()
                .zip(&probe.data)
                .map(|(o, p)| o * p)
                .sum();
            a2.data[i] = orig;
            let fd = (fp - fm) / (2.0 * h_step);
            assert!((fd - gin[0].data[i]).abs() <= 1e-5 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn conv1d_gradients() {
        let g = rand_volume(12, 4, 1, 1, 30);
        let w = rand_tensor(&[4, 5], 31);
        let b = rand_tensor(&[1], 32);
        let probe: Vec<f64> = (0..12).map(|i| ((i * 7 % 5) as f64) - 2.0).collect();
        let loss = |g: &Volume, w: &Tensor, b: &Tensor| -> f64 {
            conv1d_forward(g, w, b).iter().zip(&probe).map(|(o, p)| o * p).sum()
        };
        let (din, dw, db) = conv1d_backward(&g, &w, &probe);
        let h_step = 1e-6;
        let mut g2 = g.clone();
        for i in 0..g2.data.len() {
            let orig = g2.data[i];
            g2.data[i] = orig + h_step;
            let fp = loss(&g2, &w, &b);
            g2.data[i] = orig - h_step;
            let fm = loss(&g2, &w, &b);
            g2.data[i] = orig;
            let fd = (fp - fm) / (2.0 * h_step);
            assert!((fd - din.data[i]).abs() <= 1e-6 * fd.abs().max(1.0) + 1e-9);
        }
        let mut w2 = w.clone();
        for i in 0..w2.data.len() {
            let orig = w2.data[i];
            w2.data[i] = orig + h_step;
            let fp = loss(&g, &w2, &b);
            w2.data[i] = orig - h_step;
            let fm = loss(&g, &w2, &b);
            w2.data[i] = orig;
            let fd = (fp - fm) / (2.0 * h_step);
            assert!((fd - dw.data[i]).abs() <= 1e-6 * fd.abs().max(1.0) + 1e-9);
        }
        let fdb = probe.iter().sum::<f64>();
        assert!((db.data[0] - fdb).abs() < 1e-12);
    }

    #[test]
    fn forward_is_repeatable() {
        let a = rand_volume(6, 3, 16, 16, 40);
        let w = rand_tensor(&[4, 3, 3, 3, 3], 41);
        let b = rand_tensor(&[4], 42);
        let o1 = conv3d_forward(&[&a], &w, &b);
        let o2 = conv3d_forward(&[&a], &w, &b);
        assert_eq!(o1.data, o2.data, "conv forward must be bit-deterministic");
    }
}
