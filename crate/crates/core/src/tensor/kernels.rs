//! Direct-loop 3D kernels over x-fastest channel blocks.
//!
//! Every 5D tensor `(batch, channel, x, y, z)` stores each `(batch, channel)`
//! block as a contiguous x-fastest volume. Convolutions are written as
//! shift-and-add passes over whole rows so the inner loop is a contiguous
//! axpy. Parallelism is over output channels only, and every output element
//! is accumulated in the same fixed order regardless of thread count.

use rayon::prelude::*;

pub(crate) type Dims = [usize; 3];

pub(crate) fn volume(d: Dims) -> usize {
    d[0] * d[1] * d[2]
}

/// `dst[p] += w * src[p + shift]` for every `p` in `dst` whose shifted
/// position lies inside `src`.
pub(crate) fn shift_add(dst: &mut [f64], dd: Dims, src: &[f64], sd: Dims, w: f64, shift: [isize; 3]) {
    let (x_lo, x_hi) = overlap(dd[0], sd[0], shift[0]);
    if x_lo >= x_hi {
        return;
    }
    for z in 0..dd[2] {
        let sz = z as isize + shift[2];
        if sz < 0 || sz >= sd[2] as isize {
            continue;
        }
        for y in 0..dd[1] {
            let sy = y as isize + shift[1];
            if sy < 0 || sy >= sd[1] as isize {
                continue;
            }
            let drow = (z * dd[1] + y) * dd[0];
            let srow = (sz as usize * sd[1] + sy as usize) * sd[0];
            let sx = (x_lo as isize + shift[0]) as usize;
            let d = &mut dst[drow + x_lo..drow + x_hi];
            let s = &src[srow + sx..srow + sx + (x_hi - x_lo)];
            for (a, b) in d.iter_mut().zip(s) {
                *a += w * b;
            }
        }
    }
}

/// `Σ_p a[p] * b[p + shift]` over positions valid in both.
pub(crate) fn shift_dot(a: &[f64], ad: Dims, b: &[f64], bd: Dims, shift: [isize; 3]) -> f64 {
    let (x_lo, x_hi) = overlap(ad[0], bd[0], shift[0]);
    if x_lo >= x_hi {
        return 0.0;
    }
    let mut total = 0.0;
    for z in 0..ad[2] {
        let bz = z as isize + shift[2];
        if bz < 0 || bz >= bd[2] as isize {
            continue;
        }
        for y in 0..ad[1] {
            let by = y as isize + shift[1];
            if by < 0 || by >= bd[1] as isize {
                continue;
            }
            let arow = (z * ad[1] + y) * ad[0];
            let brow = (bz as usize * bd[1] + by as usize) * bd[0];
            let bx = (x_lo as isize + shift[0]) as usize;
            let ra = &a[arow + x_lo..arow + x_hi];
            let rb = &b[brow + bx..brow + bx + (x_hi - x_lo)];
            total += ra.iter().zip(rb).map(|(p, q)| p * q).sum::<f64>();
        }
    }
    total
}

/// Range of destination x such that `x + shift` lies in `[0, src_len)`.
fn overlap(dst_len: usize, src_len: usize, shift: isize) -> (usize, usize) {
    let lo = (-shift).max(0) as usize;
    let hi = (src_len as isize - shift).clamp(0, dst_len as isize) as usize;
    (lo.min(dst_len), hi)
}

fn kernel_shift(kx: usize, ky: usize, kz: usize, pad: usize) -> [isize; 3] {
    [
        kx as isize - pad as isize,
        ky as isize - pad as isize,
        kz as isize - pad as isize,
    ]
}

fn neg(s: [isize; 3]) -> [isize; 3] {
    [-s[0], -s[1], -s[2]]
}

/// Geometry of a stride-1 cubic-kernel convolution.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub pad: usize,
    pub in_dims: Dims,
    pub out_dims: Dims,
}

impl ConvGeom {
    fn taps(&self) -> usize {
        self.k * self.k * self.k
    }

    fn for_each_tap(&self, mut f: impl FnMut(usize, [isize; 3])) {
        let k = self.k;
        for kz in 0..k {
            for ky in 0..k {
                for kx in 0..k {
                    f(kx + k * (ky + k * kz), kernel_shift(kx, ky, kz, self.pad));
                }
            }
        }
    }
}

pub(crate) fn conv_forward(g: &ConvGeom, input: &[f64], weight: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let iv = volume(g.in_dims);
    let ov = volume(g.out_dims);
    let taps = g.taps();
    let mut out = vec![0.0; g.batch * g.cout * ov];
    out.par_chunks_mut(ov).enumerate().for_each(|(bc, dst)| {
        let (b, co) = (bc / g.cout, bc % g.cout);
        if let Some(bias) = bias {
            dst.fill(bias[co]);
        }
        for ci in 0..g.cin {
            let src = &input[(b * g.cin + ci) * iv..][..iv];
            let wbase = (co * g.cin + ci) * taps;
            g.for_each_tap(|t, s| shift_add(dst, g.out_dims, src, g.in_dims, weight[wbase + t], s));
        }
    });
    out
}

pub(crate) fn conv_backward_input(g: &ConvGeom, grad_out: &[f64], weight: &[f64]) -> Vec<f64> {
    let iv = volume(g.in_dims);
    let ov = volume(g.out_dims);
    let taps = g.taps();
    let mut gin = vec![0.0; g.batch * g.cin * iv];
    gin.par_chunks_mut(iv).enumerate().for_each(|(bc, dst)| {
        let (b, ci) = (bc / g.cin, bc % g.cin);
        for co in 0..g.cout {
            let src = &grad_out[(b * g.cout + co) * ov..][..ov];
            let wbase = (co * g.cin + ci) * taps;
            g.for_each_tap(|t, s| shift_add(dst, g.in_dims, src, g.out_dims, weight[wbase + t], neg(s)));
        }
    });
    gin
}

pub(crate) fn conv_backward_weight(g: &ConvGeom, grad_out: &[f64], input: &[f64]) -> Vec<f64> {
    let iv = volume(g.in_dims);
    let ov = volume(g.out_dims);
    let taps = g.taps();
    let mut gw = vec![0.0; g.cout * g.cin * taps];
    gw.par_chunks_mut(g.cin * taps).enumerate().for_each(|(co, dst)| {
        for b in 0..g.batch {
            let go = &grad_out[(b * g.cout + co) * ov..][..ov];
            for ci in 0..g.cin {
                let src = &input[(b * g.cin + ci) * iv..][..iv];
                g.for_each_tap(|t, s| {
                    dst[ci * taps + t] += shift_dot(go, g.out_dims, src, g.in_dims, s);
                });
            }
        }
    });
    gw
}

/// Per-channel sums of `grad_out`, i.e. the bias gradient.
pub(crate) fn channel_sums(grad_out: &[f64], batch: usize, channels: usize, vol: usize) -> Vec<f64> {
    let mut out = vec![0.0; channels];
    for b in 0..batch {
        for (c, o) in out.iter_mut().enumerate() {
            *o += grad_out[(b * channels + c) * vol..][..vol].iter().sum::<f64>();
        }
    }
    out
}

/// Depthwise convolution: channel `c` of the output is channel `c` of the
/// input convolved with its own kernel `weight[c]`.
pub(crate) fn depthwise_forward(g: &ConvGeom, input: &[f64], weight: &[f64]) -> Vec<f64> {
    let iv = volume(g.in_dims);
    let ov = volume(g.out_dims);
    let taps = g.taps();
    let mut out = vec![0.0; g.batch * g.cin * ov];
    out.par_chunks_mut(ov).enumerate().for_each(|(bc, dst)| {
        let c = bc % g.cin;
        let src = &input[bc * iv..][..iv];
        g.for_each_tap(|t, s| shift_add(dst, g.out_dims, src, g.in_dims, weight[c * taps + t], s));
    });
    out
}

pub(crate) fn depthwise_backward_input(g: &ConvGeom, grad_out: &[f64], weight: &[f64]) -> Vec<f64> {
    let iv = volume(g.in_dims);
    let ov = volume(g.out_dims);
    let taps = g.taps();
    let mut gin = vec![0.0; g.batch * g.cin * iv];
    gin.par_chunks_mut(iv).enumerate().for_each(|(bc, dst)| {
        let c = bc % g.cin;
        let src = &grad_out[bc * ov..][..ov];
        g.for_each_tap(|t, s| shift_add(dst, g.in_dims, src, g.out_dims, weight[c * taps + t], neg(s)));
    });
    gin
}

pub(crate) fn depthwise_backward_weight(g: &ConvGeom, grad_out: &[f64], input: &[f64]) -> Vec<f64> {
    let iv = volume(g.in_dims);
    let ov = volume(g.out_dims);
    let taps = g.taps();
    let mut gw = vec![0.0; g.cin * taps];
    gw.par_chunks_mut(taps).enumerate().for_each(|(c, dst)| {
        for b in 0..g.batch {
            let bc = b * g.cin + c;
            let go = &grad_out[bc * ov..][..ov];
            let src = &input[bc * iv..][..iv];
            g.for_each_tap(|t, s| dst[t] += shift_dot(go, g.out_dims, src, g.in_dims, s));
        }
    });
    gw
}

/// Geometry of a kernel-2, stride-2 transposed convolution.
#[derive(Debug, Clone, Copy)]
pub(crate) struct UpGeom {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub in_dims: Dims,
}

impl UpGeom {
    pub fn out_dims(&self) -> Dims {
        [self.in_dims[0] * 2, self.in_dims[1] * 2, self.in_dims[2] * 2]
    }

    /// Calls `f(input_index, output_index)` for every input voxel and the
    /// output voxel it feeds through kernel tap `(a, b, c)`.
    fn for_each_site(&self, a: usize, b: usize, c: usize, mut f: impl FnMut(usize, usize)) {
        let [nx, ny, nz] = self.in_dims;
        let [ox, oy, _] = self.out_dims();
        for z in 0..nz {
            for y in 0..ny {
                let irow = (z * ny + y) * nx;
                let orow = ((2 * z + c) * oy + 2 * y + b) * ox + a;
                for x in 0..nx {
                    f(irow + x, orow + 2 * x);
                }
            }
        }
    }
}

const UP_TAPS: usize = 8;

fn up_tap(t: usize) -> (usize, usize, usize) {
    (t & 1, (t >> 1) & 1, (t >> 2) & 1)
}

/// Weight layout `[cin, cout, 2, 2, 2]`.
pub(crate) fn up_forward(g: &UpGeom, input: &[f64], weight: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let iv = volume(g.in_dims);
    let ov = iv * 8;
    let mut out = vec![0.0; g.batch * g.cout * ov];
    out.par_chunks_mut(ov).enumerate().for_each(|(bc, dst)| {
        let (b, co) = (bc / g.cout, bc % g.cout);
        if let Some(bias) = bias {
            dst.fill(bias[co]);
        }
        for ci in 0..g.cin {
            let src = &input[(b * g.cin + ci) * iv..][..iv];
            for t in 0..UP_TAPS {
                let w = weight[(ci * g.cout + co) * UP_TAPS + t];
                let (a, bb, c) = up_tap(t);
                g.for_each_site(a, bb, c, |i, o| dst[o] += w * src[i]);
            }
        }
    });
    out
}

pub(crate) fn up_backward_input(g: &UpGeom, grad_out: &[f64], weight: &[f64]) -> Vec<f64> {
    let iv = volume(g.in_dims);
    let ov = iv * 8;
    let mut gin = vec![0.0; g.batch * g.cin * iv];
    gin.par_chunks_mut(iv).enumerate().for_each(|(bc, dst)| {
        let (b, ci) = (bc / g.cin, bc % g.cin);
        for co in 0..g.cout {
            let go = &grad_out[(b * g.cout + co) * ov..][..ov];
            for t in 0..UP_TAPS {
                let w = weight[(ci * g.cout + co) * UP_TAPS + t];
                let (a, bb, c) = up_tap(t);
                g.for_each_site(a, bb, c, |i, o| dst[i] += w * go[o]);
            }
        }
    });
    gin
}

pub(crate) fn up_backward_weight(g: &UpGeom, grad_out: &[f64], input: &[f64]) -> Vec<f64> {
    let iv = volume(g.in_dims);
    let ov = iv * 8;
    let mut gw = vec![0.0; g.cin * g.cout * UP_TAPS];
    gw.par_chunks_mut(g.cout * UP_TAPS).enumerate().for_each(|(ci, dst)| {
        for b in 0..g.batch {
            let src = &input[(b * g.cin + ci) * iv..][..iv];
            for co in 0..g.cout {
                let go = &grad_out[(b * g.cout + co) * ov..][..ov];
                for t in 0..UP_TAPS {
                    let (a, bb, c) = up_tap(t);
                    let mut acc = 0.0;
                    g.for_each_site(a, bb, c, |i, o| acc += src[i] * go[o]);
                    dst[co * UP_TAPS + t] += acc;
                }
            }
        }
    });
    gw
}

/// 2×2×2 max pooling with stride 2. Returns the pooled values and, for each
/// output element, the flat index of the winning input element. Ties go to
/// the lowest linear index.
pub(crate) fn maxpool_forward(input: &[f64], blocks: usize, in_dims: Dims) -> (Vec<f64>, Vec<usize>) {
    let [nx, ny, nz] = in_dims;
    let od = [nx / 2, ny / 2, nz / 2];
    let iv = volume(in_dims);
    let ov = volume(od);
    let mut out = Vec::with_capacity(blocks * ov);
    let mut arg = Vec::with_capacity(blocks * ov);
    for blk in 0..blocks {
        let base = blk * iv;
        for z in 0..od[2] {
            for y in 0..od[1] {
                for x in 0..od[0] {
                    let mut best_i = usize::MAX;
                    let mut best = f64::NEG_INFINITY;
                    for dz in 0..2 {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let i = base + (2 * x + dx) + nx * ((2 * y + dy) + ny * (2 * z + dz));
                                let v = input[i];
                                if best_i == usize::MAX || v > best {
                                    best = v;
                                    best_i = i;
                                }
                            }
                        }
                    }
                    out.push(best);
                    arg.push(best_i);
                }
            }
        }
    }
    (out, arg)
}
