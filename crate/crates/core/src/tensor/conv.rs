//! 3D/2D cross-correlation, its adjoint (transposed convolution) and their
//! gradients.
//!
//! All three kernels share one geometry and work on widened `f64` buffers.
//! Work is split over output rows and blocks of four channels; every output
//! element is accumulated sequentially in a fixed tap order, so results do
//! not depend on the number of rayon workers.

use std::ops::Range;

use rayon::prelude::*;

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const AXES: [&str; 3] = ["time", "height", "width"];

/// Geometry of a 3D convolution. For [`conv_transpose3d`] the channel counts
/// describe the transposed op itself (its input and output channels).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl ConvSpec {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Result<Self> {
        let spec = ConvSpec {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Stride 1 with `kernel / 2` zero padding, which preserves extents for odd kernels.
    pub fn same(in_channels: usize, out_channels: usize, kernel: [usize; 3]) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel,
            stride: [1; 3],
            padding: kernel.map(|k| k / 2),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("channel counts must be at least 1".into()));
        }
        if self.kernel.contains(&0) || self.stride.contains(&0) {
            return Err(Error::Config(format!(
                "kernel {:?} and stride {:?} must be at least 1",
                self.kernel, self.stride
            )));
        }
        Ok(())
    }

    /// `[out, in, t, h, w]`.
    pub fn weight_shape(&self) -> [usize; 5] {
        let [t, h, w] = self.kernel;
        [self.out_channels, self.in_channels, t, h, w]
    }

    /// `[in, out, t, h, w]`: the weight of the conv3d this op is the adjoint of.
    pub fn transposed_weight_shape(&self) -> [usize; 5] {
        let [t, h, w] = self.kernel;
        [self.in_channels, self.out_channels, t, h, w]
    }

    pub fn output_extents(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for axis in 0..3 {
            let padded = (input[axis] + 2 * self.padding[axis]) as i64;
            let k = self.kernel[axis] as i64;
            if padded < k {
                return Err(Error::Degenerate {
                    op: "conv3d",
                    axis: AXES[axis],
                    extent: (padded - k).div_euclid(self.stride[axis] as i64) + 1,
                });
            }
            out[axis] = ((padded - k) / self.stride[axis] as i64 + 1) as usize;
        }
        Ok(out)
    }

    pub fn transposed_output_extents(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for axis in 0..3 {
            let extent = (input[axis] as i64 - 1) * self.stride[axis] as i64
                - 2 * self.padding[axis] as i64
                + self.kernel[axis] as i64;
            if extent < 1 {
                return Err(Error::Degenerate {
                    op: "conv_transpose3d",
                    axis: AXES[axis],
                    extent,
                });
            }
            out[axis] = extent as usize;
        }
        Ok(out)
    }
}

/// 2D counterpart of [`ConvSpec`]; runs through the 3D kernels with a unit
/// temporal axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 2],
    pub stride: [usize; 2],
    pub padding: [usize; 2],
}

impl Conv2dSpec {
    pub fn same(in_channels: usize, out_channels: usize, kernel: [usize; 2]) -> Self {
        Conv2dSpec {
            in_channels,
            out_channels,
            kernel,
            stride: [1; 2],
            padding: kernel.map(|k| k / 2),
        }
    }

    pub fn to_3d(&self) -> ConvSpec {
        ConvSpec {
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            kernel: [1, self.kernel[0], self.kernel[1]],
            stride: [1, self.stride[0], self.stride[1]],
            padding: [0, self.padding[0], self.padding[1]],
        }
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels,
            self.kernel[0],
            self.kernel[1],
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Forward-direction geometry: `x` is the conv input, `y` the conv output,
/// `w` is `[co, ci, k0, k1, k2]`.
#[derive(Debug, Clone, Copy)]
struct Geometry {
    batch: usize,
    ci: usize,
    co: usize,
    x: [usize; 3],
    y: [usize; 3],
    k: [usize; 3],
    s: [usize; 3],
    p: [usize; 3],
}

impl Geometry {
    fn x_plane(&self) -> usize {
        self.x.iter().product()
    }

    fn y_plane(&self) -> usize {
        self.y.iter().product()
    }

    fn taps(&self) -> usize {
        self.k.iter().product()
    }

    /// Output positions `o` along `axis` for which tap `tap` reads inside the input.
    fn tap_range(&self, axis: usize, tap: usize) -> Range<usize> {
        let (s, p, in_len, out_len) = (self.s[axis], self.p[axis], self.x[axis], self.y[axis]);
        let lo = if tap >= p { 0 } else { (p - tap).div_ceil(s) };
        if in_len - 1 + p < tap {
            return 0..0;
        }
        let hi = ((in_len - 1 + p - tap) / s + 1).min(out_len);
        lo..hi.max(lo)
    }

    fn tap_ranges(&self) -> [Vec<Range<usize>>; 3] {
        [0, 1, 2].map(|axis| (0..self.k[axis]).map(|t| self.tap_range(axis, t)).collect())
    }
}

/// Channels processed together by the kernels below.
const LANES: usize = 4;

/// Input index `o * s + tap - p` along one axis, if it lands inside `0..len`.
fn tap_source(o: usize, tap: usize, s: usize, p: usize, len: usize) -> Option<usize> {
    let i = (o * s + tap).checked_sub(p)?;
    (i < len).then_some(i)
}

/// Inverse of [`tap_source`]: the `o` whose tap `tap` reads input index `i`.
fn tap_target(i: usize, tap: usize, s: usize, p: usize, len: usize) -> Option<usize> {
    let shifted = (i + p).checked_sub(tap)?;
    (shifted % s == 0 && shifted / s < len).then(|| shifted / s)
}

/// Rows of `[batch, channels, t, h, w]` regrouped as
/// `[batch, ceil(channels / lanes), t * h, phase, j, lane]`, where element `w`
/// of a row sits at phase `w % s`, index `w / s`. Missing channels are zero.
struct Packed {
    data: Vec<f64>,
    lanes: usize,
    blocks: usize,
    rows: usize,
    /// Elements per phase.
    wq: usize,
    s: usize,
}

impl Packed {
    fn new(src: &[f64], batch: usize, channels: usize, ext: [usize; 3], s: usize, lanes: usize) -> Self {
        let blocks = channels.div_ceil(lanes);
        let rows = ext[0] * ext[1];
        let wq = ext[2].div_ceil(s);
        let mut data = vec![0.0; batch * blocks * rows * s * wq * lanes];
        for b in 0..batch {
            for c in 0..channels {
                let (blk, lane) = (c / lanes, c % lanes);
                let plane = &src[(b * channels + c) * rows * ext[2]..][..rows * ext[2]];
                let dst_plane = (b * blocks + blk) * rows;
                for (row, line) in plane.chunks_exact(ext[2]).enumerate() {
                    let base = (dst_plane + row) * s * wq;
                    for (w, &v) in line.iter().enumerate() {
                        data[(base + (w % s) * wq + w / s) * lanes + lane] = v;
                    }
                }
            }
        }
        Packed {
            data,
            lanes,
            blocks,
            rows,
            wq,
            s,
        }
    }

    fn row_len(&self) -> usize {
        self.s * self.wq * self.lanes
    }

    fn row(&self, b: usize, blk: usize, row: usize) -> &[f64] {
        let len = self.row_len();
        &self.data[((b * self.blocks + blk) * self.rows + row) * len..][..len]
    }

    /// Position within a row, in lane groups, of the input read by output
    /// `start` under tap `tap`; later outputs read the following positions.
    fn tap_offset(&self, start: usize, tap: usize, p: usize) -> usize {
        let r = tap as isize - p as isize;
        let s = self.s as isize;
        (r.rem_euclid(s) * self.wq as isize + start as isize + r.div_euclid(s)) as usize
    }
}

/// `[co, ci, taps]` weights as `[ceil(outer / LANES), inner, taps, LANES]`,
/// blocked over `co` (`by_out`) or over `ci`.
fn pack_weights(w: &[f64], co: usize, ci: usize, taps: usize, by_out: bool) -> Vec<f64> {
    let (outer, inner) = if by_out { (co, ci) } else { (ci, co) };
    let mut out = vec![0.0; outer.div_ceil(LANES) * inner * taps * LANES];
    for oc in 0..co {
        for ic in 0..ci {
            let (o, i) = if by_out { (oc, ic) } else { (ic, oc) };
            for tap in 0..taps {
                out[(((o / LANES) * inner + i) * taps + tap) * LANES + o % LANES] = w[(oc * ci + ic) * taps + tap];
            }
        }
    }
    out
}

/// Defines `$name` as `$body`, compiled a second time with AVX2 enabled and
/// picked at run time. Floating-point results are identical either way.
macro_rules! dispatched {
    ($(#[$meta:meta])* fn $name:ident($($arg:ident: $ty:ty),*) $body:block) => {
        $(#[$meta])*
        fn $name($($arg: $ty),*) {
            #[inline(always)]
            fn imp($($arg: $ty),*) $body

            #[cfg(target_arch = "x86_64")]
            {
                #[target_feature(enable = "avx2")]
                unsafe fn wide($($arg: $ty),*) {
                    imp($($arg),*)
                }
                if std::arch::is_x86_feature_detected!("avx2") {
                    // SAFETY: the CPU supports the enabled feature.
                    return unsafe { wide($($arg),*) };
                }
            }
            imp($($arg),*)
        }
    };
}

dispatched! {
    /// `dst[j][l] += w[l] * src[j]` for lane groups `j`.
    fn axpy_lanes(dst: &mut [f64], w: &[f64; LANES], src: &[f64]) {
        for (d, &v) in dst.chunks_exact_mut(LANES).zip(src) {
            for l in 0..LANES {
                d[l] += w[l] * v;
            }
        }
    }
}

dispatched! {
    /// `sums[a][l] += u[j][a] * v[j][l]`, sequentially in `j`.
    fn outer_lanes(sums: &mut [[f64; LANES]; LANES], us: &[f64], vs: &[f64]) {
        for (u, v) in us.chunks_exact(LANES).zip(vs.chunks_exact(LANES)) {
            for (sum, &ua) in sums.iter_mut().zip(u) {
                for l in 0..LANES {
                    sum[l] += ua * v[l];
                }
            }
        }
    }
}

/// `y[b, oc] = sum_{ic, taps} w[oc, ic, tap] * x[b, ic, o*s + tap - p]`.
fn correlate(x: &[f64], w: &[f64], g: &Geometry) -> Vec<f64> {
    let taps = g.taps();
    let ranges = g.tap_ranges();
    let xp = Packed::new(x, g.batch, g.ci, g.x, g.s[2], 1);
    let wp = pack_weights(w, g.co, g.ci, taps, true);
    let blocks = g.co.div_ceil(LANES);
    let row = g.y[2] * LANES;
    let chunks: Vec<Vec<f64>> = (0..g.batch * blocks * g.y[0])
        .into_par_iter()
        .map(|task| {
            let (b, blk, ot) = (task / (blocks * g.y[0]), task / g.y[0] % blocks, task % g.y[0]);
            let mut acc = vec![0.0; g.y[1] * row];
            for (oh, arow) in acc.chunks_exact_mut(row).enumerate() {
                for ic in 0..g.ci {
                    let wb = &wp[(blk * g.ci + ic) * taps * LANES..][..taps * LANES];
                    for kt in 0..g.k[0] {
                        let Some(it) = tap_source(ot, kt, g.s[0], g.p[0], g.x[0]) else { continue };
                        for kh in 0..g.k[1] {
                            let Some(ih) = tap_source(oh, kh, g.s[1], g.p[1], g.x[1]) else { continue };
                            let xrow = xp.row(b, ic, it * g.x[1] + ih);
                            for kw in 0..g.k[2] {
                                let rw = ranges[2][kw].clone();
                                if rw.is_empty() {
                                    continue;
                                }
                                let wv = wb[((kt * g.k[1] + kh) * g.k[2] + kw) * LANES..][..LANES].try_into().unwrap();
                                let src = &xrow[xp.tap_offset(rw.start, kw, g.p[2])..][..rw.len()];
                                axpy_lanes(&mut arow[rw.start * LANES..rw.end * LANES], wv, src);
                            }
                        }
                    }
                }
            }
            acc
        })
        .collect();

    let (ys, rows) = (g.y_plane(), g.y[1] * g.y[2]);
    let mut out = vec![0.0; g.batch * g.co * ys];
    for (task, acc) in chunks.iter().enumerate() {
        let (b, blk, ot) = (task / (blocks * g.y[0]), task / g.y[0] % blocks, task % g.y[0]);
        for lane in 0..LANES.min(g.co - blk * LANES) {
            let oc = blk * LANES + lane;
            let dst = &mut out[(b * g.co + oc) * ys + ot * rows..][..rows];
            for (d, src) in dst.iter_mut().zip(acc.chunks_exact(LANES)) {
                *d = src[lane];
            }
        }
    }
    out
}

/// Adjoint of [`correlate`]: scatters `y`-shaped data back onto `x`.
fn correlate_adjoint(y: &[f64], w: &[f64], g: &Geometry) -> Vec<f64> {
    let taps = g.taps();
    let ranges = g.tap_ranges();
    let wp = pack_weights(w, g.co, g.ci, taps, false);
    let blocks = g.ci.div_ceil(LANES);
    let (s, wq) = (g.s[2], g.x[2].div_ceil(g.s[2]));
    let offset = |start: usize, kw: usize| {
        let r = kw as isize - g.p[2] as isize;
        (r.rem_euclid(s as isize) * wq as isize + start as isize + r.div_euclid(s as isize)) as usize
    };
    let row = s * wq * LANES;
    let ys = g.y_plane();
    let chunks: Vec<Vec<f64>> = (0..g.batch * blocks * g.x[0])
        .into_par_iter()
        .map(|task| {
            let (b, blk, it) = (task / (blocks * g.x[0]), task / g.x[0] % blocks, task % g.x[0]);
            let mut acc = vec![0.0; g.x[1] * row];
            for (ih, arow) in acc.chunks_exact_mut(row).enumerate() {
                for oc in 0..g.co {
                    let yb = &y[(b * g.co + oc) * ys..][..ys];
                    let wb = &wp[(blk * g.co + oc) * taps * LANES..][..taps * LANES];
                    for kt in 0..g.k[0] {
                        let Some(ot) = tap_target(it, kt, g.s[0], g.p[0], g.y[0]) else { continue };
                        for kh in 0..g.k[1] {
                            let Some(oh) = tap_target(ih, kh, g.s[1], g.p[1], g.y[1]) else { continue };
                            let yrow = &yb[(ot * g.y[1] + oh) * g.y[2]..][..g.y[2]];
                            for kw in 0..g.k[2] {
                                let rw = ranges[2][kw].clone();
                                if rw.is_empty() {
                                    continue;
                                }
                                let wv = wb[((kt * g.k[1] + kh) * g.k[2] + kw) * LANES..][..LANES].try_into().unwrap();
                                axpy_lanes(&mut arow[offset(rw.start, kw) * LANES..][..rw.len() * LANES], wv, &yrow[rw]);
                            }
                        }
                    }
                }
            }
            acc
        })
        .collect();

    let xs = g.x_plane();
    let mut out = vec![0.0; g.batch * g.ci * xs];
    for (task, acc) in chunks.iter().enumerate() {
        let (b, blk, it) = (task / (blocks * g.x[0]), task / g.x[0] % blocks, task % g.x[0]);
        for lane in 0..LANES.min(g.ci - blk * LANES) {
            let ic = blk * LANES + lane;
            let plane = &mut out[(b * g.ci + ic) * xs + it * g.x[1] * g.x[2]..][..g.x[1] * g.x[2]];
            for (ih, line) in plane.chunks_exact_mut(g.x[2]).enumerate() {
                let src = &acc[ih * row..][..row];
                for (xw, d) in line.iter_mut().enumerate() {
                    *d = src[((xw % s) * wq + xw / s) * LANES + lane];
                }
            }
        }
    }
    out
}

/// `dw[oc, ic, tap] = sum_{b, o} dy[b, oc, o] * x[b, ic, o*s + tap - p]`.
fn weight_gradient(dy: &[f64], x: &[f64], g: &Geometry) -> Vec<f64> {
    let taps = g.taps();
    let ranges = g.tap_ranges();
    let yp = Packed::new(dy, g.batch, g.co, g.y, 1, LANES);
    let xp = Packed::new(x, g.batch, g.ci, g.x, g.s[2], LANES);
    let tiles: Vec<Vec<[[f64; LANES]; LANES]>> = (0..yp.blocks * xp.blocks)
        .into_par_iter()
        .map(|task| {
            let (ob, ib) = (task / xp.blocks, task % xp.blocks);
            let mut tile = vec![[[0.0; LANES]; LANES]; taps];
            for kt in 0..g.k[0] {
                for kh in 0..g.k[1] {
                    for kw in 0..g.k[2] {
                        let rw = ranges[2][kw].clone();
                        let mut sums = [[0.0; LANES]; LANES];
                        if !rw.is_empty() {
                            for b in 0..g.batch {
                                for ot in ranges[0][kt].clone() {
                                    let it = ot * g.s[0] + kt - g.p[0];
                                    for oh in ranges[1][kh].clone() {
                                        let ih = oh * g.s[1] + kh - g.p[1];
                                        let yrow = yp.row(b, ob, ot * g.y[1] + oh);
                                        let xrow = xp.row(b, ib, it * g.x[1] + ih);
                                        let us = &yrow[rw.start * LANES..rw.end * LANES];
                                        let vs = &xrow[xp.tap_offset(rw.start, kw, g.p[2]) * LANES..][..rw.len() * LANES];
                                        outer_lanes(&mut sums, us, vs);
                                    }
                                }
                            }
                        }
                        tile[(kt * g.k[1] + kh) * g.k[2] + kw] = sums;
                    }
                }
            }
            tile
        })
        .collect();

    let mut out = vec![0.0; g.co * g.ci * taps];
    for oc in 0..g.co {
        for ic in 0..g.ci {
            let tile = &tiles[(oc / LANES) * xp.blocks + ic / LANES];
            for (tap, sums) in tile.iter().enumerate() {
                out[(oc * g.ci + ic) * taps + tap] = sums[oc % LANES][ic % LANES];
            }
        }
    }
    out
}

fn add_bias(out: &mut [f64], bias: &[f64], planes: usize) {
    let channels = bias.len();
    out.chunks_mut(planes)
        .enumerate()
        .for_each(|(idx, plane)| {
            let b = bias[idx % channels];
            plane.iter_mut().for_each(|v| *v += b);
        });
}

fn channel_sums(data: &[f64], batch: usize, channels: usize, plane: usize) -> Vec<f64> {
    let mut sums = vec![0.0; channels];
    for b in 0..batch {
        for (c, sum) in sums.iter_mut().enumerate() {
            *sum += data[(b * channels + c) * plane..][..plane].iter().sum::<f64>();
        }
    }
    sums
}

fn check_extent(op: &'static str, axis: &str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::Shape {
            op,
            axis: axis.to_string(),
            expected,
            actual,
        });
    }
    Ok(())
}

fn check_dims(op: &'static str, what: &str, names: &[&str], expected: &[usize], actual: &[usize]) -> Result<()> {
    if expected.len() != actual.len() {
        return Err(Error::Rank {
            op,
            expected: expected.len(),
            actual: actual.len(),
        });
    }
    for ((name, &e), &a) in names.iter().zip(expected).zip(actual) {
        check_extent(op, &format!("{what}.{name}"), e, a)?;
    }
    Ok(())
}

const WEIGHT_AXES_5: [&str; 5] = ["dim0", "dim1", "kernel_t", "kernel_h", "kernel_w"];
const WEIGHT_AXES_4: [&str; 4] = ["out_channels", "in_channels", "kernel_h", "kernel_w"];

/// Validated forward geometry of `conv3d` for `input` (rank 5) or its 2D
/// form (rank 4, unit time axis).
fn forward_geometry<T: Scalar>(
    op: &'static str,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    spec: &ConvSpec,
    rank: usize,
) -> Result<Geometry> {
    spec.validate()?;
    input.expect_rank(rank, op)?;
    let shape = input.shape();
    check_extent(op, "input.channels", spec.in_channels, shape[1])?;
    let x = if rank == 5 {
        [shape[2], shape[3], shape[4]]
    } else {
        [1, shape[2], shape[3]]
    };
    if rank == 5 {
        let mut names = WEIGHT_AXES_5;
        names[0] = "out_channels";
        names[1] = "in_channels";
        check_dims(op, "weight", &names, &spec.weight_shape(), weight.shape())?;
    } else {
        let ws = spec.weight_shape();
        check_dims(op, "weight", &WEIGHT_AXES_4, &[ws[0], ws[1], ws[3], ws[4]], weight.shape())?;
    }
    let y = spec.output_extents(x).map_err(|e| rename_op(e, op))?;
    Ok(Geometry {
        batch: shape[0],
        ci: spec.in_channels,
        co: spec.out_channels,
        x,
        y,
        k: spec.kernel,
        s: spec.stride,
        p: spec.padding,
    })
}

fn rename_op(err: Error, op: &'static str) -> Error {
    match err {
        Error::Degenerate { axis, extent, .. } => Error::Degenerate { op, axis, extent },
        other => other,
    }
}

fn output_shape(g: &Geometry, channels: usize, extents: [usize; 3], rank: usize) -> Vec<usize> {
    if rank == 5 {
        vec![g.batch, channels, extents[0], extents[1], extents[2]]
    } else {
        vec![g.batch, channels, extents[1], extents[2]]
    }
}

fn check_bias<T: Scalar>(op: &'static str, bias: &Tensor<T>, channels: usize) -> Result<()> {
    check_dims(op, "bias", &["channels"], &[channels], bias.shape())
}

fn conv_forward_impl<T: Scalar>(
    op: &'static str,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvSpec,
    rank: usize,
) -> Result<Tensor<T>> {
    let g = forward_geometry(op, input, weight, spec, rank)?;
    check_bias(op, bias, spec.out_channels)?;
    let mut out = correlate(&input.widened(), &weight.widened(), &g);
    add_bias(&mut out, &bias.widened(), g.y_plane());
    Ok(Tensor::from_wide(output_shape(&g, g.co, g.y, rank), out))
}

fn conv_backward_impl<T: Scalar>(
    op: &'static str,
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    spec: &ConvSpec,
    rank: usize,
) -> Result<ConvGrads<T>> {
    let g = forward_geometry(op, input, weight, spec, rank)?;
    let expected = output_shape(&g, g.co, g.y, rank);
    let names = ["batch", "channels", "t", "h", "w"];
    let names: Vec<&str> = if rank == 5 {
        names.to_vec()
    } else {
        vec!["batch", "channels", "h", "w"]
    };
    check_dims(op, "grad_out", &names, &expected, grad_out.shape())?;
    let dy = grad_out.widened();
    let w = weight.widened();
    let x = input.widened();
    let gx = correlate_adjoint(&dy, &w, &g);
    let gw = weight_gradient(&dy, &x, &g);
    let gb = channel_sums(&dy, g.batch, g.co, g.y_plane());
    Ok(ConvGrads {
        input: Tensor::from_wide(input.shape().to_vec(), gx),
        weight: Tensor::from_wide(weight.shape().to_vec(), gw),
        bias: Tensor::from_wide(vec![g.co], gb),
    })
}

/// Zero-padded 3D cross-correlation.
///
/// `input` is `[B, c_i, T, H, W]`, `weight` is `[c_o, c_i, t, h, w]`, `bias`
/// is `[c_o]`.
pub fn conv3d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    conv_forward_impl("conv3d", input, weight, bias, spec, 5)
}

pub fn conv3d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<ConvGrads<T>> {
    conv_backward_impl("conv3d_backward", grad_out, input, weight, spec, 5)
}

/// 2D cross-correlation on `[B, c_i, H, W]`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &Conv2dSpec,
) -> Result<Tensor<T>> {
    conv_forward_impl("conv2d", input, weight, bias, &spec.to_3d(), 4)
}

pub fn conv2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    spec: &Conv2dSpec,
) -> Result<ConvGrads<T>> {
    conv_backward_impl("conv2d_backward", grad_out, input, weight, &spec.to_3d(), 4)
}

/// Geometry of the conv3d whose adjoint is the transposed conv described by
/// `spec` applied to `input`.
fn transposed_geometry<T: Scalar>(
    op: &'static str,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Geometry> {
    spec.validate()?;
    input.expect_rank(5, op)?;
    let shape = input.shape();
    check_extent(op, "input.channels", spec.in_channels, shape[1])?;
    let mut names = WEIGHT_AXES_5;
    names[0] = "in_channels";
    names[1] = "out_channels";
    check_dims(op, "weight", &names, &spec.transposed_weight_shape(), weight.shape())?;
    let y = [shape[2], shape[3], shape[4]];
    let x = spec.transposed_output_extents(y).map_err(|e| rename_op(e, op))?;
    Ok(Geometry {
        batch: shape[0],
        ci: spec.out_channels,
        co: spec.in_channels,
        x,
        y,
        k: spec.kernel,
        s: spec.stride,
        p: spec.padding,
    })
}

/// Transposed 3D convolution: the adjoint of [`conv3d`] under a shared
/// weight, plus a bias.
///
/// `input` is `[B, spec.in_channels, T, H, W]` and `weight` is
/// `[spec.in_channels, spec.out_channels, t, h, w]`. Each output extent is
/// `(in - 1) * s - 2p + k`.
pub fn conv_transpose3d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let op = "conv_transpose3d";
    let g = transposed_geometry(op, input, weight, spec)?;
    check_bias(op, bias, spec.out_channels)?;
    let mut out = correlate_adjoint(&input.widened(), &weight.widened(), &g);
    add_bias(&mut out, &bias.widened(), g.x_plane());
    Ok(Tensor::from_wide(output_shape(&g, g.ci, g.x, 5), out))
}

pub fn conv_transpose3d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<ConvGrads<T>> {
    let op = "conv_transpose3d_backward";
    let g = transposed_geometry(op, input, weight, spec)?;
    let expected = output_shape(&g, g.ci, g.x, 5);
    check_dims(op, "grad_out", &["batch", "channels", "t", "h", "w"], &expected, grad_out.shape())?;
    let dx = grad_out.widened();
    let y = input.widened();
    let gy = correlate(&dx, &weight.widened(), &g);
    let gw = weight_gradient(&y, &dx, &g);
    let gb = channel_sums(&dx, g.batch, g.ci, g.x_plane());
    Ok(ConvGrads {
        input: Tensor::from_wide(input.shape().to_vec(), gy),
        weight: Tensor::from_wide(weight.shape().to_vec(), gw),
        bias: Tensor::from_wide(vec![g.ci], gb),
    })
}
