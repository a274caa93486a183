//! Reference kernels over flat row-major `f32` buffers.
//!
//! Every kernel takes a rounding function `r` that snaps a value to the
//! execution precision (identity for F32, binary16 for F16 emulation).
//! Accumulating kernels apply it after every product and every partial sum.

use crate::graph::{broadcast_shapes, Padding};
use crate::tensor::{element_count, strides};

pub(crate) type Round = fn(f32) -> f32;

/// Strides of `shape` viewed as broadcast to `out` (0 on broadcast axes).
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = strides(shape);
    let offset = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < offset || shape[i - offset] == 1 {
                0
            } else {
                own[i - offset]
            }
        })
        .collect()
}

/// Visits every index of `out` in row-major order together with the flat
/// offsets into each broadcast operand.
fn for_each_broadcast(out: &[usize], operands: &[&[usize]], mut f: impl FnMut(usize, &[usize])) {
    let st: Vec<Vec<usize>> = operands.iter().map(|s| broadcast_strides(s, out)).collect();
    let n = element_count(out);
    let mut idx = vec![0usize; out.len()];
    let mut offs = vec![0usize; operands.len()];
    for flat in 0..n {
        f(flat, &offs);
        // Increment the multi-index and the operand offsets incrementally.
        for d in (0..out.len()).rev() {
            idx[d] += 1;
            for (o, s) in offs.iter_mut().zip(&st) {
                *o += s[d];
            }
            if idx[d] < out[d] {
                break;
            }
            for (o, s) in offs.iter_mut().zip(&st) {
                *o -= s[d] * out[d];
            }
            idx[d] = 0;
        }
    }
}

pub(crate) fn binary(
    a: &[f32],
    sa: &[usize],
    b: &[f32],
    sb: &[usize],
    r: Round,
    f: impl Fn(f32, f32) -> f32,
) -> (Vec<f32>, Vec<usize>) {
    let out_shape = broadcast_shapes(sa, sb).expect("shapes checked by inference");
    let mut out = vec![0.0; element_count(&out_shape)];
    for_each_broadcast(&out_shape, &[sa, sb], |i, o| {
        out[i] = r(f(a[o[0]], b[o[1]]));
    });
    (out, out_shape)
}

pub(crate) fn broadcast_to(x: &[f32], sx: &[usize], target: &[usize]) -> Vec<f32> {
    let mut out = vec![0.0; element_count(target)];
    for_each_broadcast(target, &[sx], |i, o| out[i] = x[o[0]]);
    out
}

/// Mean over `axes`; each output sums its inputs in row-major order in
/// binary32 and is rounded once.
pub(crate) fn mean(x: &[f32], sx: &[usize], axes: &[usize], r: Round) -> Vec<f32> {
    let mut reduced_shape = sx.to_vec();
    for &a in axes {
        reduced_shape[a] = 1;
    }
    let count: usize = axes.iter().map(|&a| sx[a]).product();
    let mut sums = vec![0.0f32; element_count(&reduced_shape)];
    // Map each input element onto its output slot via the reduced strides.
    let out_strides = broadcast_strides(&reduced_shape, sx);
    let mut idx = vec![0usize; sx.len()];
    let mut off = 0usize;
    for &v in x {
        sums[off] += v;
        for d in (0..sx.len()).rev() {
            idx[d] += 1;
            off += out_strides[d];
            if idx[d] < sx[d] {
                break;
            }
            off -= out_strides[d] * sx[d];
            idx[d] = 0;
        }
    }
    sums.into_iter().map(|s| r(s / count as f32)).collect()
}

/// Fully connected layer over the last axis: `x [.., Cin] @ W [Cin, Cout] + b`.
/// Accumulates over `Cin` in binary32, adds the bias, then rounds once.
pub(crate) fn fully_connected(
    x: &[f32],
    cin: usize,
    w: &[f32],
    cout: usize,
    bias: Option<&[f32]>,
    r: Round,
) -> Vec<f32> {
    let rows = x.len() / cin;
    let mut out = vec![0.0; rows * cout];
    for row in 0..rows {
        let acc = &mut out[row * cout..(row + 1) * cout];
        for ci in 0..cin {
            let xv = x[row * cin + ci];
            let wr = &w[ci * cout..(ci + 1) * cout];
            for (a, &wv) in acc.iter_mut().zip(wr) {
                *a += xv * wv;
            }
        }
        if let Some(b) = bias {
            for (a, &bv) in acc.iter_mut().zip(b) {
                *a += bv;
            }
        }
    }
    out.into_iter().map(r).collect()
}

pub(crate) struct ConvGeometry {
    pub input: [usize; 4],
    pub kernel: [usize; 4],
    pub output: [usize; 4],
    pub stride: [usize; 2],
    pub padding: Padding,
}

impl ConvGeometry {
    /// Leading (top, left) padding; SAME splits the total with the extra
    /// row/column at the end.
    fn pad_before(&self) -> [usize; 2] {
        match self.padding {
            Padding::Valid => [0, 0],
            Padding::Same => {
                let p = |axis: usize| {
                    let total = ((self.output[axis + 1] - 1) * self.stride[axis] + self.kernel[axis])
                        .saturating_sub(self.input[axis + 1]);
                    total / 2
                };
                [p(0), p(1)]
            }
        }
    }
}

/// NHWC convolution. Each output element accumulates in binary32 over `kh`,
/// then `kw`, then `Cin`, starting from zero; the bias is added last and the
/// result rounded once.
pub(crate) fn conv2d(x: &[f32], w: &[f32], bias: Option<&[f32]>, geo: &ConvGeometry, r: Round) -> Vec<f32> {
    let [n, ih, iw, cin] = geo.input;
    let [kh, kw, _, cout] = geo.kernel;
    let [_, oh, ow, _] = geo.output;
    let [pt, pl] = geo.pad_before();
    let mut out = vec![0.0; n * oh * ow * cout];
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let base = ((b * oh + oy) * ow + ox) * cout;
                let acc = &mut out[base..base + cout];
                for ky in 0..kh {
                    let iy = (oy * geo.stride[0] + ky) as isize - pt as isize;
                    if iy < 0 || iy >= ih as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * geo.stride[1] + kx) as isize - pl as isize;
                        if ix < 0 || ix >= iw as isize {
                            continue;
                        }
                        let xbase = ((b * ih + iy as usize) * iw + ix as usize) * cin;
                        let wbase = (ky * kw + kx) * cin * cout;
                        for ci in 0..cin {
                            let xv = x[xbase + ci];
                            let wr = &w[wbase + ci * cout..wbase + (ci + 1) * cout];
                            for (a, &wv) in acc.iter_mut().zip(wr) {
                                *a += xv * wv;
                            }
                        }
                    }
                }
                if let Some(bv) = bias {
                    for (a, &bb) in acc.iter_mut().zip(bv) {
                        *a += bb;
                    }
                }
            }
        }
    }
    out.into_iter().map(r).collect()
}

pub(crate) fn concat(parts: &[(&[f32], &[usize])], axis: usize) -> Vec<f32> {
    let outer: usize = parts[0].1[..axis].iter().product();
    let mut out = Vec::with_capacity(parts.iter().map(|p| p.0.len()).sum());
    for o in 0..outer {
        for (data, shape) in parts {
            let chunk: usize = shape[axis..].iter().product();
            out.extend_from_slice(&data[o * chunk..(o + 1) * chunk]);
        }
    }
    out
}

pub(crate) fn split(x: &[f32], sx: &[usize], axis: usize, parts: usize) -> Vec<Vec<f32>> {
    let outer: usize = sx[..axis].iter().product();
    let chunk: usize = sx[axis..].iter().product::<usize>() / parts;
    (0..parts)
        .map(|p| {
            let mut v = Vec::with_capacity(outer * chunk);
            for o in 0..outer {
                let start = o * chunk * parts + p * chunk;
                v.extend_from_slice(&x[start..start + chunk]);
            }
            v
        })
        .collect()
}

/// Exact GELU, `x * Phi(x)`, evaluated in binary64.
pub fn gelu_exact(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Group normalization evaluated directly in binary64 with a two-pass
/// mean/variance per (batch, group).
pub(crate) fn group_norm(
    x: &[f32],
    sx: &[usize],
    groups: usize,
    epsilon: f32,
    gamma: &[f32],
    beta: &[f32],
) -> Vec<f64> {
    let [n, h, w, c] = [sx[0], sx[1], sx[2], sx[3]];
    let cg = c / groups;
    let spatial = h * w;
    let count = (spatial * cg) as f64;
    let mut out = vec![0.0f64; x.len()];
    for b in 0..n {
        for g in 0..groups {
            let at = |p: usize, k: usize| (b * spatial + p) * c + g * cg + k;
            let mut sum = 0.0f64;
            for p in 0..spatial {
                for k in 0..cg {
                    sum += f64::from(x[at(p, k)]);
                }
            }
            let mean = sum / count;
            let mut sq = 0.0f64;
            for p in 0..spatial {
                for k in 0..cg {
                    let d = f64::from(x[at(p, k)]) - mean;
                    sq += d * d;
                }
            }
            let inv = 1.0 / (sq / count + f64::from(epsilon)).sqrt();
            for p in 0..spatial {
                for k in 0..cg {
                    let ch = g * cg + k;
                    let i = at(p, k);
                    out[i] = (f64::from(x[i]) - mean) * inv * f64::from(gamma[ch]) + f64::from(beta[ch]);
                }
            }
        }
    }
    out
}
