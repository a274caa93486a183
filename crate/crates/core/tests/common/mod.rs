//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use squeezepass_core::graph::{Graph, Node, Op, Padding};
use squeezepass_core::interp::{Bindings, Tolerance};
use squeezepass_core::tensor::Tensor;

/// Rewrites that only reorder or regroup arithmetic.
pub const EXACT_TOL: Tolerance = Tolerance::new(1e-5, 1e-4);
/// Graphs whose GELU composites were replaced by the tanh approximation.
pub const GELU_TOL: Tolerance = Tolerance::new(2e-3, 1e-4);

/// Value of a binary16 bit pattern, decoded from the field definitions.
pub fn f16_value(bits: u16) -> f64 {
    let sign = if bits & 0x8000 != 0 { -1.0 } else { 1.0 };
    let exp = i32::from((bits >> 10) & 0x1f);
    let man = f64::from(bits & 0x3ff);
    match exp {
        0 => sign * man * 2f64.powi(-24),
        31 if man == 0.0 => sign * f64::INFINITY,
        31 => f64::NAN,
        e => sign * (1024.0 + man) * 2f64.powi(e - 25),
    }
}

/// Nearest binary16 by exhaustive table search, ties to the even pattern.
/// Magnitudes at or beyond 65520 round to infinity: the infinity pattern is
/// treated as the next grid point 65536, whose mantissa is even.
pub fn f16_round_oracle(x: f64) -> u16 {
    assert!(!x.is_nan());
    let sign = if x.is_sign_negative() { 0x8000 } else { 0 };
    let a = x.abs();
    let grid = |b: u16| if b == 0x7c00 { 65536.0 } else { f16_value(b) };
    if a >= 65536.0 {
        return sign | 0x7c00;
    }
    // largest pattern with value <= a
    let (mut lo, mut hi) = (0u16, 0x7c00u16);
    while lo < hi {
        let mid = lo + (hi - lo + 1) / 2;
        if grid(mid) <= a {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    if grid(lo) == a {
        return sign | lo;
    }
    let up = lo + 1;
    let (dl, du) = (a - grid(lo), grid(up) - a);
    let pick = if dl < du {
        lo
    } else if du < dl {
        up
    } else if lo % 2 == 0 {
        lo
    } else {
        up
    };
    sign | pick
}

/// Direct NHWC convolution with explicit padding offsets, accumulated in f64.
pub fn conv_oracle(
    x: &[f32],
    xs: [usize; 4],
    w: &[f32],
    ws: [usize; 4],
    bias: Option<&[f32]>,
    stride: [usize; 2],
    padding: Padding,
) -> (Vec<f64>, [usize; 4]) {
    let [n, h, wd, cin] = xs;
    let [kh, kw, _, cout] = ws;
    let (oh, ow, pt, pl) = match padding {
        Padding::Valid => ((h - kh) / stride[0] + 1, (wd - kw) / stride[1] + 1, 0, 0),
        Padding::Same => {
            let oh = h.div_ceil(stride[0]);
            let ow = wd.div_ceil(stride[1]);
            let ph = ((oh - 1) * stride[0] + kh).saturating_sub(h);
            let pw = ((ow - 1) * stride[1] + kw).saturating_sub(wd);
            (oh, ow, ph / 2, pw / 2)
        }
    };
    let mut out = vec![0.0; n * oh * ow * cout];
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for co in 0..cout {
                    let mut acc = 0.0f64;
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride[0] + ky) as isize - pt as isize;
                            let ix = (ox * stride[1] + kx) as isize - pl as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                continue;
                            }
                            for ci in 0..cin {
                                let xv = x[((b * h + iy as usize) * wd + ix as usize) * cin + ci];
                                let wv = w[((ky * kw + kx) * cin + ci) * cout + co];
                                acc += f64::from(xv) * f64::from(wv);
                            }
                        }
                    }
                    if let Some(bb) = bias {
                        acc += f64::from(bb[co]);
                    }
                    out[((b * oh + oy) * ow + ox) * cout + co] = acc;
                }
            }
        }
    }
    (out, [n, oh, ow, cout])
}

/// Row-by-row matrix product `x [rows, cin] @ w [cin, cout] + b` in f64.
pub fn matmul_oracle(x: &[f32], cin: usize, w: &[f32], cout: usize, b: Option<&[f32]>) -> Vec<f64> {
    let rows = x.len() / cin;
    let mut out = Vec::with_capacity(rows * cout);
    for r in 0..rows {
        for j in 0..cout {
            let mut acc: f64 = (0..cin).map(|i| f64::from(x[r * cin + i]) * f64::from(w[i * cout + j])).sum();
            if let Some(b) = b {
                acc += f64::from(b[j]);
            }
            out.push(acc);
        }
    }
    out
}

/// Group normalization written from the definition: per (batch, group)
/// mean, then population variance about that mean.
pub fn groupnorm_oracle(x: &[f32], xs: [usize; 4], groups: usize, eps: f64, gamma: &[f32], beta: &[f32]) -> Vec<f64> {
    let [n, h, w, c] = xs;
    let cg = c / groups;
    let mut out = vec![0.0; x.len()];
    for b in 0..n {
        for g in 0..groups {
            let members: Vec<usize> = (0..h * w)
                .flat_map(|p| (0..cg).map(move |k| (b * h * w + p) * c + g * cg + k))
                .collect();
            let vals: Vec<f64> = members.iter().map(|&i| f64::from(x[i])).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            for (&i, v) in members.iter().zip(&vals) {
                let ch = i % c;
                out[i] = (v - mean) / (var + eps).sqrt() * f64::from(gamma[ch]) + f64::from(beta[ch]);
            }
        }
    }
    out
}

/// x * Phi(x) through the complementary error function, evaluated in f64.
pub fn exact_gelu(x: f64) -> f64 {
    0.5 * x * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// The tanh approximation evaluated in f64, optionally with the clip.
pub fn tanh_gelu(x: f64, clip: Option<f64>) -> f64 {
    let c1 = (2.0 / std::f64::consts::PI).sqrt();
    let g = clip.map_or(x, |m| x.clamp(-m, m));
    0.5 * x * (1.0 + (c1 * (g + 0.044715 * g * g * g)).tanh())
}

pub fn single_input(id: &str, t: Tensor) -> Bindings {
    let mut b = Bindings::new();
    b.insert(id.to_string(), t);
    b
}

/// A graph with one input `x` and one op producing `y`.
pub fn unary_graph(shape: Vec<usize>, op: Op) -> Graph {
    let mut g = Graph::new();
    g.add_input("x", shape);
    g.add_node(Node::new("n", op, ["x"], ["y"]));
    g.outputs.push("y".into());
    g
}
