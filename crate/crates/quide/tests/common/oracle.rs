//! Independent f64 reference implementations of the layer math.
//!
//! Written directly from the layer definitions as plain nested loops, kept
//! deliberately separate from the optimized f32 kernels they are used to
//! check. Finite differences over these give trustworthy gradients because
//! the arithmetic is f64 end to end.

/// Dense per-element convolution: `(in_c, h, w) -> (out_c, oh, ow)`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_f64(
    input: &[f64],
    in_c: usize,
    in_h: usize,
    in_w: usize,
    weight: &[f64],
    bias: &[f64],
    out_c: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let out_h = (in_h + 2 * pad - k) / stride + 1;
    let out_w = (in_w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; out_c * out_h * out_w];
    for oc in 0..out_c {
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut acc = bias[oc];
                for ic in 0..in_c {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= in_h as isize || ix >= in_w as isize {
                                continue;
                            }
                            let v = input[(ic * in_h + iy as usize) * in_w + ix as usize];
                            acc += v * weight[((oc * in_c + ic) * k + ky) * k + kx];
                        }
                    }
                }
                out[(oc * out_h + oy) * out_w + ox] = acc;
            }
        }
    }
    out
}

pub fn maxpool_f64(input: &[f64], c: usize, h: usize, w: usize, size: usize) -> Vec<f64> {
    let oh = h / size;
    let ow = w / size;
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                for dy in 0..size {
                    for dx in 0..size {
                        let v = input[(ch * h + oy * size + dy) * w + ox * size + dx];
                        if v > best {
                            best = v;
                        }
                    }
                }
                out[(ch * oh + oy) * ow + ox] = best;
            }
        }
    }
    out
}

pub fn relu_f64(input: &[f64]) -> Vec<f64> {
    input.iter().map(|&v| v.max(0.0)).collect()
}

pub fn fc_f64(input: &[f64], weight: &[f64], bias: &[f64], out_f: usize) -> Vec<f64> {
    let in_f = input.len();
    (0..out_f)
        .map(|j| {
            let mut acc = bias[j];
            for i in 0..in_f {
                acc += weight[j * in_f + i] * input[i];
            }
            acc
        })
        .collect()
}

/// Central finite difference of `f` with respect to `x[i]`.
pub fn central_diff(x: &mut [f64], i: usize, h: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let saved = x[i];
    x[i] = saved + h;
    let plus = f(x);
    x[i] = saved - h;
    let minus = f(x);
    x[i] = saved;
    (plus - minus) / (2.0 * h)
}

/// Max-norm relative error between an analytic gradient and a numeric one.
pub fn max_rel_error(analytic: &[f32], numeric: &[f64]) -> f64 {
    let scale = numeric
        .iter()
        .fold(0.0f64, |m, &v| m.max(v.abs()))
        .max(1e-6);
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (f64::from(a) - n).abs())
        .fold(0.0f64, f64::max)
        / scale
}
