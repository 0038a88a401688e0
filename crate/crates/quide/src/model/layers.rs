//! Per-sample compute kernels for each layer kind.
//!
//! All kernels operate on flat row-major slices for a single sample; batch
//! handling stays in the callers, which keeps per-sample results identical
//! whether samples run alone or stacked in a batch.

/// 2D convolution, zero padding, square kernel.
///
/// `input` is `(in_c, in_h, in_w)`, `weight` is `(out_c, in_c, k, k)`,
/// `output` is `(out_c, out_h, out_w)` and is fully overwritten.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward(
    input: &[f32],
    in_c: usize,
    in_h: usize,
    in_w: usize,
    weight: &[f32],
    bias: &[f32],
    out_c: usize,
    k: usize,
    stride: usize,
    pad: usize,
    output: &mut [f32],
) {
    let out_h = (in_h + 2 * pad - k) / stride + 1;
    let out_w = (in_w + 2 * pad - k) / stride + 1;
    debug_assert_eq!(output.len(), out_c * out_h * out_w);

    for oc in 0..out_c {
        let out_plane = &mut output[oc * out_h * out_w..(oc + 1) * out_h * out_w];
        out_plane.fill(bias[oc]);
        for ic in 0..in_c {
            let in_plane = &input[ic * in_h * in_w..(ic + 1) * in_h * in_w];
            for ky in 0..k {
                for kx in 0..k {
                    let w = weight[((oc * in_c + ic) * k + ky) * k + kx];
                    if stride == 1 {
                        // ix = ox + kx - pad must stay in [0, in_w)
                        let ox0 = pad.saturating_sub(kx);
                        let ox1 = ((in_w + pad).saturating_sub(kx)).min(out_w);
                        if ox0 >= ox1 {
                            continue;
                        }
                        let shift = kx as isize - pad as isize;
                        for oy in 0..out_h {
                            let iy = oy as isize + ky as isize - pad as isize;
                            if iy < 0 || iy >= in_h as isize {
                                continue;
                            }
                            let in_row = &in_plane[iy as usize * in_w..(iy as usize + 1) * in_w];
                            let out_row = &mut out_plane[oy * out_w..(oy + 1) * out_w];
                            let base = (ox0 as isize + shift) as usize;
                            let len = ox1 - ox0;
                            let src = &in_row[base..base + len];
                            let dst = &mut out_row[ox0..ox1];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += w * s;
                            }
                        }
                    } else {
                        for oy in 0..out_h {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= in_h as isize {
                                continue;
                            }
                            let in_row = &in_plane[iy as usize * in_w..(iy as usize + 1) * in_w];
                            let out_row = &mut out_plane[oy * out_w..(oy + 1) * out_w];
                            for (ox, out_v) in out_row.iter_mut().enumerate() {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= in_w as isize {
                                    continue;
                                }
                                *out_v += w * in_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradients of [`conv2d_forward`] with respect to input, weight, and bias.
///
/// `grad_weight` and `grad_bias` are accumulated into (callers zero them
/// once per batch); `grad_input` is fully overwritten.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    input: &[f32],
    in_c: usize,
    in_h: usize,
    in_w: usize,
    weight: &[f32],
    out_c: usize,
    k: usize,
    stride: usize,
    pad: usize,
    grad_output: &[f32],
    grad_input: &mut [f32],
    grad_weight: &mut [f32],
    grad_bias: &mut [f32],
) {
    let out_h = (in_h + 2 * pad - k) / stride + 1;
    let out_w = (in_w + 2 * pad - k) / stride + 1;
    grad_input.fill(0.0);

    for oc in 0..out_c {
        let gout_plane = &grad_output[oc * out_h * out_w..(oc + 1) * out_h * out_w];
        let mut gb = 0.0f32;
        for &g in gout_plane {
            gb += g;
        }
        grad_bias[oc] += gb;

        for ic in 0..in_c {
            let in_plane = &input[ic * in_h * in_w..(ic + 1) * in_h * in_w];
            let gin_plane = &mut grad_input[ic * in_h * in_w..(ic + 1) * in_h * in_w];
            for ky in 0..k {
                for kx in 0..k {
                    let widx = ((oc * in_c + ic) * k + ky) * k + kx;
                    let w = weight[widx];
                    let mut gw = 0.0f32;
                    if stride == 1 {
                        let ox0 = pad.saturating_sub(kx);
                        let ox1 = ((in_w + pad).saturating_sub(kx)).min(out_w);
                        if ox0 >= ox1 {
                            continue;
                        }
                        let shift = kx as isize - pad as isize;
                        for oy in 0..out_h {
                            let iy = oy as isize + ky as isize - pad as isize;
                            if iy < 0 || iy >= in_h as isize {
                                continue;
                            }
                            let base = (ox0 as isize + shift) as usize;
                            let len = ox1 - ox0;
                            let in_row = &in_plane[iy as usize * in_w + base..][..len];
                            let gin_row = &mut gin_plane[iy as usize * in_w + base..][..len];
                            let gout_row = &gout_plane[oy * out_w + ox0..][..len];
                            for i in 0..len {
                                gw += in_row[i] * gout_row[i];
                                gin_row[i] += w * gout_row[i];
                            }
                        }
                    } else {
                        for oy in 0..out_h {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= in_h as isize {
                                continue;
                            }
                            for ox in 0..out_w {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= in_w as isize {
                                    continue;
                                }
                                let g = gout_plane[oy * out_w + ox];
                                gw += in_plane[iy as usize * in_w + ix as usize] * g;
                                gin_plane[iy as usize * in_w + ix as usize] += w * g;
                            }
                        }
                    }
                    grad_weight[widx] += gw;
                }
            }
        }
    }
}

/// 2x2-style max pooling with window == stride. Records the flat input
/// index of each maximum for the backward scatter. Ties go to the earliest
/// index in scan order.
pub fn maxpool_forward(
    input: &[f32],
    c: usize,
    h: usize,
    w: usize,
    size: usize,
    output: &mut [f32],
    argmax: &mut [u32],
) {
    let oh = h / size;
    let ow = w / size;
    for ch in 0..c {
        let in_plane = &input[ch * h * w..(ch + 1) * h * w];
        let out_base = ch * oh * ow;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f32::NEG_INFINITY;
                let mut best_idx = 0usize;
                for dy in 0..size {
                    let iy = oy * size + dy;
                    for dx in 0..size {
                        let ix = ox * size + dx;
                        let v = in_plane[iy * w + ix];
                        if v > best {
                            best = v;
                            best_idx = iy * w + ix;
                        }
                    }
                }
                output[out_base + oy * ow + ox] = best;
                argmax[out_base + oy * ow + ox] = (ch * h * w + best_idx) as u32;
            }
        }
    }
}

/// Scatter pooled gradients back to the recorded argmax positions.
pub fn maxpool_backward(grad_output: &[f32], argmax: &[u32], grad_input: &mut [f32]) {
    grad_input.fill(0.0);
    for (g, &idx) in grad_output.iter().zip(argmax) {
        grad_input[idx as usize] += g;
    }
}

pub fn relu_forward(input: &[f32], output: &mut [f32]) {
    for (o, &x) in output.iter_mut().zip(input) {
        *o = if x > 0.0 { x } else { 0.0 };
    }
}

/// ReLU gradient from the forward *output* (zero where the unit was
/// clamped; the subgradient at exactly zero is taken as zero).
pub fn relu_backward(grad_output: &[f32], output: &[f32], grad_input: &mut [f32]) {
    for i in 0..grad_output.len() {
        grad_input[i] = if output[i] > 0.0 { grad_output[i] } else { 0.0 };
    }
}

/// Dense layer: `output = weight * input + bias`, `weight` is
/// `(out_f, in_f)` row-major.
pub fn fc_forward(input: &[f32], weight: &[f32], bias: &[f32], out_f: usize, output: &mut [f32]) {
    let in_f = input.len();
    for j in 0..out_f {
        let row = &weight[j * in_f..(j + 1) * in_f];
        let mut acc = bias[j];
        for (w, x) in row.iter().zip(input) {
            acc += w * x;
        }
        output[j] = acc;
    }
}

/// Gradients of [`fc_forward`]; `grad_weight`/`grad_bias` accumulate,
/// `grad_input` is overwritten.
#[allow(clippy::too_many_arguments)]
pub fn fc_backward(
    input: &[f32],
    weight: &[f32],
    out_f: usize,
    grad_output: &[f32],
    grad_input: &mut [f32],
    grad_weight: &mut [f32],
    grad_bias: &mut [f32],
) {
    let in_f = input.len();
    grad_input.fill(0.0);
    for j in 0..out_f {
        let g = grad_output[j];
        grad_bias[j] += g;
        let row = &weight[j * in_f..(j + 1) * in_f];
        let grow = &mut grad_weight[j * in_f..(j + 1) * in_f];
        for i in 0..in_f {
            grad_input[i] += row[i] * g;
            grow[i] += input[i] * g;
        }
    }
}
