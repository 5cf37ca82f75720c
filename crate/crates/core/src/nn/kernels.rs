//! Per-frame forward kernels.
//!
//! Offline (tape) and streaming inference both call these, frame by frame, so
//! the two paths perform the same floating-point operations in the same order.
//! A frame is laid out `[channel, bin]`.

use crate::tensor::{C64, ZERO};

/// Depthwise convolution along frequency with "same" zero padding.
pub fn depthwise_freq(
    x: &[C64],
    out: &mut [C64],
    w: &[C64],
    channels: usize,
    bins: usize,
    kernel: usize,
    dilation: usize,
) {
    let half = (kernel - 1) / 2 * dilation;
    for c in 0..channels {
        let xr = &x[c * bins..(c + 1) * bins];
        let or = &mut out[c * bins..(c + 1) * bins];
        or.fill(ZERO);
        for j in 0..kernel {
            let wv = w[c * kernel + j];
            let shift = j * dilation;
            // output f reads input f + shift - half
            let lo = half.saturating_sub(shift);
            let hi = (bins + half).saturating_sub(shift).min(bins);
            for f in lo..hi {
                or[f] += wv * xr[f + shift - half];
            }
        }
    }
}

/// Depthwise 2D convolution, causal and dilated in time, "same" in frequency.
///
/// `history[jt]` is the input frame `t - (kt - 1 - jt) * dilation`, or `None`
/// when that frame lies before the start of the signal.
pub fn depthwise_tf(
    history: &[Option<&[C64]>],
    out: &mut [C64],
    w: &[C64],
    channels: usize,
    bins: usize,
    freq_kernel: usize,
) {
    let kt = history.len();
    let half = (freq_kernel - 1) / 2;
    out.fill(ZERO);
    for c in 0..channels {
        let or = &mut out[c * bins..(c + 1) * bins];
        for (jt, frame) in history.iter().enumerate() {
            let Some(frame) = frame else { continue };
            let xr = &frame[c * bins..(c + 1) * bins];
            for jf in 0..freq_kernel {
                let wv = w[(c * kt + jt) * freq_kernel + jf];
                let lo = half.saturating_sub(jf);
                let hi = (bins + half).saturating_sub(jf).min(bins);
                for f in lo..hi {
                    or[f] += wv * xr[f + jf - half];
                }
            }
        }
    }
}

/// 1x1 channel mixing plus bias: `out[o] = b[o] + sum_i w[o, i] x[i]`.
pub fn pointwise(x: &[C64], out: &mut [C64], w: &[C64], b: &[C64], in_ch: usize, out_ch: usize, bins: usize) {
    for o in 0..out_ch {
        let or = &mut out[o * bins..(o + 1) * bins];
        or.fill(b[o]);
        for i in 0..in_ch {
            let wv = w[o * in_ch + i];
            let xr = &x[i * bins..(i + 1) * bins];
            for (y, v) in or.iter_mut().zip(xr) {
                *y += wv * v;
            }
        }
    }
}

/// Linear map along frequency shared by all channels: `[C, from] -> [C, to]`.
pub fn project(x: &[C64], out: &mut [C64], p: &[C64], channels: usize, from: usize, to: usize) {
    for c in 0..channels {
        let xr = &x[c * from..(c + 1) * from];
        for j in 0..to {
            let pr = &p[j * from..(j + 1) * from];
            let mut acc = ZERO;
            for (a, b) in pr.iter().zip(xr) {
                acc += a * b;
            }
            out[c * to + j] = acc;
        }
    }
}

/// Running statistics of a causally smoothed instance norm, one per channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormRunning {
    pub mean: C64,
    pub power: f64,
}

/// Per-frame statistics kept for the backward pass.
#[derive(Debug, Clone, Copy)]
pub struct NormFrameStats {
    pub mean: C64,
    pub scale: f64,
}

/// Complex instance norm over the frequency bins of one frame.
///
/// With `smoothing > 0` the mean and power are exponential averages over
/// frames (initialised from the first frame), which keeps the layer causal.
#[allow(clippy::too_many_arguments)]
pub fn instance_norm(
    x: &[C64],
    out: &mut [C64],
    gain: &[C64],
    bias: &[C64],
    channels: usize,
    bins: usize,
    eps: f64,
    smoothing: f64,
    running: &mut [NormRunning],
    first: bool,
    mut stats: Option<&mut [NormFrameStats]>,
) {
    let n = bins as f64;
    for c in 0..channels {
        let xr = &x[c * bins..(c + 1) * bins];
        let mut sum = ZERO;
        let mut pow = 0.0;
        for v in xr {
            sum += v;
            pow += v.norm_sqr();
        }
        let m = sum / n;
        let p = pow / n;
        let r = &mut running[c];
        if smoothing == 0.0 || first {
            r.mean = m;
            r.power = p;
        } else {
            r.mean = r.mean * smoothing + m * (1.0 - smoothing);
            r.power = r.power * smoothing + p * (1.0 - smoothing);
        }
        let var = r.power - r.mean.norm_sqr();
        let scale = (var + eps).sqrt();
        let inv = 1.0 / scale;
        let (g, b, mu) = (gain[c], bias[c], r.mean);
        for (o, v) in out[c * bins..(c + 1) * bins].iter_mut().zip(xr) {
            *o = g * ((v - mu) * inv) + b;
        }
        if let Some(s) = stats.as_deref_mut() {
            s[c] = NormFrameStats { mean: mu, scale };
        }
    }
}

/// Split PReLU: real and imaginary parts use `slope.re` and `slope.im`.
pub fn prelu(x: &[C64], out: &mut [C64], slope: C64) {
    for (o, v) in out.iter_mut().zip(x) {
        let re = if v.re > 0.0 { v.re } else { slope.re * v.re };
        let im = if v.im > 0.0 { v.im } else { slope.im * v.im };
        *o = C64::new(re, im);
    }
}

pub fn add(a: &[C64], b: &[C64], out: &mut [C64]) {
    for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
        *o = x + y;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn freq_conv_identity_kernel() {
        let x: Vec<C64> = (0..6).map(|i| C64::new(i as f64, 1.0)).collect();
        let mut out = vec![ZERO; 6];
        depthwise_freq(&x, &mut out, &[C64::new(1.0, 0.0)], 1, 6, 1, 1);
        assert_eq!(out, x);
    }

    #[test]
    fn freq_conv_shift_kernel() {
        // kernel [0, 0, 1] reads the next bin
        let x: Vec<C64> = (0..5).map(|i| C64::new(i as f64, 0.0)).collect();
        let mut out = vec![ZERO; 5];
        let w = [ZERO, ZERO, C64::new(1.0, 0.0)];
        depthwise_freq(&x, &mut out, &w, 1, 5, 3, 1);
        let re: Vec<f64> = out.iter().map(|z| z.re).collect();
        assert_eq!(re, vec![1.0, 2.0, 3.0, 4.0, 0.0]);
    }

    #[test]
    fn prelu_split_arithmetic() {
        let mut out = [ZERO];
        prelu(&[C64::new(-1.0, -1.0)], &mut out, C64::new(0.25, 0.25));
        assert_eq!(out[0], C64::new(-0.25, -0.25));
        prelu(&[C64::new(2.0, 3.0)], &mut out, C64::new(0.25, 0.25));
        assert_eq!(out[0], C64::new(2.0, 3.0));
    }
}
