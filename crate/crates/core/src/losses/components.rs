//! Component losses with analytic gradients.
//!
//! Time-frequency inputs are tensors shaped `[frames, 2, bins]` (left ear in
//! channel 0, right ear in channel 1). Gradients use the convention
//! `dL/dRe + i dL/dIm` for every complex entry.

use std::f64::consts::LN_10;

use crate::error::{Error, Result};
use crate::tensor::{Tensor, C64, ZERO};

/// Magnitude floor applied before ratios and logarithms.
pub const MAG_FLOOR: f64 = 1e-8;
/// Guard added to the error energy of the SNR loss.
pub const SNR_EPS: f64 = 1e-8;

fn check_pair(est: &Tensor, reference: &Tensor) -> Result<(usize, usize)> {
    let s = est.shape();
    if s.len() != 3 || s[1] != 2 || s != reference.shape() {
        return Err(Error::shape(format!(
            "binaural TF loss expects matching [frames, 2, bins] tensors, got {:?} and {:?}",
            s,
            reference.shape()
        )));
    }
    Ok((s[0], s[2]))
}

/// Branch decisions taken by kinked operations, recorded so a gradient
/// checker can skip finite differences that straddle a kink.
#[derive(Debug, Default)]
pub struct BranchTrace(pub Vec<bool>);

impl BranchTrace {
    pub(crate) fn push(trace: &mut Option<&mut BranchTrace>, b: bool) {
        if let Some(t) = trace.as_deref_mut() {
            t.0.push(b);
        }
    }
}

/// `-(1/2) * sum_ears 10 log10(|x|^2 / (|x_hat - x|^2 + eps))`.
pub fn snr_loss(est: &[Vec<f64>], reference: &[Vec<f64>], want_grad: bool) -> Result<(f64, Vec<Vec<f64>>)> {
    if est.len() != reference.len() || est.iter().zip(reference).any(|(a, b)| a.len() != b.len()) {
        return Err(Error::shape("snr loss inputs differ in shape"));
    }
    let mut value = 0.0;
    let mut grads = Vec::new();
    for (e, r) in est.iter().zip(reference) {
        let sig: f64 = r.iter().map(|v| v * v).sum();
        if sig <= 0.0 {
            return Err(Error::ZeroReference);
        }
        let err: f64 = e.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() + SNR_EPS;
        value += -0.5 * 10.0 * (sig / err).log10();
        if want_grad {
            let k = 10.0 / (LN_10 * err);
            grads.push(e.iter().zip(r).map(|(a, b)| k * (a - b)).collect());
        }
    }
    Ok((value, grads))
}

#[inline]
fn floored(z: C64) -> (f64, bool) {
    let m = z.norm();
    if m > MAG_FLOOR {
        (m, true)
    } else {
        (MAG_FLOOR, false)
    }
}

/// d ln|z| in gradient convention, zero on the floored branch.
#[inline]
fn dlog_abs(z: C64, active: bool) -> C64 {
    if active {
        z / z.norm_sqr()
    } else {
        ZERO
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Interaural level difference error, averaged over TF bins.
pub fn ild_loss(
    est: &Tensor,
    reference: &Tensor,
    want_grad: bool,
    mut trace: Option<&mut BranchTrace>,
) -> Result<(f64, Option<Tensor>)> {
    let (frames, bins) = check_pair(est, reference)?;
    let scale = 20.0 / (frames * bins).max(1) as f64;
    let mut grad = want_grad.then(|| Tensor::zeros(est.shape()));
    let mut total = 0.0;
    let (e, r) = (est.data(), reference.data());
    for t in 0..frames {
        for f in 0..bins {
            let (il, ir) = (t * 2 * bins + f, t * 2 * bins + bins + f);
            let (rl, _) = floored(r[il]);
            let (rr, _) = floored(r[ir]);
            let (el, al) = floored(e[il]);
            let (er, ar) = floored(e[ir]);
            let diff = (rl / rr).log10() - (el / er).log10();
            total += diff.abs();
            BranchTrace::push(&mut trace, al);
            BranchTrace::push(&mut trace, ar);
            BranchTrace::push(&mut trace, diff > 0.0);
            if let Some(g) = grad.as_mut() {
                // d|diff|/d est_ratio = -sign(diff); est_ratio = (ln el - ln er)/ln10
                let k = -sign(diff) * scale / LN_10;
                let gd = g.data_mut();
                gd[il] += dlog_abs(e[il], al) * k;
                gd[ir] -= dlog_abs(e[ir], ar) * k;
            }
        }
    }
    Ok((total * scale, grad))
}

/// Which interaural quantity the IPD loss compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IpdMode {
    /// `arctan(|X_L| / |X_R|)`, the form used in training.
    #[default]
    MagnitudeRatio,
    /// Wrapped difference of the interaural phase `arg(X_L conj(X_R))`.
    PhaseDifference,
}

/// Interaural "phase" error, averaged over TF bins.
pub fn ipd_loss(
    est: &Tensor,
    reference: &Tensor,
    mode: IpdMode,
    want_grad: bool,
    mut trace: Option<&mut BranchTrace>,
) -> Result<(f64, Option<Tensor>)> {
    let (frames, bins) = check_pair(est, reference)?;
    let scale = 1.0 / (frames * bins).max(1) as f64;
    if mode == IpdMode::PhaseDifference {
        if want_grad {
            return Err(Error::Input("phase-difference IPD has no gradient".into()));
        }
        let (e, r) = (est.data(), reference.data());
        let mut total = 0.0;
        for t in 0..frames {
            for f in 0..bins {
                let (il, ir) = (t * 2 * bins + f, t * 2 * bins + bins + f);
                let pr = (r[il] * r[ir].conj()).arg();
                let pe = (e[il] * e[ir].conj()).arg();
                total += wrap_phase(pr - pe).abs();
            }
        }
        return Ok((total * scale, None));
    }
    let mut grad = want_grad.then(|| Tensor::zeros(est.shape()));
    let mut total = 0.0;
    let (e, r) = (est.data(), reference.data());
    for t in 0..frames {
        for f in 0..bins {
            let (il, ir) = (t * 2 * bins + f, t * 2 * bins + bins + f);
            let (rl, _) = floored(r[il]);
            let (rr, _) = floored(r[ir]);
            let (el, al) = floored(e[il]);
            let (er, ar) = floored(e[ir]);
            let rho = el / er;
            let diff = (rl / rr).atan() - rho.atan();
            total += diff.abs();
            BranchTrace::push(&mut trace, al);
            BranchTrace::push(&mut trace, ar);
            BranchTrace::push(&mut trace, diff > 0.0);
            if let Some(g) = grad.as_mut() {
                let k = -sign(diff) * scale * rho / (1.0 + rho * rho);
                let gd = g.data_mut();
                gd[il] += dlog_abs(e[il], al) * k;
                gd[ir] -= dlog_abs(e[ir], ar) * k;
            }
        }
    }
    Ok((total * scale, grad))
}

pub fn wrap_phase(p: f64) -> f64 {
    use std::f64::consts::PI;
    let mut w = (p + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        w = PI;
    }
    w
}

/// One-third-octave band layout over STFT bins, as `[lo, hi)` bin ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct ThirdOctaveBands {
    pub ranges: Vec<(usize, usize)>,
}

impl ThirdOctaveBands {
    /// Bands with centre `150 * 2^(k/3)` Hz; edges snap to the nearest bins.
    /// Bands that are empty or reach past `max_bin` are dropped.
    pub fn new(fft_size: usize, sample_rate: u32, num_bands: usize, max_bin: usize) -> Self {
        let all = Self::all(fft_size, sample_rate, num_bands);
        ThirdOctaveBands {
            ranges: all.into_iter().filter(|&(lo, hi)| hi > lo && hi <= max_bin).collect(),
        }
    }

    pub(crate) fn all(fft_size: usize, sample_rate: u32, num_bands: usize) -> Vec<(usize, usize)> {
        const LOWEST_CENTRE: f64 = 150.0;
        let bins = fft_size / 2 + 1;
        let freqs: Vec<f64> = (0..bins)
            .map(|k| k as f64 * sample_rate as f64 / fft_size as f64)
            .collect();
        let nearest = |target: f64| {
            freqs
                .iter()
                .enumerate()
                .min_by(|a, b| (a.1 - target).abs().total_cmp(&(b.1 - target).abs()))
                .map(|(i, _)| i)
                .unwrap_or(0)
        };
        (0..num_bands)
            .map(|k| {
                let k = k as f64;
                let lo = LOWEST_CENTRE * 2f64.powf((2.0 * k - 1.0) / 6.0);
                let hi = LOWEST_CENTRE * 2f64.powf((2.0 * k + 1.0) / 6.0);
                (nearest(lo), nearest(hi))
            })
            .collect()
    }
}

/// Smooth intelligibility surrogate on STFT data: band envelopes are compared
/// by unclipped correlation over sliding segments of `segment` frames.
///
/// Returns the loss `-(1/2) * sum_ears d_ear`, with `d_ear` the mean
/// correlation, and optionally its gradient with respect to `est`.
pub fn stoi_surrogate_loss(
    est: &Tensor,
    reference: &Tensor,
    bands: &ThirdOctaveBands,
    segment: usize,
    want_grad: bool,
) -> Result<(f64, Option<Tensor>)> {
    const ENV_EPS: f64 = 1e-12;
    const DEN_FLOOR: f64 = 1e-30;
    let (frames, bins) = check_pair(est, reference)?;
    let n = segment.min(frames).max(1);
    let segments = frames + 1 - n;
    let nb = bands.ranges.len();
    let mut grad = want_grad.then(|| Tensor::zeros(est.shape()));
    if nb == 0 || frames == 0 {
        return Ok((0.0, grad));
    }
    let count = (nb * segments) as f64;
    let mut loss = 0.0;
    let envelope = |x: &[C64], ear: usize, lo: usize, hi: usize| -> Vec<f64> {
        (0..frames)
            .map(|t| {
                let row = &x[(t * 2 + ear) * bins..(t * 2 + ear + 1) * bins];
                (row[lo..hi].iter().map(|z| z.norm_sqr()).sum::<f64>() + ENV_EPS).sqrt()
            })
            .collect()
    };
    let mut a = vec![0.0; n];
    let mut e = vec![0.0; n];
    for ear in 0..2 {
        let mut d = 0.0;
        for &(lo, hi) in &bands.ranges {
            let er = envelope(reference.data(), ear, lo, hi);
            let ee = envelope(est.data(), ear, lo, hi);
            let mut g_env = vec![0.0; if want_grad { frames } else { 0 }];
            for m in 0..segments {
                let ma = er[m..m + n].iter().sum::<f64>() / n as f64;
                let me = ee[m..m + n].iter().sum::<f64>() / n as f64;
                for j in 0..n {
                    a[j] = er[m + j] - ma;
                    e[j] = ee[m + j] - me;
                }
                let (mut aa, mut bb, mut cc) = (0.0, 0.0, 0.0);
                for j in 0..n {
                    aa += a[j] * a[j];
                    bb += e[j] * e[j];
                    cc += a[j] * e[j];
                }
                let prod = aa * bb;
                let clamped = prod <= DEN_FLOOR;
                let den = if clamped { DEN_FLOOR.sqrt() } else { prod.sqrt() };
                d += cc / den;
                if want_grad {
                    let mut dj: Vec<f64> = (0..n)
                        .map(|j| {
                            if clamped {
                                a[j] / den
                            } else {
                                a[j] / den - cc * aa * e[j] / (den * den * den)
                            }
                        })
                        .collect();
                    let mean = dj.iter().sum::<f64>() / n as f64;
                    for v in dj.iter_mut() {
                        *v -= mean;
                    }
                    for j in 0..n {
                        g_env[m + j] += dj[j];
                    }
                }
            }
            if let Some(g) = grad.as_mut() {
                // loss = -(1/2) * d / count, summed over ears
                let k = -0.5 / count;
                let gd = g.data_mut();
                for t in 0..frames {
                    let coef = k * g_env[t] / ee[t];
                    let base = (t * 2 + ear) * bins;
                    let x = est.data();
                    for f in lo..hi {
                        gd[base + f] += x[base + f] * coef;
                    }
                }
            }
        }
        loss += -0.5 * d / count;
    }
    Ok((loss, grad))
}
