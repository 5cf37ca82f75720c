//! Short-time objective intelligibility (evaluation form).
//!
//! Follows the published algorithm: resample to 10 kHz, drop frames more
//! than 40 dB below the loudest clean frame, one-third-octave band envelopes
//! from a 512-point STFT of 256-sample frames, 30-frame segments, clipping
//! of the normalised degraded envelope at -15 dB SDR and correlation
//! averaged over bands and segments.

use crate::dsp::fft::Fft;
use crate::dsp::resample::resample;
use crate::error::{Error, Result};
use crate::losses::components::ThirdOctaveBands;
use crate::tensor::{C64, ZERO};

pub const STOI_RATE: u32 = 10_000;
const FRAME: usize = 256;
const NFFT: usize = 512;
const BANDS: usize = 15;
const SEGMENT: usize = 30;
const BETA_DB: f64 = -15.0;
const DYN_RANGE_DB: f64 = 40.0;
const EPS: f64 = f64::EPSILON;

/// Hann window of `n` points without the zero end points.
fn window() -> Vec<f64> {
    let m = FRAME + 2;
    (1..=FRAME)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (m - 1) as f64).cos())
        .collect()
}

fn remove_silent_frames(x: &[f64], y: &[f64], w: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let hop = FRAME / 2;
    if x.len() < FRAME {
        return (x.to_vec(), y.to_vec());
    }
    let starts: Vec<usize> = (0..=x.len() - FRAME).step_by(hop).collect();
    let energy: Vec<f64> = starts
        .iter()
        .map(|&s| {
            let e: f64 = (0..FRAME).map(|i| (w[i] * x[s + i]).powi(2)).sum();
            20.0 * (e.sqrt() + EPS).log10()
        })
        .collect();
    let max = energy.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let keep: Vec<usize> = starts
        .iter()
        .zip(&energy)
        .filter(|(_, &e)| max - e < DYN_RANGE_DB)
        .map(|(&s, _)| s)
        .collect();
    let len = if keep.is_empty() {
        0
    } else {
        (keep.len() - 1) * hop + FRAME
    };
    let mut xs = vec![0.0; len];
    let mut ys = vec![0.0; len];
    for (j, &s) in keep.iter().enumerate() {
        for i in 0..FRAME {
            xs[j * hop + i] += w[i] * x[s + i];
            ys[j * hop + i] += w[i] * y[s + i];
        }
    }
    (xs, ys)
}

/// Band envelopes `[band][frame]`.
fn band_envelopes(x: &[f64], w: &[f64], fft: &Fft, bands: &[(usize, usize)]) -> Vec<Vec<f64>> {
    let hop = FRAME / 2;
    let frames = if x.len() < FRAME {
        0
    } else {
        (x.len() - FRAME) / hop + 1
    };
    let mut env = vec![Vec::with_capacity(frames); bands.len()];
    let mut buf = vec![ZERO; NFFT];
    for t in 0..frames {
        buf.fill(ZERO);
        for i in 0..FRAME {
            buf[i] = C64::new(w[i] * x[t * hop + i], 0.0);
        }
        fft.forward(&mut buf);
        for (b, &(lo, hi)) in bands.iter().enumerate() {
            let e: f64 = buf[lo..hi].iter().map(|z| z.norm_sqr()).sum();
            env[b].push(e.sqrt());
        }
    }
    env
}

fn centred(v: &[f64]) -> Vec<f64> {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| x - m).collect()
}

/// STOI of `degraded` against `clean`, both at `sample_rate`. Needs at
/// least one second of audio.
pub fn stoi(clean: &[f64], degraded: &[f64], sample_rate: u32) -> Result<f64> {
    if clean.len() != degraded.len() {
        return Err(Error::shape(format!(
            "stoi inputs differ in length: {} vs {}",
            clean.len(),
            degraded.len()
        )));
    }
    if clean.len() < sample_rate as usize {
        return Err(Error::Length {
            needed: sample_rate as usize,
            got: clean.len(),
        });
    }
    let x = resample(clean, sample_rate, STOI_RATE);
    let y = resample(degraded, sample_rate, STOI_RATE);
    let w = window();
    let (x, y) = remove_silent_frames(&x, &y, &w);
    let fft = Fft::new(NFFT)?;
    let bands = ThirdOctaveBands::all(NFFT, STOI_RATE, BANDS);
    let xe = band_envelopes(&x, &w, &fft, &bands);
    let ye = band_envelopes(&y, &w, &fft, &bands);
    let frames = xe.first().map_or(0, Vec::len);
    if frames < SEGMENT {
        return Err(Error::Input(format!(
            "only {frames} non-silent frames remain, need {SEGMENT}"
        )));
    }
    let clip = 1.0 + 10f64.powf(-BETA_DB / 20.0);
    let mut total = 0.0;
    let mut count = 0usize;
    for m in SEGMENT..=frames {
        for (xb, yb) in xe.iter().zip(&ye) {
            let xs = &xb[m - SEGMENT..m];
            let ys = &yb[m - SEGMENT..m];
            let nx = xs.iter().map(|v| v * v).sum::<f64>().sqrt();
            let ny = ys.iter().map(|v| v * v).sum::<f64>().sqrt();
            let scale = if ny > 0.0 { nx / ny } else { 0.0 };
            let yn: Vec<f64> = xs.iter().zip(ys).map(|(&a, &b)| (b * scale).min(a * clip)).collect();
            let (a, e) = (centred(xs), centred(&yn));
            let (mut aa, mut bb, mut cc) = (0.0, 0.0, 0.0);
            for (p, q) in a.iter().zip(&e) {
                aa += p * p;
                bb += q * q;
                cc += p * q;
            }
            let den = (aa * bb).sqrt();
            total += if den > 0.0 { cc / den } else { 0.0 };
            count += 1;
        }
    }
    Ok(total / count as f64)
}
