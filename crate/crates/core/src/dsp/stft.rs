//! Short-time Fourier analysis and weighted overlap-add synthesis.
//!
//! Padding: `fft_size - hop` zeros are prepended and the tail is padded until
//! every input sample is covered by `fft_size / hop` frames. Synthesis uses the
//! analysis window again and divides by the periodic sum of squared windows, so
//! an unmodified spectrogram reconstructs its input exactly (up to rounding).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::fft::Fft;
use crate::error::{Error, Result};
use crate::tensor::{Tensor, C64, ZERO};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    /// Periodic Hann window.
    Hann,
    Rectangular,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub fft_size: usize,
    pub hop: usize,
    pub window: WindowKind,
    pub sample_rate: u32,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            fft_size: 256,
            hop: 128,
            window: WindowKind::Hann,
            sample_rate: 16_000,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.fft_size < 2 || !self.fft_size.is_power_of_two() {
            problems.push(format!("fft_size {} must be a power of two >= 2", self.fft_size));
        }
        if self.hop == 0 || self.hop > self.fft_size || !self.fft_size.is_multiple_of(self.hop) {
            problems.push(format!("hop {} must divide fft_size {}", self.hop, self.fft_size));
        }
        if self.sample_rate == 0 {
            problems.push("sample_rate must be positive".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// Number of non-negative frequency bins.
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn pad_left(&self) -> usize {
        self.fft_size - self.hop
    }

    /// Frames produced for a signal of `len` samples.
    pub fn frames(&self, len: usize) -> usize {
        len.div_ceil(self.hop) + self.fft_size / self.hop - 1
    }

    /// Algorithmic latency of frame-by-frame processing, in samples.
    pub fn latency(&self) -> usize {
        self.fft_size - self.hop
    }

    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.hop as f64
    }

    pub fn window(&self) -> Vec<f64> {
        let n = self.fft_size;
        match self.window {
            WindowKind::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
                .collect(),
            WindowKind::Rectangular => vec![1.0; n],
        }
    }
}

/// Multi-channel complex spectrogram laid out as `[channel, frame, bin]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub config: StftConfig,
    /// Length of the analysed time signal, used to trim synthesis output.
    pub signal_len: usize,
    data: Tensor,
}

impl ComplexSpectrogram {
    pub fn new(config: StftConfig, signal_len: usize, data: Tensor) -> Result<Self> {
        if data.shape().len() != 3 {
            return Err(Error::shape("spectrogram tensor must be [channels, frames, bins]"));
        }
        if data.shape()[2] != config.bins() {
            return Err(Error::shape(format!(
                "spectrogram has {} bins, config implies {}",
                data.shape()[2],
                config.bins()
            )));
        }
        Ok(ComplexSpectrogram {
            config,
            signal_len,
            data,
        })
    }

    /// Stacks single-channel spectrograms along the channel axis.
    pub fn stack(parts: &[ComplexSpectrogram]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::shape("nothing to stack"))?;
        let mut data = Vec::new();
        let mut channels = 0;
        for p in parts {
            if p.config != first.config || p.frames() != first.frames() {
                return Err(Error::shape("stacked spectrograms disagree in config or frames"));
            }
            channels += p.channels();
            data.extend_from_slice(p.data.data());
        }
        let t = Tensor::from_vec(&[channels, first.frames(), first.bins()], data)?;
        ComplexSpectrogram::new(first.config.clone(), first.signal_len, t)
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn bins(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn get(&self, channel: usize, bin: usize, frame: usize) -> C64 {
        self.data.data()[(channel * self.frames() + frame) * self.bins() + bin]
    }

    pub fn frame(&self, channel: usize, frame: usize) -> &[C64] {
        let b = self.bins();
        let start = (channel * self.frames() + frame) * b;
        &self.data.data()[start..start + b]
    }

    pub fn channel(&self, channel: usize) -> &[C64] {
        let n = self.frames() * self.bins();
        &self.data.data()[channel * n..(channel + 1) * n]
    }
}

/// Reusable analysis/synthesis engine for one [`StftConfig`].
#[derive(Debug, Clone)]
pub struct Stft {
    config: StftConfig,
    fft: Fft,
    window: Vec<f64>,
    /// Reciprocal of the summed squared windows, indexed by `position % hop`.
    inv_norm: Vec<f64>,
}

impl Stft {
    pub fn new(config: &StftConfig) -> Result<Self> {
        config.validate()?;
        let window = config.window();
        let inv_norm = (0..config.hop)
            .map(|p| {
                let s: f64 = (p..config.fft_size)
                    .step_by(config.hop)
                    .map(|i| window[i] * window[i])
                    .sum();
                1.0 / s
            })
            .collect();
        Ok(Stft {
            config: config.clone(),
            fft: Fft::new(config.fft_size)?,
            window,
            inv_norm,
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    pub fn inv_norm(&self) -> &[f64] {
        &self.inv_norm
    }

    pub fn fft(&self) -> &Fft {
        &self.fft
    }

    /// Windowed DFT of one `fft_size` frame into `out` (`bins` values).
    pub fn analyze_frame(&self, frame: &[f64], scratch: &mut [C64], out: &mut [C64]) {
        for ((s, &x), &w) in scratch.iter_mut().zip(frame).zip(&self.window) {
            *s = C64::new(x * w, 0.0);
        }
        self.fft.forward(scratch);
        out.copy_from_slice(&scratch[..out.len()]);
    }

    /// Inverse DFT of a half spectrum (imaginary parts of DC and Nyquist are
    /// ignored) multiplied by the synthesis window.
    pub fn synthesize_frame(&self, spec: &[C64], scratch: &mut [C64], out: &mut [f64]) {
        let n = self.config.fft_size;
        let bins = spec.len();
        scratch[..bins].copy_from_slice(spec);
        for k in 1..n - bins + 1 {
            scratch[n - k] = spec[k].conj();
        }
        self.fft.inverse(scratch);
        for ((o, s), &w) in out.iter_mut().zip(scratch.iter()).zip(&self.window) {
            *o = s.re * w;
        }
    }

    /// Single-channel STFT, shape `[1, frames, bins]`.
    pub fn stft(&self, wave: &[f64]) -> Result<ComplexSpectrogram> {
        let cfg = &self.config;
        if wave.len() < cfg.fft_size {
            return Err(Error::Length {
                needed: cfg.fft_size,
                got: wave.len(),
            });
        }
        let frames = cfg.frames(wave.len());
        let bins = cfg.bins();
        let pad = cfg.pad_left();
        let mut padded = vec![0.0; (frames - 1) * cfg.hop + cfg.fft_size];
        padded[pad..pad + wave.len()].copy_from_slice(wave);
        let mut data = vec![ZERO; frames * bins];
        let mut scratch = vec![ZERO; cfg.fft_size];
        for (t, out) in data.chunks_exact_mut(bins).enumerate() {
            let start = t * cfg.hop;
            self.analyze_frame(&padded[start..start + cfg.fft_size], &mut scratch, out);
        }
        ComplexSpectrogram::new(cfg.clone(), wave.len(), Tensor::from_vec(&[1, frames, bins], data)?)
    }

    /// Weighted overlap-add synthesis of frames laid out `[frame, bin]`.
    pub fn istft_frames(&self, frames: &[C64], bins: usize, signal_len: usize) -> Result<Vec<f64>> {
        let cfg = &self.config;
        if bins != cfg.bins() {
            return Err(Error::shape(format!("istft expects {} bins, got {bins}", cfg.bins())));
        }
        if frames.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Numeric("non-finite spectrogram entry".into()));
        }
        let t_count = frames.len() / bins;
        let mut buf = vec![0.0; (t_count.max(1) - 1) * cfg.hop + cfg.fft_size];
        let mut scratch = vec![ZERO; cfg.fft_size];
        let mut seg = vec![0.0; cfg.fft_size];
        for (t, spec) in frames.chunks_exact(bins).enumerate() {
            self.synthesize_frame(spec, &mut scratch, &mut seg);
            let start = t * cfg.hop;
            for (b, s) in buf[start..start + cfg.fft_size].iter_mut().zip(&seg) {
                *b += s;
            }
        }
        for (i, b) in buf.iter_mut().enumerate() {
            *b *= self.inv_norm[i % cfg.hop];
        }
        let pad = cfg.pad_left();
        let end = (pad + signal_len).min(buf.len());
        let mut out = buf[pad.min(end)..end].to_vec();
        out.resize(signal_len, 0.0);
        Ok(out)
    }

    /// Synthesises every channel of a spectrogram.
    pub fn istft(&self, spec: &ComplexSpectrogram) -> Result<Vec<Vec<f64>>> {
        if spec.config != self.config {
            return Err(Error::shape("spectrogram was produced with a different config"));
        }
        (0..spec.channels())
            .map(|c| self.istft_frames(spec.channel(c), spec.bins(), spec.signal_len))
            .collect()
    }
}

/// Convenience wrapper around [`Stft::stft`].
pub fn stft(wave: &[f64], config: &StftConfig) -> Result<ComplexSpectrogram> {
    Stft::new(config)?.stft(wave)
}

/// Convenience wrapper around [`Stft::istft`] for a single channel.
pub fn istft(spec: &ComplexSpectrogram) -> Result<Vec<f64>> {
    if spec.channels() != 1 {
        return Err(Error::shape("istft expects a single-channel spectrogram"));
    }
    let engine = Stft::new(&spec.config)?;
    engine.istft_frames(spec.channel(0), spec.bins(), spec.signal_len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_wave(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn default_config_has_129_bins() {
        let cfg = StftConfig::default();
        assert_eq!(cfg.bins(), 129);
        assert_eq!(cfg.latency(), 128);
    }

    #[test]
    fn zero_wave_gives_zero_spectrum() {
        let spec = stft(&vec![0.0; 32_000], &StftConfig::default()).unwrap();
        assert_eq!(spec.bins(), 129);
        assert!(spec.tensor().data().iter().all(|z| *z == ZERO));
        let back = istft(&spec).unwrap();
        assert!(back.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn impulse_matches_direct_dft_of_window() {
        // With the left pad, sample 0 of the input sits at offset pad in frame 0.
        let cfg = StftConfig {
            fft_size: 16,
            hop: 8,
            window: WindowKind::Rectangular,
            sample_rate: 16_000,
        };
        let mut x = vec![0.0; 32];
        x[0] = 1.0;
        let spec = stft(&x, &cfg).unwrap();
        let pad = cfg.pad_left();
        for k in 0..cfg.bins() {
            let direct: C64 = (0..cfg.fft_size)
                .map(|n| {
                    let v = if n == pad { 1.0 } else { 0.0 };
                    let a = -2.0 * PI * (k * n) as f64 / cfg.fft_size as f64;
                    C64::new(a.cos(), a.sin()) * v
                })
                .sum();
            assert!((spec.get(0, k, 0) - direct).norm() < 1e-12);
        }
    }

    #[test]
    fn too_short_is_length_error() {
        let err = stft(&[0.0; 100], &StftConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Length { needed: 256, got: 100 }));
    }

    #[test]
    fn istft_rejects_wrong_bin_count() {
        let engine = Stft::new(&StftConfig::default()).unwrap();
        assert!(matches!(
            engine.istft_frames(&[ZERO; 64], 64, 100),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn round_trip_f64_and_f32() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = StftConfig::default();
        let engine = Stft::new(&cfg).unwrap();
        for len in [256usize, 1000, 32_000] {
            let x = random_wave(&mut rng, len);
            let y = engine.istft(&engine.stft(&x).unwrap()).unwrap().remove(0);
            assert_eq!(y.len(), len);
            let err = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-12, "len {len}: {err}");
            let err32 = x
                .iter()
                .zip(&y)
                .map(|(a, b)| (*a as f32 - *b as f32).abs())
                .fold(0.0, f32::max);
            assert!(err32 < 1e-6);
        }
    }

    #[test]
    fn sinusoid_reconstruction_snr() {
        let cfg = StftConfig::default();
        let x: Vec<f64> = (0..32_000)
            .map(|n| (2.0 * PI * 500.0 * n as f64 / 16_000.0).sin())
            .collect();
        let y = istft(&stft(&x, &cfg).unwrap()).unwrap();
        let sig: f64 = x.iter().map(|v| v * v).sum();
        let err: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum();
        assert!(10.0 * (sig / err).log10() > 120.0);
    }

    #[test]
    fn cola_sum_is_periodic() {
        let cfg = StftConfig::default();
        let engine = Stft::new(&cfg).unwrap();
        let w = engine.window();
        for p in 0..cfg.hop {
            let s = w[p] * w[p] + w[p + cfg.hop] * w[p + cfg.hop];
            assert!((s * engine.inv_norm()[p] - 1.0).abs() < 1e-12);
        }
    }

    proptest::proptest! {
        #[test]
        fn frame_count_formula(len in 256usize..50_000) {
            let cfg = StftConfig::default();
            let spec = stft(&vec![0.0; len], &cfg).unwrap();
            let padded = cfg.pad_left() + len;
            // frames cover the padded signal plus one extra hop of tail
            let expected = 1 + (padded.div_ceil(cfg.hop) * cfg.hop - cfg.fft_size) / cfg.hop + 1;
            proptest::prop_assert_eq!(spec.frames(), expected);
            proptest::prop_assert_eq!(spec.frames(), cfg.frames(len));
        }

        #[test]
        fn linearity(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfg = StftConfig::default();
            let x = random_wave(&mut rng, 2048);
            let y = random_wave(&mut rng, 2048);
            let mix: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
            let sx = stft(&x, &cfg).unwrap();
            let sy = stft(&y, &cfg).unwrap();
            let sm = stft(&mix, &cfg).unwrap();
            let scale = sm.tensor().data().iter().map(|z| z.norm()).fold(1e-12, f64::max);
            for ((m, p), q) in sm.tensor().data().iter().zip(sx.tensor().data()).zip(sy.tensor().data()) {
                proptest::prop_assert!((m - (p * a + q * b)).norm() / scale < 1e-6);
            }
        }
    }
}
