//! Splitting a spectrogram into a processed low band and a passthrough high band.

use serde::{Deserialize, Serialize};

use super::stft::{ComplexSpectrogram, StftConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandSplitConfig {
    /// Number of lowest bins routed through the network.
    pub q: usize,
    pub f_total: usize,
}

impl Default for BandSplitConfig {
    fn default() -> Self {
        BandSplitConfig { q: 40, f_total: 129 }
    }
}

impl BandSplitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.q == 0 || self.q > self.f_total {
            return Err(Error::config(format!(
                "band split q={} must lie in [1, {}]",
                self.q, self.f_total
            )));
        }
        Ok(())
    }

    pub fn high(&self) -> usize {
        self.f_total - self.q
    }
}

/// Returns `(low, high)` tensors shaped `[channels, frames, q]` and
/// `[channels, frames, f_total - q]`.
pub fn band_split(spec: &ComplexSpectrogram, bands: &BandSplitConfig) -> Result<(Tensor, Tensor)> {
    bands.validate()?;
    if bands.f_total != spec.bins() {
        return Err(Error::config(format!(
            "band split expects {} bins, spectrogram has {}",
            bands.f_total,
            spec.bins()
        )));
    }
    let (c, t, f) = (spec.channels(), spec.frames(), spec.bins());
    let mut low = Vec::with_capacity(c * t * bands.q);
    let mut high = Vec::with_capacity(c * t * bands.high());
    for row in spec.tensor().data().chunks_exact(f) {
        low.extend_from_slice(&row[..bands.q]);
        high.extend_from_slice(&row[bands.q..]);
    }
    Ok((
        Tensor::from_vec(&[c, t, bands.q], low)?,
        Tensor::from_vec(&[c, t, bands.high()], high)?,
    ))
}

/// Concatenates low and high bands along frequency.
pub fn band_merge(low: &Tensor, high: &Tensor, config: &StftConfig, signal_len: usize) -> Result<ComplexSpectrogram> {
    let (ls, hs) = (low.shape(), high.shape());
    if ls.len() != 3 || hs.len() != 3 {
        return Err(Error::shape("band tensors must be [channels, frames, bins]"));
    }
    if ls[0] != hs[0] || ls[1] != hs[1] {
        return Err(Error::shape(format!(
            "cannot merge bands with shapes {ls:?} and {hs:?}"
        )));
    }
    let (q, h) = (ls[2], hs[2]);
    let mut data = Vec::with_capacity(low.len() + high.len());
    if h == 0 {
        data.extend_from_slice(low.data());
    } else {
        for (lr, hr) in low.data().chunks_exact(q).zip(high.data().chunks_exact(h)) {
            data.extend_from_slice(lr);
            data.extend_from_slice(hr);
        }
    }
    ComplexSpectrogram::new(
        config.clone(),
        signal_len,
        Tensor::from_vec(&[ls[0], ls[1], q + h], data)?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::stft::stft;
    use crate::tensor::C64;

    fn spec() -> ComplexSpectrogram {
        let cfg = StftConfig::default();
        let x: Vec<f64> = (0..4000).map(|i| ((i * 7919) % 113) as f64 / 113.0 - 0.5).collect();
        let a = stft(&x, &cfg).unwrap();
        let b = stft(&x.iter().rev().copied().collect::<Vec<_>>(), &cfg).unwrap();
        ComplexSpectrogram::stack(&[a, b]).unwrap()
    }

    #[test]
    fn default_split_shapes() {
        let s = spec();
        let (low, high) = band_split(&s, &BandSplitConfig::default()).unwrap();
        assert_eq!(low.shape(), &[2, s.frames(), 40]);
        assert_eq!(high.shape(), &[2, s.frames(), 89]);
    }

    #[test]
    fn merge_inverts_split_exactly() {
        let s = spec();
        for q in [1, 40, 128, 129] {
            let (low, high) = band_split(&s, &BandSplitConfig { q, f_total: 129 }).unwrap();
            let m = band_merge(&low, &high, &s.config, s.signal_len).unwrap();
            assert_eq!(m, s);
        }
    }

    #[test]
    fn full_q_leaves_high_empty() {
        let s = spec();
        let (low, high) = band_split(&s, &BandSplitConfig { q: 129, f_total: 129 }).unwrap();
        assert!(high.is_empty());
        let m = band_merge(&low, &high, &s.config, s.signal_len).unwrap();
        assert_eq!(m.tensor(), &low);
    }

    #[test]
    fn q_out_of_range() {
        let s = spec();
        assert!(matches!(
            band_split(&s, &BandSplitConfig { q: 0, f_total: 129 }),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            band_split(&s, &BandSplitConfig { q: 130, f_total: 129 }),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn merge_rejects_mismatched_frames() {
        let low = Tensor::zeros(&[2, 10, 40]);
        let high = Tensor::zeros(&[2, 11, 89]);
        assert!(matches!(
            band_merge(&low, &high, &StftConfig::default(), 100),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn processed_low_keeps_high_bins() {
        let s = spec();
        let bands = BandSplitConfig::default();
        let (mut low, high) = band_split(&s, &bands).unwrap();
        for z in low.data_mut() {
            *z *= C64::new(0.3, -0.2);
        }
        let m = band_merge(&low, &high, &s.config, s.signal_len).unwrap();
        for c in 0..2 {
            for t in 0..s.frames() {
                assert_eq!(&m.frame(c, t)[40..], &s.frame(c, t)[40..]);
            }
        }
    }
}
