//! Model configuration.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dsp::{BandSplitConfig, StftConfig};
use crate::error::{Error, Result};

/// How the two head outputs become the clean low-band estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictorVariant {
    /// Heads estimate the speech and noise RATFs; both ears are restored.
    Ratfs,
    /// Heads estimate one complex mask per ear.
    Masks,
    /// Head A estimates the speech RATF, head B the right-ear mask.
    MaskRatf,
}

impl PredictorVariant {
    pub const ALL: [PredictorVariant; 3] = [
        PredictorVariant::Ratfs,
        PredictorVariant::Masks,
        PredictorVariant::MaskRatf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PredictorVariant::Ratfs => "ratfs",
            PredictorVariant::Masks => "masks",
            PredictorVariant::MaskRatf => "mask-ratf",
        }
    }
}

impl fmt::Display for PredictorVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PredictorVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ratfs" => Ok(PredictorVariant::Ratfs),
            "masks" => Ok(PredictorVariant::Masks),
            "mask-ratf" => Ok(PredictorVariant::MaskRatf),
            other => Err(Error::config(format!(
                "unknown predictor variant '{other}' (expected ratfs, masks or mask-ratf)"
            ))),
        }
    }
}

/// Kernel sizes of the extractor (along frequency), the dual-path block and
/// the predictor heads (both along time).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelSizes {
    pub extractor: usize,
    pub dualpath: usize,
    pub predictor: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LbccnConfig {
    pub stft: StftConfig,
    pub bands: BandSplitConfig,
    /// Shared extractor blocks after the two band paths (M).
    pub extractor_blocks: usize,
    /// Blocks per predictor head (N).
    pub predictor_blocks: usize,
    /// Two band-path blocks followed by the M shared blocks.
    pub extractor_channels: Vec<usize>,
    pub dualpath_channels: Vec<usize>,
    pub predictor_channels: Vec<usize>,
    pub kernel_sizes: KernelSizes,
    /// Frequency extent of the 2D kernels.
    pub freq_kernel_2d: usize,
    pub extractor_dilations: Vec<usize>,
    pub dualpath_dilations: Vec<usize>,
    pub predictor_dilations: Vec<usize>,
    pub predictor_variant: PredictorVariant,
    pub ratf_eps: f64,
    pub norm_eps: f64,
    /// Causal smoothing of the dual-path norm statistics over frames.
    pub dualpath_norm_smoothing: f64,
}

impl Default for LbccnConfig {
    fn default() -> Self {
        LbccnConfig {
            stft: StftConfig::default(),
            bands: BandSplitConfig::default(),
            extractor_blocks: 2,
            predictor_blocks: 3,
            extractor_channels: vec![40, 40, 40, 40],
            dualpath_channels: vec![16],
            predictor_channels: vec![16, 16, 1],
            kernel_sizes: KernelSizes {
                extractor: 5,
                dualpath: 9,
                predictor: 9,
            },
            freq_kernel_2d: 3,
            extractor_dilations: vec![1, 1, 2, 4],
            dualpath_dilations: vec![1],
            predictor_dilations: vec![1, 2, 4],
            predictor_variant: PredictorVariant::Ratfs,
            ratf_eps: 1e-3,
            norm_eps: 1e-5,
            dualpath_norm_smoothing: 0.99,
        }
    }
}

impl LbccnConfig {
    /// Small configuration for gradient checks and quick tests: `q = 8` and
    /// channel lists `{4,4,4,4}`, `{4}`, `{4,4,1}`.
    pub fn toy() -> Self {
        LbccnConfig {
            bands: BandSplitConfig { q: 8, f_total: 129 },
            extractor_channels: vec![4, 4, 4, 4],
            dualpath_channels: vec![4],
            predictor_channels: vec![4, 4, 1],
            ..LbccnConfig::default()
        }
    }

    pub fn with_variant(mut self, v: PredictorVariant) -> Self {
        self.predictor_variant = v;
        self
    }

    pub fn with_q(mut self, q: usize) -> Self {
        self.bands.q = q;
        self
    }

    /// Every violated invariant, in a stable order.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if let Err(Error::Config(list)) = self.stft.validate() {
            v.extend(list);
        }
        if self.bands.f_total != self.stft.bins() {
            v.push(format!(
                "bands.f_total = {} but the STFT yields {} bins",
                self.bands.f_total,
                self.stft.bins()
            ));
        }
        if self.bands.q == 0 || self.bands.q > self.bands.f_total {
            v.push(format!(
                "bands.q = {} outside [1, {}]",
                self.bands.q, self.bands.f_total
            ));
        }
        if self.extractor_blocks == 0 {
            v.push("extractor_blocks (M) must be at least 1".into());
        }
        if self.predictor_blocks == 0 {
            v.push("predictor_blocks (N) must be at least 1".into());
        }
        if self.extractor_channels.len() != self.extractor_blocks + 2 {
            v.push(format!(
                "extractor_channels has {} entries, expected 2 + M = {}",
                self.extractor_channels.len(),
                self.extractor_blocks + 2
            ));
        }
        if self.extractor_dilations.len() != self.extractor_channels.len() {
            v.push("extractor_dilations must match extractor_channels in length".into());
        }
        if self.extractor_channels.len() >= 2 && self.extractor_channels[0] != self.extractor_channels[1] {
            v.push("both band-path blocks must have the same output channels".into());
        }
        if self.dualpath_channels.is_empty() {
            v.push("dualpath_channels must hold at least one block".into());
        }
        if self.dualpath_dilations.len() != self.dualpath_channels.len() {
            v.push("dualpath_dilations must match dualpath_channels in length".into());
        }
        if self.predictor_channels.len() != self.predictor_blocks {
            v.push(format!(
                "predictor_channels has {} entries, expected N = {}",
                self.predictor_channels.len(),
                self.predictor_blocks
            ));
        }
        if self.predictor_channels.last() != Some(&1) {
            v.push("the last predictor block must output 1 channel".into());
        }
        if self.predictor_dilations.len() != self.predictor_channels.len() {
            v.push("predictor_dilations must match predictor_channels in length".into());
        }
        let all_channels = self
            .extractor_channels
            .iter()
            .chain(&self.dualpath_channels)
            .chain(&self.predictor_channels);
        if all_channels.clone().any(|&c| c == 0) {
            v.push("channel counts must be positive".into());
        }
        let dil = self
            .extractor_dilations
            .iter()
            .chain(&self.dualpath_dilations)
            .chain(&self.predictor_dilations);
        if dil.clone().any(|&d| d == 0) {
            v.push("dilations must be at least 1".into());
        }
        let k = self.kernel_sizes;
        if k.extractor.is_multiple_of(2) || k.extractor == 0 {
            v.push(format!("extractor kernel {} must be odd", k.extractor));
        }
        if k.dualpath == 0 || k.predictor == 0 {
            v.push("time kernel sizes must be at least 1".into());
        }
        if self.freq_kernel_2d.is_multiple_of(2) {
            v.push(format!("freq_kernel_2d {} must be odd", self.freq_kernel_2d));
        }
        if !(self.ratf_eps > 0.0 && self.ratf_eps.is_finite()) {
            v.push("ratf_eps must be positive".into());
        }
        if !(self.norm_eps > 0.0 && self.norm_eps.is_finite()) {
            v.push("norm_eps must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dualpath_norm_smoothing) {
            v.push("dualpath_norm_smoothing must lie in [0, 1)".into());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }

    /// Bins of the high band.
    pub fn high_bins(&self) -> usize {
        self.bands.f_total - self.bands.q
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        LbccnConfig::default().validate().unwrap();
        LbccnConfig::toy().validate().unwrap();
    }

    #[test]
    fn zero_extractor_blocks_rejected() {
        let cfg = LbccnConfig {
            extractor_blocks: 0,
            ..Default::default()
        };
        let Err(Error::Config(v)) = cfg.validate() else {
            panic!()
        };
        assert!(v.iter().any(|m| m.contains("(M)")));
        assert!(v.len() >= 2, "lists every violation: {v:?}");
    }

    #[test]
    fn variant_round_trips_through_text() {
        for v in PredictorVariant::ALL {
            assert_eq!(v.as_str().parse::<PredictorVariant>().unwrap(), v);
        }
        assert!("bogus".parse::<PredictorVariant>().is_err());
    }
}
