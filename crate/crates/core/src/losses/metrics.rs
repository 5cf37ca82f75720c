//! Per-utterance evaluation report.

use serde::{Deserialize, Serialize};

use super::components::{self, IpdMode, SNR_EPS};
use super::stoi::stoi;
use crate::dsp::{BinauralWaveform, Stft, StftConfig};
use crate::error::{Error, Result};
use crate::model::network::{analyze, frame_major};

/// Metrics of one binaural signal against the clean reference.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SignalMetrics {
    pub snr_db: [f64; 2],
    pub stoi: [f64; 2],
    pub ild_error: f64,
    pub ipd_error: f64,
}

impl SignalMetrics {
    fn minus(&self, other: &SignalMetrics) -> SignalMetrics {
        SignalMetrics {
            snr_db: [self.snr_db[0] - other.snr_db[0], self.snr_db[1] - other.snr_db[1]],
            stoi: [self.stoi[0] - other.stoi[0], self.stoi[1] - other.stoi[1]],
            ild_error: self.ild_error - other.ild_error,
            ipd_error: self.ipd_error - other.ipd_error,
        }
    }

    pub fn mean_snr_db(&self) -> f64 {
        0.5 * (self.snr_db[0] + self.snr_db[1])
    }

    pub fn mean_stoi(&self) -> f64 {
        0.5 * (self.stoi[0] + self.stoi[1])
    }
}

/// Enhanced and noisy metrics with their differences (enhanced - noisy).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub id: Option<String>,
    pub enhanced: SignalMetrics,
    pub noisy: SignalMetrics,
    pub delta: SignalMetrics,
}

impl MetricsReport {
    /// One JSON object on a single line.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("metrics serialise")
    }
}

/// `10 log10(|x|^2 / (|x_hat - x|^2 + eps))`.
pub fn snr_db(reference: &[f32], est: &[f32]) -> f64 {
    let sig: f64 = reference.iter().map(|&v| (v as f64).powi(2)).sum();
    let err: f64 = reference
        .iter()
        .zip(est)
        .map(|(&a, &b)| (b as f64 - a as f64).powi(2))
        .sum();
    10.0 * (sig / (err + SNR_EPS)).log10()
}

fn signal_metrics(
    engine: &Stft,
    clean: &BinauralWaveform,
    clean_tf: &crate::tensor::Tensor,
    sig: &BinauralWaveform,
) -> Result<SignalMetrics> {
    let tf = frame_major(analyze(engine, sig)?.tensor())?;
    let mut out = SignalMetrics {
        ild_error: components::ild_loss(&tf, clean_tf, false, None)?.0,
        ipd_error: components::ipd_loss(&tf, clean_tf, IpdMode::MagnitudeRatio, false, None)?.0,
        ..Default::default()
    };
    for ear in 0..2 {
        out.snr_db[ear] = snr_db(clean.ears()[ear], sig.ears()[ear]);
        out.stoi[ear] = stoi(&clean.ear_f64(ear), &sig.ear_f64(ear), clean.sample_rate)?;
    }
    Ok(out)
}

/// Full-band metrics of `enhanced` and `noisy` against `clean`.
pub fn evaluate(
    clean: &BinauralWaveform,
    noisy: &BinauralWaveform,
    enhanced: &BinauralWaveform,
) -> Result<MetricsReport> {
    if clean.len() != noisy.len() || clean.len() != enhanced.len() {
        return Err(Error::shape(format!(
            "evaluation signals differ in length: clean {}, noisy {}, enhanced {}",
            clean.len(),
            noisy.len(),
            enhanced.len()
        )));
    }
    if clean.sample_rate != noisy.sample_rate || clean.sample_rate != enhanced.sample_rate {
        return Err(Error::Input("evaluation signals differ in sample rate".into()));
    }
    let engine = Stft::new(&StftConfig {
        sample_rate: clean.sample_rate,
        ..StftConfig::default()
    })?;
    let clean_tf = frame_major(analyze(&engine, clean)?.tensor())?;
    let e = signal_metrics(&engine, clean, &clean_tf, enhanced)?;
    let n = signal_metrics(&engine, clean, &clean_tf, noisy)?;
    Ok(MetricsReport {
        id: None,
        delta: e.minus(&n),
        enhanced: e,
        noisy: n,
    })
}
