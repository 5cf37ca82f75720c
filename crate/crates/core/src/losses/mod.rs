//! Training objectives and evaluation metrics.

pub mod components;
pub mod metrics;
pub mod stoi;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dsp::{BinauralWaveform, Stft, StftConfig};
use crate::error::{Error, Result};
use crate::nn::{Tape, Var};
use crate::tensor::Tensor;
use components::{IpdMode, ThirdOctaveBands};

pub use metrics::{evaluate, MetricsReport};
pub use stoi::stoi;

/// Third-octave bands used by the training STOI surrogate.
pub const SURROGATE_BANDS: usize = 15;
/// Segment length of the surrogate, in frames (384 ms at 8 ms hops).
pub const SURROGATE_SEGMENT: usize = 48;

/// Weights of the composite loss and the signal/noise balance `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub k: f64,
    pub w_snr: f64,
    pub w_stoi: f64,
    pub w_ipd: f64,
    pub w_ild: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            k: 0.5,
            w_snr: 1.0,
            w_stoi: 10.0,
            w_ipd: 1.0,
            w_ild: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.k) {
            return Err(Error::config(format!("k = {} outside [0, 1]", self.k)));
        }
        let w = [self.w_snr, self.w_stoi, self.w_ipd, self.w_ild];
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("loss weights must be finite"));
        }
        Ok(())
    }
}

/// Shared state for evaluating the objective on low-band spectra.
#[derive(Debug, Clone)]
pub struct LossContext {
    pub engine: Arc<Stft>,
    pub bands: Arc<ThirdOctaveBands>,
    pub segment: usize,
}

impl LossContext {
    /// Context for low bands of `q` bins.
    pub fn new(stft: &StftConfig, q: usize) -> Result<Self> {
        let engine = Arc::new(Stft::new(stft)?);
        let bands = Arc::new(ThirdOctaveBands::new(
            stft.fft_size,
            stft.sample_rate,
            SURROGATE_BANDS,
            q,
        ));
        Ok(LossContext {
            engine,
            bands,
            segment: SURROGATE_SEGMENT,
        })
    }

    /// Samples fully covered by `frames` analysis frames.
    pub fn covered_len(&self, frames: usize) -> usize {
        let c = self.engine.config();
        frames.saturating_sub(c.fft_size / c.hop - 1) * c.hop
    }

    /// Low-band-only resynthesis of `[frames, 2, q]` data.
    pub fn low_band_waves(&self, low: &Tensor) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let v = tape.constant(low.clone());
        let len = self.covered_len(low.shape()[0]);
        let w = tape.istft(v, self.engine.clone(), len)?;
        Ok(tape
            .value(w)
            .data()
            .chunks_exact(len.max(1))
            .map(|c| c.iter().map(|z| z.re).collect())
            .collect())
    }
}

/// Value of each weighted term of the composite loss.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CompositeTerms {
    pub snr: f64,
    pub stoi: f64,
    pub ipd: f64,
    pub ild: f64,
    pub total: f64,
}

/// Tape handles of one composite loss.
#[derive(Debug, Clone, Copy)]
pub struct CompositeVars {
    pub snr: Var,
    pub stoi: Var,
    pub ipd: Var,
    pub ild: Var,
    pub total: Var,
}

impl CompositeVars {
    pub fn terms(&self, tape: &Tape) -> CompositeTerms {
        let v = |x: Var| tape.value(x).data()[0].re;
        CompositeTerms {
            snr: v(self.snr),
            stoi: v(self.stoi),
            ipd: v(self.ipd),
            ild: v(self.ild),
            total: v(self.total),
        }
    }
}

/// `w_snr L_snr + w_stoi L_stoi + w_ipd L_ipd + w_ild L_ild` on a low-band
/// estimate `[frames, 2, q]`. The waveform terms use low-band resyntheses.
pub fn composite_on_tape(
    tape: &mut Tape,
    est: Var,
    reference: &Tensor,
    reference_waves: &[Vec<f64>],
    ctx: &LossContext,
    w: &LossWeights,
) -> Result<CompositeVars> {
    let len = ctx.covered_len(reference.shape()[0]);
    let wave = tape.istft(est, ctx.engine.clone(), len)?;
    let snr = tape.snr_loss(wave, reference_waves.to_vec())?;
    let stoi = tape.stoi_loss(est, reference.clone(), ctx.bands.clone(), ctx.segment)?;
    let ipd = tape.ipd_loss(est, reference.clone())?;
    let ild = tape.ild_loss(est, reference.clone())?;
    let total = tape.weighted_sum(&[(snr, w.w_snr), (stoi, w.w_stoi), (ipd, w.w_ipd), (ild, w.w_ild)])?;
    Ok(CompositeVars {
        snr,
        stoi,
        ipd,
        ild,
        total,
    })
}

/// Clean and noise low-band references of one training example.
#[derive(Debug, Clone)]
pub struct Targets {
    pub clean: Tensor,
    pub noise: Tensor,
    pub clean_waves: Vec<Vec<f64>>,
    pub noise_waves: Vec<Vec<f64>>,
}

impl Targets {
    pub fn new(ctx: &LossContext, clean: Tensor, noise: Tensor) -> Result<Self> {
        let clean_waves = ctx.low_band_waves(&clean)?;
        let noise_waves = ctx.low_band_waves(&noise)?;
        Ok(Targets {
            clean,
            noise,
            clean_waves,
            noise_waves,
        })
    }
}

/// `k L(x_hat, x) + (1 - k) L(y - x_hat, n)`; a term whose weight is zero is
/// not evaluated at all.
pub fn total_on_tape(
    tape: &mut Tape,
    est: Var,
    noisy: &Tensor,
    targets: &Targets,
    ctx: &LossContext,
    w: &LossWeights,
) -> Result<Var> {
    w.validate()?;
    let mut terms = Vec::with_capacity(2);
    if w.k != 0.0 {
        let s = composite_on_tape(tape, est, &targets.clean, &targets.clean_waves, ctx, w)?;
        terms.push((s.total, w.k));
    }
    if w.k != 1.0 {
        let n_hat = tape.sub_from(noisy, est)?;
        let n = composite_on_tape(tape, n_hat, &targets.noise, &targets.noise_waves, ctx, w)?;
        terms.push((n.total, 1.0 - w.k));
    }
    tape.weighted_sum(&terms)
}

fn waves(w: &BinauralWaveform) -> Vec<Vec<f64>> {
    vec![w.ear_f64(0), w.ear_f64(1)]
}

/// SNR loss between binaural waveforms.
pub fn loss_snr(est: &BinauralWaveform, reference: &BinauralWaveform) -> Result<f64> {
    Ok(components::snr_loss(&waves(est), &waves(reference), false)?.0)
}

/// `-(1/2) sum_ears stoi(x_i, x_hat_i)` with the evaluation STOI.
pub fn loss_stoi(est: &BinauralWaveform, reference: &BinauralWaveform) -> Result<f64> {
    if est.len() != reference.len() || est.sample_rate != reference.sample_rate {
        return Err(Error::shape("stoi loss inputs differ in length or rate"));
    }
    let mut total = 0.0;
    for ear in 0..2 {
        total += stoi(&reference.ear_f64(ear), &est.ear_f64(ear), reference.sample_rate)?;
    }
    Ok(-0.5 * total)
}

/// ILD error between `[frames, 2, bins]` spectra.
pub fn loss_ild(est: &Tensor, reference: &Tensor) -> Result<f64> {
    Ok(components::ild_loss(est, reference, false, None)?.0)
}

/// IPD error between `[frames, 2, bins]` spectra.
pub fn loss_ipd(est: &Tensor, reference: &Tensor, mode: IpdMode) -> Result<f64> {
    Ok(components::ipd_loss(est, reference, mode, false, None)?.0)
}

/// Composite loss of a low-band estimate `[frames, 2, q]`.
pub fn loss_composite(est: &Tensor, reference: &Tensor, ctx: &LossContext, w: &LossWeights) -> Result<CompositeTerms> {
    let mut tape = Tape::new();
    let e = tape.constant(est.clone());
    let refs = ctx.low_band_waves(reference)?;
    let vars = composite_on_tape(&mut tape, e, reference, &refs, ctx, w)?;
    Ok(vars.terms(&tape))
}

/// Total loss of a low-band estimate given the noisy, clean and noise bands.
pub fn loss_total(
    est: &Tensor,
    noisy: &Tensor,
    clean: &Tensor,
    noise: &Tensor,
    ctx: &LossContext,
    w: &LossWeights,
) -> Result<f64> {
    let targets = Targets::new(ctx, clean.clone(), noise.clone())?;
    let mut tape = Tape::new();
    let e = tape.constant(est.clone());
    let v = total_on_tape(&mut tape, e, noisy, &targets, ctx, w)?;
    Ok(tape.value(v).data()[0].re)
}

/// Predicted noise `n_hat = y - x_hat`, formed in double precision from
/// single-precision samples so that `x_hat + n_hat` reproduces `y`.
pub fn residual(noisy: &[f32], estimate: &[f32]) -> Result<Vec<f64>> {
    if noisy.len() != estimate.len() {
        return Err(Error::shape("residual inputs differ in length"));
    }
    Ok(noisy.iter().zip(estimate).map(|(&y, &x)| y as f64 - x as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::C64;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    fn setup() -> (LossContext, Tensor, Tensor, Tensor, Tensor) {
        let ctx = LossContext::new(&StftConfig::default(), 40).unwrap();
        let clean = random(&[60, 2, 40], 1);
        let noise = random(&[60, 2, 40], 2);
        let noisy = Tensor::from_vec(
            clean.shape(),
            clean.data().iter().zip(noise.data()).map(|(a, b)| a + b).collect(),
        )
        .unwrap();
        let est = random(&[60, 2, 40], 3);
        (ctx, clean, noise, noisy, est)
    }

    #[test]
    fn total_with_k_one_is_the_speech_composite() {
        let (ctx, clean, noise, noisy, est) = setup();
        let w = LossWeights {
            k: 1.0,
            ..LossWeights::default()
        };
        let total = loss_total(&est, &noisy, &clean, &noise, &ctx, &w).unwrap();
        assert_eq!(total, loss_composite(&est, &clean, &ctx, &w).unwrap().total);
    }

    #[test]
    fn total_with_k_zero_is_the_noise_composite() {
        let (ctx, clean, noise, noisy, est) = setup();
        let w = LossWeights {
            k: 0.0,
            ..LossWeights::default()
        };
        let n_hat = Tensor::from_vec(
            est.shape(),
            noisy.data().iter().zip(est.data()).map(|(y, x)| y - x).collect(),
        )
        .unwrap();
        let total = loss_total(&est, &noisy, &clean, &noise, &ctx, &w).unwrap();
        assert_eq!(total, loss_composite(&n_hat, &noise, &ctx, &w).unwrap().total);
    }

    #[test]
    fn total_interpolates_between_the_two_terms() {
        let (ctx, clean, noise, noisy, est) = setup();
        let at = |k| {
            loss_total(
                &est,
                &noisy,
                &clean,
                &noise,
                &ctx,
                &LossWeights {
                    k,
                    ..LossWeights::default()
                },
            )
            .unwrap()
        };
        let (a, b, mid) = (at(1.0), at(0.0), at(0.25));
        assert!((mid - (0.25 * a + 0.75 * b)).abs() < 1e-9 * a.abs().max(b.abs()).max(1.0));
    }

    #[test]
    fn composite_terms_scale_with_their_weights() {
        let (ctx, clean, _, _, est) = setup();
        let base = loss_composite(&est, &clean, &ctx, &LossWeights::default()).unwrap();
        let w = LossWeights {
            w_ild: 20.0,
            ..LossWeights::default()
        };
        let doubled = loss_composite(&est, &clean, &ctx, &w).unwrap();
        assert_eq!(
            (base.snr, base.stoi, base.ipd, base.ild),
            (doubled.snr, doubled.stoi, doubled.ipd, doubled.ild)
        );
        assert!((doubled.total - base.total - 10.0 * base.ild).abs() < 1e-9);
    }

    #[test]
    fn k_outside_unit_interval_is_rejected() {
        let (ctx, clean, noise, noisy, est) = setup();
        let w = LossWeights {
            k: 1.5,
            ..LossWeights::default()
        };
        assert!(loss_total(&est, &noisy, &clean, &noise, &ctx, &w).is_err());
    }

    proptest! {
        #[test]
        fn residual_restores_the_mixture_exactly(pairs in proptest::collection::vec((-4.0f32..4.0, -4.0f32..4.0), 1..64)) {
            let (y, x): (Vec<f32>, Vec<f32>) = pairs.into_iter().unzip();
            let n = residual(&y, &x).unwrap();
            for ((&yi, &xi), ni) in y.iter().zip(&x).zip(&n) {
                prop_assert_eq!(xi as f64 + ni, yi as f64);
            }
        }
    }
}
