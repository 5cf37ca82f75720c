//! Desk-scale training with the built-in tape and Adam.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{analyze, frame_major, LbccnModel};
use crate::dsp::{BinauralWaveform, Stft};
use crate::error::{Error, Result};
use crate::losses::{total_on_tape, LossContext, LossWeights, Targets};
use crate::nn::{adam_step, AdamHyper, AdamState, Tape};
use crate::tensor::Tensor;

/// One utterance prepared for training: frame-major spectra `[frames, 2, bins]`.
#[derive(Debug, Clone)]
pub struct Example {
    pub noisy_low: Tensor,
    pub noisy_high: Tensor,
    pub clean_low: Tensor,
    pub noise_low: Tensor,
}

fn split_bins(t: &Tensor, q: usize) -> Result<(Tensor, Tensor)> {
    let s = t.shape();
    let (frames, ch, bins) = (s[0], s[1], s[2]);
    let mut lo = Vec::with_capacity(frames * ch * q);
    let mut hi = Vec::with_capacity(frames * ch * (bins - q));
    for row in t.data().chunks_exact(bins) {
        lo.extend_from_slice(&row[..q]);
        hi.extend_from_slice(&row[q..]);
    }
    Ok((
        Tensor::from_vec(&[frames, ch, q], lo)?,
        Tensor::from_vec(&[frames, ch, bins - q], hi)?,
    ))
}

fn crop(t: &Tensor, start: usize, len: usize) -> Tensor {
    let s = t.shape();
    let fl = s[1] * s[2];
    Tensor::from_vec(&[len, s[1], s[2]], t.data()[start * fl..(start + len) * fl].to_vec()).expect("crop shape")
}

impl Example {
    pub fn new(
        engine: &Stft,
        q: usize,
        noisy: &BinauralWaveform,
        clean: &BinauralWaveform,
        noise: &BinauralWaveform,
    ) -> Result<Self> {
        if noisy.len() != clean.len() || noisy.len() != noise.len() {
            return Err(Error::shape("noisy, clean and noise signals differ in length"));
        }
        let tf = |w: &BinauralWaveform| -> Result<Tensor> { frame_major(analyze(engine, w)?.tensor()) };
        let (noisy_low, noisy_high) = split_bins(&tf(noisy)?, q)?;
        let (clean_low, _) = split_bins(&tf(clean)?, q)?;
        let (noise_low, _) = split_bins(&tf(noise)?, q)?;
        Ok(Example {
            noisy_low,
            noisy_high,
            clean_low,
            noise_low,
        })
    }

    pub fn frames(&self) -> usize {
        self.noisy_low.shape()[0]
    }

    /// Frames `[start, start + len)` of every spectrum.
    pub fn crop(&self, start: usize, len: usize) -> Example {
        Example {
            noisy_low: crop(&self.noisy_low, start, len),
            noisy_high: crop(&self.noisy_high, start, len),
            clean_low: crop(&self.clean_low, start, len),
            noise_low: crop(&self.noise_low, start, len),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weights: LossWeights,
    /// Random crop length in frames; whole utterances when `None`.
    pub crop_frames: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 1,
            lr: crate::nn::adam::DEFAULT_LR,
            weights: LossWeights::default(),
            crop_frames: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        if self.batch_size == 0 {
            v.push("batch size must be at least 1".to_string());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            v.push(format!("learning rate {} must be positive", self.lr));
        }
        if !(0.0..=1.0).contains(&self.weights.k) {
            v.push(format!("k = {} outside [0, 1]", self.weights.k));
        }
        if self.crop_frames == Some(0) {
            v.push("crop length must be at least 1 frame".into());
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }
}

/// Loss value and parameter gradients for one example.
pub fn loss_and_grads(
    model: &LbccnModel,
    ex: &Example,
    ctx: &LossContext,
    w: &LossWeights,
) -> Result<(f64, Vec<Tensor>)> {
    let targets = Targets::new(ctx, ex.clean_low.clone(), ex.noise_low.clone())?;
    let mut tape = Tape::new();
    let fv = model.forward_tape(&mut tape, &ex.noisy_low, &ex.noisy_high, true)?;
    let est = model.predict_tape(&mut tape, &fv, &ex.noisy_low)?;
    let loss = total_on_tape(&mut tape, est, &ex.noisy_low, &targets, ctx, w)?;
    let value = tape.value(loss).data()[0].re;
    if !value.is_finite() {
        return Ok((value, Vec::new()));
    }
    tape.backward(loss)?;
    let grads = fv
        .params
        .iter()
        .map(|&v| {
            tape.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))
        })
        .collect();
    Ok((value, grads))
}

const CROP_ATTEMPTS: usize = 16;

fn has_energy_per_ear(t: &Tensor) -> bool {
    let bins = t.shape()[2];
    let mut energy = [0.0; 2];
    for (i, row) in t.data().chunks_exact(bins).enumerate() {
        energy[i % 2] += row.iter().map(|z| z.norm_sqr()).sum::<f64>();
    }
    energy.iter().all(|&e| e > 0.0)
}

/// Stateful optimiser loop over a model.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub adam: AdamState,
    ctx: LossContext,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(model: &LbccnModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let hyper = AdamHyper {
            lr: config.lr,
            ..AdamHyper::default()
        };
        Ok(Trainer {
            adam: AdamState::new(model.params(), hyper),
            ctx: LossContext::new(&model.config().stft, model.config().bands.q)?,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
        })
    }

    pub fn context(&self) -> &LossContext {
        &self.ctx
    }

    /// Random crop whose clean and noise targets carry energy in both ears,
    /// or the whole example if none is found in a few draws.
    fn draw_crop(&mut self, ex: &Example, len: usize) -> Example {
        for _ in 0..CROP_ATTEMPTS {
            let start = self.rng.gen_range(0..=ex.frames() - len);
            let c = ex.crop(start, len);
            if has_energy_per_ear(&c.clean_low) && has_energy_per_ear(&c.noise_low) {
                return c;
            }
        }
        ex.clone()
    }

    /// One Adam step on the mean loss of `batch`; returns the mean loss.
    /// `position` labels a non-finite loss error.
    pub fn step(&mut self, model: &mut LbccnModel, batch: &[&Example], position: (usize, usize)) -> Result<f64> {
        let mut acc: Option<Vec<Tensor>> = None;
        let mut total = 0.0;
        for ex in batch {
            let ex = match self.config.crop_frames {
                Some(c) if c < ex.frames() => self.draw_crop(ex, c),
                _ => (*ex).clone(),
            };
            let (loss, grads) = loss_and_grads(model, &ex, &self.ctx, &self.config.weights)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: position.0,
                    batch: position.1,
                });
            }
            total += loss;
            match acc.as_mut() {
                None => acc = Some(grads),
                Some(a) => {
                    for (x, g) in a.iter_mut().zip(&grads) {
                        x.add_assign(g);
                    }
                }
            }
        }
        let scale = 1.0 / batch.len() as f64;
        let mut grads = acc.ok_or_else(|| Error::Input("empty batch".into()))?;
        for g in &mut grads {
            for z in g.data_mut() {
                *z *= scale;
            }
        }
        if grads.iter().any(|g| !g.all_finite()) {
            return Err(Error::NonFiniteLoss {
                epoch: position.0,
                batch: position.1,
            });
        }
        adam_step(model.params_mut(), &grads, &mut self.adam)?;
        Ok(total * scale)
    }

    /// Runs `config.epochs` epochs over `examples`, returning the mean loss
    /// of each epoch. `on_epoch` sees the epoch index, its loss and the model.
    pub fn fit(
        &mut self,
        model: &mut LbccnModel,
        examples: &[Example],
        mut on_epoch: impl FnMut(usize, f64, &LbccnModel),
    ) -> Result<Vec<f64>> {
        if examples.is_empty() {
            return Err(Error::Input("no training examples".into()));
        }
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let mut history = Vec::with_capacity(self.config.epochs);
        for epoch in 0..self.config.epochs {
            order.shuffle(&mut self.rng);
            let mut sum = 0.0;
            let mut batches = 0;
            for (b, chunk) in order.chunks(self.config.batch_size).enumerate() {
                let batch: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
                sum += self.step(model, &batch, (epoch, b))?;
                batches += 1;
            }
            let mean = sum / batches as f64;
            log::debug!("epoch {epoch}: loss {mean:.4}");
            on_epoch(epoch, mean, model);
            history.push(mean);
        }
        Ok(history)
    }
}

/// Trains `model` in place and returns the per-epoch losses.
pub fn train(model: &mut LbccnModel, examples: &[Example], config: TrainConfig) -> Result<(Vec<f64>, AdamState)> {
    let mut t = Trainer::new(model, config)?;
    let history = t.fit(model, examples, |_, _, _| {})?;
    Ok((history, t.adam))
}

/// Low-band estimate `[frames, 2, q]` of an example.
pub fn estimate_low(model: &LbccnModel, ex: &Example) -> Result<Tensor> {
    let mut tape = Tape::new();
    let fv = model.forward_tape(&mut tape, &ex.noisy_low, &ex.noisy_high, false)?;
    let est = model.predict_tape(&mut tape, &fv, &ex.noisy_low)?;
    Ok(tape.value(est).clone())
}

fn snr_db(reference: &[Vec<f64>], est: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for (r, e) in reference.iter().zip(est) {
        let sig: f64 = r.iter().map(|v| v * v).sum();
        let err: f64 = r.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum();
        total += 10.0 * (sig / (err + crate::losses::components::SNR_EPS)).log10();
    }
    total / reference.len() as f64
}

/// Ear-averaged SNR (dB) of the low-band resynthesis of the model output and
/// of the noisy input, both against the clean low band.
pub fn low_band_snr(model: &LbccnModel, ex: &Example, ctx: &LossContext) -> Result<(f64, f64)> {
    let clean = ctx.low_band_waves(&ex.clean_low)?;
    let noisy = ctx.low_band_waves(&ex.noisy_low)?;
    let est = ctx.low_band_waves(&estimate_low(model, ex)?)?;
    Ok((snr_db(&clean, &est), snr_db(&clean, &noisy)))
}
