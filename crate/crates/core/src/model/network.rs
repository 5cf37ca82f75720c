//! Network assembly, forward pass and offline enhancement.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{LbccnConfig, PredictorVariant};
use crate::dsp::{band_merge, band_split, BinauralWaveform, ComplexSpectrogram, Stft, PIPELINE_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::nn::{filled_tensor, ConvSpec, LightBlock, LightBlockConfig, ParamStore, Tape, Var};
use crate::tensor::{Tensor, C64};

/// One block of the architecture with the number of bins it sees per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub block: LightBlockConfig,
    pub input_bins: usize,
}

/// LBCCN: band paths, shared extractor, dual-path block and two heads.
#[derive(Debug, Clone, PartialEq)]
pub struct LbccnModel {
    config: LbccnConfig,
    seed: u64,
    params: ParamStore,
    pub(crate) low: LightBlock,
    pub(crate) high: Option<LightBlock>,
    pub(crate) extractor: Vec<LightBlock>,
    pub(crate) dualpath: Vec<LightBlock>,
    pub(crate) head_a: Vec<LightBlock>,
    pub(crate) head_b: Vec<LightBlock>,
}

/// Tape handles produced by [`LbccnModel::forward_tape`].
#[derive(Debug, Clone)]
pub struct ForwardVars {
    /// Leaf of every parameter, in store order.
    pub params: Vec<Var>,
    /// Head outputs, `[frames, 1, q]`.
    pub head_a: Var,
    pub head_b: Var,
}

/// Head outputs as `[frames, q]` grids.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    pub a: Tensor,
    pub b: Tensor,
}

/// Block configurations in build order.
pub fn architecture(config: &LbccnConfig) -> Result<Vec<LayerSpec>> {
    config.validate()?;
    let q = config.bands.q;
    let fh = config.high_bins();
    let k = config.kernel_sizes;
    let ch = &config.extractor_channels;
    let mut layers = Vec::new();
    let mut push = |name: String, block: LightBlockConfig, input_bins: usize| {
        layers.push(LayerSpec {
            name,
            block,
            input_bins,
        })
    };
    push(
        "low".into(),
        LightBlockConfig::new(
            ConvSpec::frequency(2, ch[0], k.extractor, config.extractor_dilations[0]),
            true,
            true,
        ),
        q,
    );
    if fh > 0 {
        let mut high = LightBlockConfig::new(
            ConvSpec::frequency(2, ch[1], k.extractor, config.extractor_dilations[1]),
            true,
            true,
        );
        high.projection = Some((fh, q));
        push("high".into(), high, fh);
    }
    let mut c = ch[1];
    for (i, (&out, &d)) in ch[2..].iter().zip(&config.extractor_dilations[2..]).enumerate() {
        push(
            format!("extractor{i}"),
            LightBlockConfig::new(ConvSpec::frequency(c, out, k.extractor, d), true, true),
            q,
        );
        c = out;
    }
    for (i, (&out, &d)) in config
        .dualpath_channels
        .iter()
        .zip(&config.dualpath_dilations)
        .enumerate()
    {
        let mut b = LightBlockConfig::new(
            ConvSpec::time_frequency(c, out, k.dualpath, config.freq_kernel_2d, d),
            true,
            true,
        );
        b.norm_smoothing = config.dualpath_norm_smoothing;
        push(format!("dualpath{i}"), b, q);
        c = out;
    }
    for head in ["head_a", "head_b"] {
        let mut hc = c;
        let n = config.predictor_channels.len();
        for (i, (&out, &d)) in config
            .predictor_channels
            .iter()
            .zip(&config.predictor_dilations)
            .enumerate()
        {
            let b = LightBlockConfig::new(
                ConvSpec::time_frequency(hc, out, k.predictor, config.freq_kernel_2d, d),
                false,
                i + 1 < n,
            );
            push(format!("{head}.{i}"), b, q);
            hc = out;
        }
    }
    Ok(layers)
}

impl LbccnModel {
    /// Builds a model with weights drawn deterministically from `seed`. The
    /// final head biases start the predictor at an averaging RATF pair
    /// (`w_x = 1`, `w_n = -1`) or at identity masks.
    pub fn build(config: LbccnConfig, seed: u64) -> Result<Self> {
        let layers = architecture(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut low = None;
        let mut high = None;
        let (mut extractor, mut dualpath, mut head_a, mut head_b) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for l in layers {
            let block = LightBlock::init(l.block, &l.name, &mut params, &mut rng)?;
            match l.name.as_str() {
                "low" => low = Some(block),
                "high" => high = Some(block),
                n if n.starts_with("extractor") => extractor.push(block),
                n if n.starts_with("dualpath") => dualpath.push(block),
                n if n.starts_with("head_a") => head_a.push(block),
                _ => head_b.push(block),
            }
        }
        let (bias_a, bias_b) = match config.predictor_variant {
            PredictorVariant::Ratfs => (1.0, -1.0),
            PredictorVariant::Masks | PredictorVariant::MaskRatf => (1.0, 1.0),
        };
        for (head, value) in [(&head_a, bias_a), (&head_b, bias_b)] {
            if let Some(last) = head.last() {
                let b = params.get_mut(last.params.bias);
                *b = filled_tensor(b.shape(), C64::new(value, 0.0));
            }
        }
        Ok(LbccnModel {
            config,
            seed,
            params,
            low: low.ok_or_else(|| Error::Internal("architecture lacks the low path".into()))?,
            high,
            extractor,
            dualpath,
            head_a,
            head_b,
        })
    }

    pub fn config(&self) -> &LbccnConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn variant(&self) -> PredictorVariant {
        self.config.predictor_variant
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Real-valued parameter count (two per complex weight).
    pub fn real_param_count(&self) -> usize {
        2 * self.params.complex_count()
    }

    pub(crate) fn blocks(&self) -> impl Iterator<Item = &LightBlock> {
        std::iter::once(&self.low)
            .chain(self.high.as_ref())
            .chain(&self.extractor)
            .chain(&self.dualpath)
            .chain(&self.head_a)
            .chain(&self.head_b)
    }

    /// Records the network on `tape`. `low` is `[frames, 2, q]` and `high`
    /// is `[frames, 2, f_total - q]`.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        low: &Tensor,
        high: &Tensor,
        requires_grad: bool,
    ) -> Result<ForwardVars> {
        let q = self.config.bands.q;
        let fh = self.config.high_bins();
        let ls = low.shape();
        if ls.len() != 3 || ls[1] != 2 || ls[2] != q {
            return Err(Error::shape(format!("low band must be [frames, 2, {q}], got {ls:?}")));
        }
        if high.shape() != [ls[0], 2, fh] {
            return Err(Error::shape(format!(
                "high band must be [frames, 2, {fh}], got {:?}",
                high.shape()
            )));
        }
        let params: Vec<Var> = self
            .params
            .tensors()
            .iter()
            .map(|t| tape.leaf(t.clone(), requires_grad))
            .collect();
        let eps = self.config.norm_eps;
        let x_low = tape.constant(low.clone());
        let mut h = self.low.forward(tape, x_low, &params, eps)?;
        if let Some(block) = &self.high {
            let x_high = tape.constant(high.clone());
            let hh = block.forward(tape, x_high, &params, eps)?;
            h = tape.add(h, hh)?;
        }
        for b in self.extractor.iter().chain(&self.dualpath) {
            h = b.forward(tape, h, &params, eps)?;
        }
        let mut a = h;
        for b in &self.head_a {
            a = b.forward(tape, a, &params, eps)?;
        }
        let mut bb = h;
        for b in &self.head_b {
            bb = b.forward(tape, bb, &params, eps)?;
        }
        Ok(ForwardVars {
            params,
            head_a: a,
            head_b: bb,
        })
    }

    /// Applies the configured predictor to head outputs on the tape, giving
    /// the low-band estimate `[frames, 2, q]`.
    pub fn predict_tape(&self, tape: &mut Tape, fv: &ForwardVars, y_low: &Tensor) -> Result<Var> {
        match self.variant() {
            PredictorVariant::Ratfs => tape.restore(fv.head_a, fv.head_b, y_low, self.config.ratf_eps),
            PredictorVariant::Masks => tape.apply_masks(fv.head_a, fv.head_b, y_low),
            PredictorVariant::MaskRatf => tape.apply_mask_plus_ratf(fv.head_b, fv.head_a, y_low),
        }
    }

    fn check_spec(&self, noisy: &ComplexSpectrogram) -> Result<()> {
        if noisy.channels() != 2 {
            return Err(Error::shape(format!(
                "expected a 2-channel spectrogram, got {}",
                noisy.channels()
            )));
        }
        if noisy.config != self.config.stft {
            return Err(Error::shape("spectrogram STFT config differs from the model's"));
        }
        if noisy.bins() != self.config.bands.f_total {
            return Err(Error::shape(format!(
                "expected {} bins, got {}",
                self.config.bands.f_total,
                noisy.bins()
            )));
        }
        Ok(())
    }

    /// Head outputs for a noisy 2-channel spectrogram.
    pub fn forward(&self, noisy: &ComplexSpectrogram) -> Result<HeadOutputs> {
        self.check_spec(noisy)?;
        let (low, high) = band_split(noisy, &self.config.bands)?;
        let mut tape = Tape::new();
        let fv = self.forward_tape(&mut tape, &frame_major(&low)?, &frame_major(&high)?, false)?;
        let flat = |v: Var| {
            let t = tape.value(v);
            Tensor::from_vec(&[t.shape()[0], t.shape()[2]], t.data().to_vec())
        };
        Ok(HeadOutputs {
            a: flat(fv.head_a)?,
            b: flat(fv.head_b)?,
        })
    }

    /// Enhances the low band of `noisy`; bins at and above `q` are copied.
    pub fn enhance_spectrogram(&self, noisy: &ComplexSpectrogram) -> Result<ComplexSpectrogram> {
        self.check_spec(noisy)?;
        let (low, high) = band_split(noisy, &self.config.bands)?;
        let y_low = frame_major(&low)?;
        let mut tape = Tape::new();
        let fv = self.forward_tape(&mut tape, &y_low, &frame_major(&high)?, false)?;
        let est = self.predict_tape(&mut tape, &fv, &y_low)?;
        let est = tape.value(est);
        if !est.all_finite() {
            return Err(Error::Numeric("non-finite low-band estimate".into()));
        }
        band_merge(&channel_major(est)?, &high, &noisy.config, noisy.signal_len)
    }

    /// Offline enhancement of a 16 kHz binaural signal; output length equals
    /// input length.
    pub fn enhance(&self, noisy: &BinauralWaveform) -> Result<BinauralWaveform> {
        noisy.require_rate(PIPELINE_SAMPLE_RATE)?;
        let engine = Stft::new(&self.config.stft)?;
        let spec = analyze(&engine, noisy)?;
        let out = self.enhance_spectrogram(&spec)?;
        let waves = engine.istft(&out)?;
        BinauralWaveform::from_f64(&waves[0], &waves[1], noisy.sample_rate)
    }

    /// Shared STFT engine for this model's configuration.
    pub fn stft_engine(&self) -> Result<Arc<Stft>> {
        Ok(Arc::new(Stft::new(&self.config.stft)?))
    }
}

/// Two-channel STFT of a binaural signal.
pub fn analyze(engine: &Stft, wave: &BinauralWaveform) -> Result<ComplexSpectrogram> {
    let l = engine.stft(&wave.ear_f64(0))?;
    let r = engine.stft(&wave.ear_f64(1))?;
    ComplexSpectrogram::stack(&[l, r])
}

/// `[channels, frames, bins]` to `[frames, channels, bins]`.
pub fn frame_major(t: &Tensor) -> Result<Tensor> {
    transpose01(t)
}

/// `[frames, channels, bins]` to `[channels, frames, bins]`.
pub fn channel_major(t: &Tensor) -> Result<Tensor> {
    transpose01(t)
}

fn transpose01(t: &Tensor) -> Result<Tensor> {
    let s = t.shape();
    if s.len() != 3 {
        return Err(Error::shape(format!("expected a rank-3 tensor, got {s:?}")));
    }
    let (a, b, f) = (s[0], s[1], s[2]);
    let mut out = Tensor::zeros(&[b, a, f]);
    if f > 0 {
        let src = t.data();
        let dst = out.data_mut();
        for i in 0..a {
            for j in 0..b {
                dst[(j * a + i) * f..(j * a + i + 1) * f].copy_from_slice(&src[(i * b + j) * f..(i * b + j + 1) * f]);
            }
        }
    }
    Ok(out)
}
