//! Frame-by-frame streaming enhancement.
//!
//! Each hop of input runs one STFT frame through the network using the same
//! per-frame kernels as the offline path, so the two agree bit for bit once
//! the streaming output is shifted by the algorithmic latency.

use super::config::PredictorVariant;
use super::network::LbccnModel;
use super::predictor::restore_bin;
use crate::dsp::{BinauralWaveform, Stft, PIPELINE_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::nn::{BlockStream, LightBlock, ParamStore};
use crate::tensor::{C64, ZERO};

/// Streaming state owning a copy of the model weights.
#[derive(Debug, Clone)]
pub struct StreamState {
    model: LbccnModel,
    engine: Stft,
    inputs: [Vec<f64>; 2],
    ola: [Vec<f64>; 2],
    states: States,
    bufs: Buffers,
    frames_done: usize,
    preroll_left: usize,
}

#[derive(Debug, Clone)]
struct States {
    low: BlockStream,
    high: Option<BlockStream>,
    trunk: Vec<BlockStream>,
    head_a: Vec<BlockStream>,
    head_b: Vec<BlockStream>,
}

#[derive(Debug, Clone)]
struct Buffers {
    scratch: Vec<C64>,
    spec: [Vec<C64>; 2],
    frame_low: Vec<C64>,
    frame_high: Vec<C64>,
    cur: Vec<C64>,
    next: Vec<C64>,
    extra: Vec<C64>,
    head_cur: Vec<C64>,
    head_next: Vec<C64>,
    a: Vec<C64>,
    seg: Vec<f64>,
}

/// Runs `blocks` in sequence; the result is left in `cur[..len]`.
#[allow(clippy::too_many_arguments)]
fn run_chain<'a>(
    blocks: impl Iterator<Item = &'a LightBlock>,
    states: &mut [BlockStream],
    store: &ParamStore,
    cur: &mut Vec<C64>,
    len: &mut usize,
    next: &mut Vec<C64>,
    bins: usize,
    eps: f64,
) {
    for (b, s) in blocks.zip(states.iter_mut()) {
        let out_len = b.config.conv.out_channels * bins;
        b.step(store, s, &cur[..*len], bins, eps, &mut next[..out_len]);
        std::mem::swap(cur, next);
        *len = out_len;
    }
}

impl StreamState {
    pub fn new(model: &LbccnModel) -> Result<Self> {
        let cfg = model.config();
        let engine = Stft::new(&cfg.stft)?;
        let (n, q, fh) = (cfg.stft.fft_size, cfg.bands.q, cfg.high_bins());
        let width = model
            .blocks()
            .map(|b| b.config.conv.in_channels.max(b.config.conv.out_channels) * q)
            .max()
            .unwrap_or(0)
            .max(2 * q);
        let bins = cfg.stft.bins();
        let states = States {
            low: model.low.stream_state(q),
            high: model.high.as_ref().map(|b| b.stream_state(fh)),
            trunk: model
                .extractor
                .iter()
                .chain(&model.dualpath)
                .map(|b| b.stream_state(q))
                .collect(),
            head_a: model.head_a.iter().map(|b| b.stream_state(q)).collect(),
            head_b: model.head_b.iter().map(|b| b.stream_state(q)).collect(),
        };
        Ok(StreamState {
            engine,
            inputs: [vec![0.0; n], vec![0.0; n]],
            ola: [vec![0.0; n], vec![0.0; n]],
            states,
            bufs: Buffers {
                scratch: vec![ZERO; n],
                spec: [vec![ZERO; bins], vec![ZERO; bins]],
                frame_low: vec![ZERO; 2 * q],
                frame_high: vec![ZERO; 2 * fh],
                cur: vec![ZERO; width],
                next: vec![ZERO; width],
                extra: vec![ZERO; width],
                head_cur: vec![ZERO; width],
                head_next: vec![ZERO; width],
                a: vec![ZERO; q],
                seg: vec![0.0; n],
            },
            frames_done: 0,
            preroll_left: cfg.stft.latency(),
            model: model.clone(),
        })
    }

    pub fn hop(&self) -> usize {
        self.engine.config().hop
    }

    /// Algorithmic latency in samples (`fft_size - hop`).
    pub fn latency(&self) -> usize {
        self.engine.config().latency()
    }

    pub fn frames_processed(&self) -> usize {
        self.frames_done
    }

    /// Hops of silence needed after the last input hop to emit every sample.
    pub fn flush_hops(&self) -> usize {
        let c = self.engine.config();
        c.fft_size / c.hop - 1
    }

    /// Consumes one hop per ear and writes one hop per ear. The first
    /// [`latency`](Self::latency) output samples are silence.
    pub fn process(&mut self, left: &[f32], right: &[f32], out_left: &mut [f32], out_right: &mut [f32]) -> Result<()> {
        let hop = self.hop();
        for (name, len) in [
            ("left input", left.len()),
            ("right input", right.len()),
            ("left output", out_left.len()),
            ("right output", out_right.len()),
        ] {
            if len != hop {
                return Err(Error::Input(format!(
                    "{name} holds {len} samples, expected one hop of {hop}"
                )));
            }
        }
        let n = self.engine.config().fft_size;
        for (buf, x) in self.inputs.iter_mut().zip([left, right]) {
            buf.copy_within(hop.., 0);
            for (d, &s) in buf[n - hop..].iter_mut().zip(x) {
                *d = s as f64;
            }
        }
        self.run_frame()?;
        let skip = self.preroll_left.min(hop);
        self.preroll_left -= skip;
        let inv = self.engine.inv_norm();
        for (ola, out) in self.ola.iter_mut().zip([out_left, out_right]) {
            for (i, o) in out.iter_mut().enumerate() {
                *o = if i < skip { 0.0 } else { (ola[i] * inv[i % hop]) as f32 };
            }
            ola.copy_within(hop.., 0);
            ola[n - hop..].fill(0.0);
        }
        Ok(())
    }

    /// Feeds silence to push out the samples still held in the overlap-add
    /// buffer; returns `flush_hops() * hop` samples per ear.
    pub fn flush(&mut self) -> Result<(Vec<f32>, Vec<f32>)> {
        let hop = self.hop();
        let zeros = vec![0.0f32; hop];
        let (mut l, mut r) = (Vec::new(), Vec::new());
        let (mut ol, mut or) = (vec![0.0f32; hop], vec![0.0f32; hop]);
        for _ in 0..self.flush_hops() {
            self.process(&zeros, &zeros, &mut ol, &mut or)?;
            l.extend_from_slice(&ol);
            r.extend_from_slice(&or);
        }
        Ok((l, r))
    }

    fn run_frame(&mut self) -> Result<()> {
        let StreamState {
            model,
            engine,
            inputs,
            ola,
            states,
            bufs,
            frames_done,
            ..
        } = self;
        let cfg = model.config();
        let (q, fh, eps) = (cfg.bands.q, cfg.high_bins(), cfg.norm_eps);
        let store = model.params();
        for (ear, input) in inputs.iter().enumerate() {
            engine.analyze_frame(input, &mut bufs.scratch, &mut bufs.spec[ear]);
            bufs.frame_low[ear * q..(ear + 1) * q].copy_from_slice(&bufs.spec[ear][..q]);
            bufs.frame_high[ear * fh..(ear + 1) * fh].copy_from_slice(&bufs.spec[ear][q..]);
        }
        let mut len = model.low.config.conv.out_channels * q;
        model
            .low
            .step(store, &mut states.low, &bufs.frame_low, q, eps, &mut bufs.next[..len]);
        if let (Some(block), Some(st)) = (&model.high, states.high.as_mut()) {
            block.step(store, st, &bufs.frame_high, fh, eps, &mut bufs.extra[..len]);
            crate::nn::kernels::add(&bufs.next[..len], &bufs.extra[..len], &mut bufs.cur[..len]);
        } else {
            bufs.cur[..len].copy_from_slice(&bufs.next[..len]);
        }
        run_chain(
            model.extractor.iter().chain(&model.dualpath),
            &mut states.trunk,
            store,
            &mut bufs.cur,
            &mut len,
            &mut bufs.next,
            q,
            eps,
        );
        for (head, st, dest) in [
            (&model.head_a, &mut states.head_a, 0),
            (&model.head_b, &mut states.head_b, 1),
        ] {
            bufs.head_cur[..len].copy_from_slice(&bufs.cur[..len]);
            let mut hlen = len;
            run_chain(
                head.iter(),
                st,
                store,
                &mut bufs.head_cur,
                &mut hlen,
                &mut bufs.head_next,
                q,
                eps,
            );
            if dest == 0 {
                bufs.a.copy_from_slice(&bufs.head_cur[..q]);
            }
        }
        let (a, b) = (&bufs.a, &bufs.head_cur[..q]);
        let variant = cfg.predictor_variant;
        let ratf_eps = cfg.ratf_eps;
        let [spec_l, spec_r] = &mut bufs.spec;
        for f in 0..q {
            let (yl, yr) = (spec_l[f], spec_r[f]);
            let (xl, xr) = match variant {
                PredictorVariant::Ratfs => restore_bin(yl, yr, a[f], b[f], ratf_eps),
                PredictorVariant::Masks => (a[f] * yl, b[f] * yr),
                PredictorVariant::MaskRatf => {
                    let xr = b[f] * yr;
                    (a[f] * xr, xr)
                }
            };
            if !(xl.re.is_finite() && xl.im.is_finite() && xr.re.is_finite() && xr.im.is_finite()) {
                return Err(Error::Numeric("non-finite low-band estimate".into()));
            }
            spec_l[f] = xl;
            spec_r[f] = xr;
        }
        for (ear, acc) in ola.iter_mut().enumerate() {
            engine.synthesize_frame(&bufs.spec[ear], &mut bufs.scratch, &mut bufs.seg);
            for (o, s) in acc.iter_mut().zip(&bufs.seg) {
                *o += s;
            }
        }
        *frames_done += 1;
        Ok(())
    }
}

/// Runs a whole signal through a fresh [`StreamState`] and returns the output
/// aligned with the input (latency removed), same length as the input.
pub fn enhance_streaming(model: &LbccnModel, noisy: &BinauralWaveform) -> Result<BinauralWaveform> {
    noisy.require_rate(PIPELINE_SAMPLE_RATE)?;
    let mut st = StreamState::new(model)?;
    let hop = st.hop();
    let len = noisy.len();
    let hops = len.div_ceil(hop);
    let (mut l, mut r) = (
        Vec::with_capacity((hops + 2) * hop),
        Vec::with_capacity((hops + 2) * hop),
    );
    let (mut il, mut ir) = (vec![0.0f32; hop], vec![0.0f32; hop]);
    let (mut ol, mut or) = (vec![0.0f32; hop], vec![0.0f32; hop]);
    for j in 0..hops {
        let lo = j * hop;
        let hi = (lo + hop).min(len);
        il.fill(0.0);
        ir.fill(0.0);
        il[..hi - lo].copy_from_slice(&noisy.left[lo..hi]);
        ir[..hi - lo].copy_from_slice(&noisy.right[lo..hi]);
        st.process(&il, &ir, &mut ol, &mut or)?;
        l.extend_from_slice(&ol);
        r.extend_from_slice(&or);
    }
    let (fl, fr) = st.flush()?;
    l.extend(fl);
    r.extend(fr);
    let lat = st.latency();
    BinauralWaveform::new(
        l[lat..lat + len].to_vec(),
        r[lat..lat + len].to_vec(),
        noisy.sample_rate,
    )
}
