//! Lightweight complex convolution blocks.
//!
//! A block is a depthwise-separable convolution (depthwise taps, optional
//! frequency projection, 1x1 channel mixing plus bias) followed by optional
//! instance norm and split PReLU. The 1D variant runs along frequency inside
//! each frame; the 2D variant is causal and dilated in time and "same" padded
//! in frequency.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::kernels::{self, NormRunning};
use super::params::{filled_tensor, uniform_tensor, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Tensor, C64, ZERO};

pub const PRELU_INIT: C64 = C64::new(0.25, 0.25);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvAxis {
    Frequency,
    TimeFrequency,
}

/// Geometry of a depthwise-separable complex convolution.
///
/// `kernel_size` and `dilation` act along the block's main axis: frequency
/// for [`ConvAxis::Frequency`], time for [`ConvAxis::TimeFrequency`]. The 2D
/// variant additionally spans `freq_kernel` bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub freq_kernel: usize,
    pub dilation: usize,
    pub axis: ConvAxis,
}

impl ConvSpec {
    pub fn frequency(in_channels: usize, out_channels: usize, kernel_size: usize, dilation: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel_size,
            freq_kernel: 1,
            dilation,
            axis: ConvAxis::Frequency,
        }
    }

    pub fn time_frequency(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        freq_kernel: usize,
        dilation: usize,
    ) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel_size,
            freq_kernel,
            dilation,
            axis: ConvAxis::TimeFrequency,
        }
    }

    pub fn violations(&self, out: &mut Vec<String>, what: &str) {
        if self.in_channels == 0 || self.out_channels == 0 {
            out.push(format!("{what}: channel counts must be positive"));
        }
        if self.kernel_size == 0 {
            out.push(format!("{what}: kernel size must be at least 1"));
        }
        if self.axis == ConvAxis::Frequency && self.kernel_size.is_multiple_of(2) {
            out.push(format!(
                "{what}: frequency kernel size {} must be odd",
                self.kernel_size
            ));
        }
        if self.freq_kernel.is_multiple_of(2) {
            out.push(format!(
                "{what}: frequency kernel size {} must be odd",
                self.freq_kernel
            ));
        }
        if self.dilation == 0 {
            out.push(format!("{what}: dilation must be at least 1"));
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        self.violations(&mut v, "conv");
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }

    /// Frames of left padding (and of chomp) needed for a causal time conv.
    pub fn causal_pad(&self) -> usize {
        match self.axis {
            ConvAxis::Frequency => 0,
            ConvAxis::TimeFrequency => (self.kernel_size - 1) * self.dilation,
        }
    }

    pub fn taps(&self) -> usize {
        self.kernel_size * self.freq_kernel
    }

    pub fn depthwise_shape(&self) -> Vec<usize> {
        match self.axis {
            ConvAxis::Frequency => vec![self.in_channels, self.kernel_size],
            ConvAxis::TimeFrequency => vec![self.in_channels, self.kernel_size, self.freq_kernel],
        }
    }

    /// Complex MACs of the depthwise stage over `bins` bins (padded taps included).
    pub fn depthwise_macs(&self, bins: usize) -> usize {
        self.in_channels * self.taps() * bins
    }

    /// Complex MACs of the 1x1 channel mixing over `bins` bins.
    pub fn pointwise_macs(&self, bins: usize) -> usize {
        self.out_channels * self.in_channels * bins
    }

    /// Complex parameters: `in*k + out*in + out`.
    pub fn complex_params(&self) -> usize {
        self.in_channels * self.taps() + self.out_channels * self.in_channels + self.out_channels
    }
}

/// Weights of one depthwise-separable complex convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexConvParams {
    pub spec: ConvSpec,
    pub depthwise: Tensor,
    pub pointwise: Tensor,
    pub bias: Tensor,
}

impl ComplexConvParams {
    /// Uniform init in `±1/sqrt(fan_in * k)`, zero bias.
    pub fn init<R: Rng>(spec: ConvSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let depthwise = uniform_tensor(&spec.depthwise_shape(), 1.0 / (spec.taps() as f64).sqrt(), rng);
        let pointwise = uniform_tensor(
            &[spec.out_channels, spec.in_channels],
            1.0 / (spec.in_channels as f64).sqrt(),
            rng,
        );
        Ok(ComplexConvParams {
            spec,
            depthwise,
            pointwise,
            bias: Tensor::zeros(&[spec.out_channels]),
        })
    }

    pub fn complex_params(&self) -> usize {
        self.depthwise.len() + self.pointwise.len() + self.bias.len()
    }
}

/// Tape handles for the weights of a [`ComplexConvParams`].
#[derive(Debug, Clone, Copy)]
pub struct ConvVars {
    pub depthwise: Var,
    pub pointwise: Var,
    pub bias: Var,
}

impl ConvVars {
    pub fn register(tape: &mut Tape, p: &ComplexConvParams, requires_grad: bool) -> Self {
        ConvVars {
            depthwise: tape.leaf(p.depthwise.clone(), requires_grad),
            pointwise: tape.leaf(p.pointwise.clone(), requires_grad),
            bias: tape.leaf(p.bias.clone(), requires_grad),
        }
    }
}

/// Depthwise convolution followed by pointwise mixing plus bias.
///
/// Input and output are `[frames, channels, bins]`; frame and bin counts are
/// preserved. Time convolutions are causal.
pub fn complex_conv(tape: &mut Tape, x: Var, spec: &ConvSpec, vars: &ConvVars) -> Result<Var> {
    let h = depthwise(tape, x, spec, vars.depthwise)?;
    tape.pointwise(h, vars.pointwise, vars.bias)
}

fn depthwise(tape: &mut Tape, x: Var, spec: &ConvSpec, w: Var) -> Result<Var> {
    match spec.axis {
        ConvAxis::Frequency => tape.depthwise_freq(x, w, spec.kernel_size, spec.dilation),
        ConvAxis::TimeFrequency => tape.depthwise_tf(x, w, spec.dilation, 0),
    }
}

/// Removes the trailing `pad_amount` frames of a left-padded time convolution.
pub fn causal_chomp(tape: &mut Tape, x: Var, pad_amount: usize) -> Result<Var> {
    if pad_amount == 0 {
        return Ok(x);
    }
    tape.chomp(x, pad_amount)
}

/// Split PReLU with separate real and imaginary slopes.
pub fn complex_prelu(tape: &mut Tape, x: Var, slope_re: f64, slope_im: f64) -> Result<Var> {
    let s = tape.constant(Tensor::from_vec(&[1], vec![C64::new(slope_re, slope_im)])?);
    tape.prelu(x, s)
}

/// Instance norm over the bins of each frame with one shared complex affine.
pub fn complex_instance_norm(tape: &mut Tape, x: Var, gain: C64, bias: C64, eps: f64) -> Result<Var> {
    let channels = tape.value(x).shape().get(1).copied().unwrap_or(0);
    let g = tape.constant(filled_tensor(&[channels], gain));
    let b = tape.constant(filled_tensor(&[channels], bias));
    tape.instance_norm(x, g, b, eps, 0.0)
}

/// Configuration of a light convolution block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LightBlockConfig {
    pub conv: ConvSpec,
    pub use_norm: bool,
    pub use_activation: bool,
    pub causal_in_time: bool,
    /// Exponential smoothing of the norm statistics across frames (0 = per frame).
    pub norm_smoothing: f64,
    /// Maps `(from, to)` bins along frequency between depthwise and pointwise.
    pub projection: Option<(usize, usize)>,
}

impl LightBlockConfig {
    pub fn new(conv: ConvSpec, use_norm: bool, use_activation: bool) -> Self {
        LightBlockConfig {
            conv,
            use_norm,
            use_activation,
            causal_in_time: true,
            norm_smoothing: 0.0,
            projection: None,
        }
    }

    pub fn violations(&self, out: &mut Vec<String>, what: &str) {
        self.conv.violations(out, what);
        if !self.causal_in_time {
            out.push(format!("{what}: only time-causal blocks are supported"));
        }
        if !(0.0..1.0).contains(&self.norm_smoothing) {
            out.push(format!("{what}: norm smoothing must lie in [0, 1)"));
        }
        if let Some((from, to)) = self.projection {
            if from == 0 || to == 0 {
                out.push(format!("{what}: projection sizes must be positive"));
            }
        }
    }

    /// Complex parameter count of the whole block.
    pub fn complex_params(&self) -> usize {
        let c = &self.conv;
        let mut n = c.complex_params();
        if let Some((from, to)) = self.projection {
            n += from * to;
        }
        if self.use_norm {
            n += 2 * c.out_channels;
        }
        if self.use_activation {
            n += 1;
        }
        n
    }

    /// Complex multiply-accumulates for one frame with `bins` input bins.
    pub fn complex_macs_per_frame(&self, bins: usize) -> usize {
        let c = &self.conv;
        let mut n = c.depthwise_macs(bins);
        let out_bins = match self.projection {
            Some((from, to)) => {
                n += c.in_channels * from * to;
                to
            }
            None => bins,
        };
        n += c.pointwise_macs(out_bins);
        if self.use_norm {
            n += c.out_channels * out_bins;
        }
        n
    }
}

/// Indices of a block's weights inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockParams {
    pub depthwise: usize,
    pub projection: Option<usize>,
    pub pointwise: usize,
    pub bias: usize,
    pub norm: Option<(usize, usize)>,
    pub slope: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LightBlock {
    pub config: LightBlockConfig,
    pub params: BlockParams,
}

impl LightBlock {
    /// Initialises the block's weights into `store` under `prefix`.
    pub fn init<R: Rng>(config: LightBlockConfig, prefix: &str, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        let mut v = Vec::new();
        config.violations(&mut v, prefix);
        if !v.is_empty() {
            return Err(Error::Config(v));
        }
        let conv = ComplexConvParams::init(config.conv, rng)?;
        let depthwise = store.add(format!("{prefix}.depthwise"), conv.depthwise);
        let projection = config.projection.map(|(from, to)| {
            let p = uniform_tensor(&[to, from], 1.0 / (from as f64).sqrt(), rng);
            store.add(format!("{prefix}.projection"), p)
        });
        let pointwise = store.add(format!("{prefix}.pointwise"), conv.pointwise);
        let bias = store.add(format!("{prefix}.bias"), conv.bias);
        let oc = config.conv.out_channels;
        let norm = config.use_norm.then(|| {
            (
                store.add(format!("{prefix}.norm_gain"), filled_tensor(&[oc], C64::new(1.0, 0.0))),
                store.add(format!("{prefix}.norm_bias"), Tensor::zeros(&[oc])),
            )
        });
        let slope = config
            .use_activation
            .then(|| store.add(format!("{prefix}.prelu"), filled_tensor(&[1], PRELU_INIT)));
        Ok(LightBlock {
            config,
            params: BlockParams {
                depthwise,
                projection,
                pointwise,
                bias,
                norm,
                slope,
            },
        })
    }

    /// Records the block on `tape`; `vars[i]` is the leaf of store entry `i`.
    pub fn forward(&self, tape: &mut Tape, x: Var, vars: &[Var], norm_eps: f64) -> Result<Var> {
        let p = &self.params;
        let cfg = &self.config;
        let mut h = depthwise(tape, x, &cfg.conv, vars[p.depthwise])?;
        if let Some(pi) = p.projection {
            h = tape.project(h, vars[pi])?;
        }
        h = tape.pointwise(h, vars[p.pointwise], vars[p.bias])?;
        if let Some((g, b)) = p.norm {
            h = tape.instance_norm(h, vars[g], vars[b], norm_eps, cfg.norm_smoothing)?;
        }
        if let Some(s) = p.slope {
            h = tape.prelu(h, vars[s])?;
        }
        Ok(h)
    }

    pub fn output_bins(&self, input_bins: usize) -> usize {
        self.config.projection.map_or(input_bins, |(_, to)| to)
    }

    pub fn stream_state(&self, input_bins: usize) -> BlockStream {
        let c = &self.config.conv;
        let span = match c.axis {
            ConvAxis::Frequency => 0,
            ConvAxis::TimeFrequency => c.causal_pad() + 1,
        };
        let out_bins = self.output_bins(input_bins);
        BlockStream {
            history: VecDeque::with_capacity(span),
            span,
            running: vec![NormRunning { mean: ZERO, power: 0.0 }; c.out_channels],
            first: true,
            dw: vec![ZERO; c.in_channels * input_bins],
            proj: vec![ZERO; c.in_channels * out_bins],
            pw: vec![ZERO; c.out_channels * out_bins],
            normed: vec![ZERO; c.out_channels * out_bins],
        }
    }

    /// Processes one frame `[in_channels, bins]` into `out` (`[out_channels, out_bins]`).
    pub fn step(
        &self,
        store: &ParamStore,
        state: &mut BlockStream,
        frame: &[C64],
        bins: usize,
        norm_eps: f64,
        out: &mut [C64],
    ) {
        let p = &self.params;
        let cfg = &self.config;
        let c = &cfg.conv;
        let dw = store.get(p.depthwise).data();
        match c.axis {
            ConvAxis::Frequency => {
                kernels::depthwise_freq(frame, &mut state.dw, dw, c.in_channels, bins, c.kernel_size, c.dilation);
            }
            ConvAxis::TimeFrequency => {
                if state.history.len() == state.span {
                    let mut recycled = state.history.pop_front().unwrap_or_default();
                    recycled.clear();
                    recycled.extend_from_slice(frame);
                    state.history.push_back(recycled);
                } else {
                    state.history.push_back(frame.to_vec());
                }
                let len = state.history.len();
                let kt = c.kernel_size;
                let hist: Vec<Option<&[C64]>> = (0..kt)
                    .map(|jt| {
                        let lag = (kt - 1 - jt) * c.dilation;
                        (lag < len).then(|| state.history[len - 1 - lag].as_slice())
                    })
                    .collect();
                kernels::depthwise_tf(&hist, &mut state.dw, dw, c.in_channels, bins, c.freq_kernel);
            }
        }
        let (mixed_in, mixed_bins) = match (p.projection, cfg.projection) {
            (Some(pi), Some((from, to))) => {
                kernels::project(
                    &state.dw,
                    &mut state.proj,
                    store.get(pi).data(),
                    c.in_channels,
                    from,
                    to,
                );
                (&state.proj, to)
            }
            _ => (&state.dw, bins),
        };
        let post = p.norm.is_some() || p.slope.is_some();
        let target: &mut [C64] = if post { &mut state.pw } else { out };
        kernels::pointwise(
            mixed_in,
            target,
            store.get(p.pointwise).data(),
            store.get(p.bias).data(),
            c.in_channels,
            c.out_channels,
            mixed_bins,
        );
        match (p.norm, p.slope) {
            (Some((g, b)), slope) => {
                let first = state.first;
                state.first = false;
                let dest: &mut [C64] = if slope.is_some() { &mut state.normed } else { out };
                kernels::instance_norm(
                    &state.pw,
                    dest,
                    store.get(g).data(),
                    store.get(b).data(),
                    c.out_channels,
                    mixed_bins,
                    norm_eps,
                    cfg.norm_smoothing,
                    &mut state.running,
                    first,
                    None,
                );
                if let Some(s) = slope {
                    kernels::prelu(&state.normed, out, store.get(s).data()[0]);
                }
            }
            (None, Some(s)) => kernels::prelu(&state.pw, out, store.get(s).data()[0]),
            (None, None) => {}
        }
    }
}

/// Per-block streaming state: causal input history and running norm stats.
#[derive(Debug, Clone)]
pub struct BlockStream {
    history: VecDeque<Vec<C64>>,
    span: usize,
    running: Vec<NormRunning>,
    first: bool,
    dw: Vec<C64>,
    proj: Vec<C64>,
    pw: Vec<C64>,
    normed: Vec<C64>,
}
