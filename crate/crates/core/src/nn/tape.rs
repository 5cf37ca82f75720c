//! Reverse-mode differentiation over complex tensors.
//!
//! Every node holds its value, a lazily allocated gradient and the operation
//! that produced it. Nodes are appended in evaluation order, so the node list
//! is already a topological order of the graph. Gradients use the convention
//! `dL/dRe + i dL/dIm`: a real loss decreases along `-grad`.
//!
//! Activations are laid out `[frames, channels, bins]`.

use std::sync::Arc;

use super::kernels::{self, NormFrameStats, NormRunning};
use crate::dsp::Stft;
use crate::error::{Error, Result};
use crate::losses::components::{self, BranchTrace, IpdMode, ThirdOctaveBands};
use crate::model::predictor;
use crate::tensor::{Tensor, C64, ZERO};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// A tensor taking part in differentiation: value, gradient slot and the
/// backward link to the operation that produced it.
#[derive(Debug)]
pub struct DiffTensor {
    pub value: Tensor,
    pub grad: Option<Tensor>,
    requires_grad: bool,
    op: Op,
}

#[derive(Debug)]
enum Op {
    Leaf,
    DepthwiseFreq {
        x: Var,
        w: Var,
        kernel: usize,
        dilation: usize,
    },
    DepthwiseTf {
        x: Var,
        w: Var,
        kt: usize,
        kf: usize,
        dilation: usize,
    },
    Pointwise {
        x: Var,
        w: Var,
        b: Var,
    },
    Project {
        x: Var,
        p: Var,
    },
    Chomp {
        x: Var,
    },
    Norm {
        x: Var,
        gain: Var,
        bias: Var,
        smoothing: f64,
        stats: Vec<NormFrameStats>,
    },
    Prelu {
        x: Var,
        slope: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    SubFrom {
        a: Var,
    },
    Restore {
        wx: Var,
        wn: Var,
        y: Tensor,
        eps: f64,
    },
    Masks {
        ml: Var,
        mr: Var,
        y: Tensor,
    },
    MaskRatf {
        mr: Var,
        wx: Var,
        y: Tensor,
    },
    Istft {
        x: Var,
        engine: Arc<Stft>,
        signal_len: usize,
    },
    Snr {
        x: Var,
        reference: Vec<Vec<f64>>,
    },
    Ild {
        x: Var,
        reference: Tensor,
    },
    Ipd {
        x: Var,
        reference: Tensor,
    },
    Stoi {
        x: Var,
        reference: Tensor,
        bands: Arc<ThirdOctaveBands>,
        segment: usize,
    },
    WeightedSum {
        terms: Vec<(Var, f64)>,
    },
    SumAbsSq {
        x: Var,
    },
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<DiffTensor>,
    trace: Option<BranchTrace>,
}

fn frames_of(t: &Tensor) -> usize {
    t.shape()[0]
}

fn frame_len(t: &Tensor) -> usize {
    t.len() / t.shape()[0].max(1)
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Records which side of every kink (PReLU at zero, absolute values,
    /// magnitude floors, the restore denominator floor) was taken.
    pub fn with_branch_trace() -> Self {
        Tape {
            nodes: Vec::new(),
            trace: Some(BranchTrace::default()),
        }
    }

    pub fn branch_trace(&self) -> Option<&[bool]> {
        self.trace.as_ref().map(|t| t.0.as_slice())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn node(&self, v: Var) -> &DiffTensor {
        &self.nodes[v.0]
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(DiffTensor {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn check_finite(t: &Tensor, what: &str) -> Result<()> {
        if t.all_finite() {
            Ok(())
        } else {
            Err(Error::Numeric(format!("non-finite {what}")))
        }
    }

    fn expect_rank3(&self, x: Var, channels: usize, what: &str) -> Result<(usize, usize)> {
        let s = self.value(x).shape();
        if s.len() != 3 || s[1] != channels {
            return Err(Error::shape(format!(
                "{what}: expected [frames, {channels}, bins], got {s:?}"
            )));
        }
        Ok((s[0], s[2]))
    }

    /// Depthwise convolution along frequency; `w` is `[channels, kernel]`.
    pub fn depthwise_freq(&mut self, x: Var, w: Var, kernel: usize, dilation: usize) -> Result<Var> {
        let ws = self.value(w).shape().to_vec();
        if ws.len() != 2 || ws[1] != kernel || kernel.is_multiple_of(2) || dilation == 0 {
            return Err(Error::shape(format!("depthwise weights {ws:?} for kernel {kernel}")));
        }
        let channels = ws[0];
        let (frames, bins) = self.expect_rank3(x, channels, "depthwise_freq")?;
        Self::check_finite(self.value(w), "depthwise weights")?;
        let mut out = Tensor::zeros(&[frames, channels, bins]);
        let fl = channels * bins;
        {
            let (xv, wv) = (self.value(x).data(), self.value(w).data());
            for (t, o) in out.data_mut().chunks_exact_mut(fl).enumerate() {
                kernels::depthwise_freq(&xv[t * fl..(t + 1) * fl], o, wv, channels, bins, kernel, dilation);
            }
        }
        let rg = self.rg(&[x, w]);
        Ok(self.push(out, Op::DepthwiseFreq { x, w, kernel, dilation }, rg))
    }

    /// Depthwise 2D convolution, causal in time; `w` is `[channels, kt, kf]`.
    ///
    /// `extra_frames` extends the output past the input end, which together
    /// with [`Tape::chomp`] reproduces the pad-then-chomp formulation.
    pub fn depthwise_tf(&mut self, x: Var, w: Var, dilation: usize, extra_frames: usize) -> Result<Var> {
        let ws = self.value(w).shape().to_vec();
        if ws.len() != 3 || ws[2].is_multiple_of(2) || dilation == 0 {
            return Err(Error::shape(format!("2D depthwise weights {ws:?}")));
        }
        let (channels, kt, kf) = (ws[0], ws[1], ws[2]);
        let (frames, bins) = self.expect_rank3(x, channels, "depthwise_tf")?;
        Self::check_finite(self.value(w), "depthwise weights")?;
        let out_frames = frames + extra_frames;
        let mut out = Tensor::zeros(&[out_frames, channels, bins]);
        let fl = channels * bins;
        {
            let (xv, wv) = (self.value(x).data(), self.value(w).data());
            let mut hist: Vec<Option<&[C64]>> = vec![None; kt];
            for (t, o) in out.data_mut().chunks_exact_mut(fl).enumerate() {
                for (jt, h) in hist.iter_mut().enumerate() {
                    let lag = (kt - 1 - jt) * dilation;
                    *h = (t >= lag && t - lag < frames).then(|| &xv[(t - lag) * fl..(t - lag + 1) * fl]);
                }
                kernels::depthwise_tf(&hist, o, wv, channels, bins, kf);
            }
        }
        let rg = self.rg(&[x, w]);
        Ok(self.push(out, Op::DepthwiseTf { x, w, kt, kf, dilation }, rg))
    }

    /// Channel mixing `[out, in]` plus bias `[out]`.
    pub fn pointwise(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let ws = self.value(w).shape().to_vec();
        if ws.len() != 2 || self.value(b).shape() != [ws[0]] {
            return Err(Error::shape(format!(
                "pointwise weights {ws:?} / bias {:?}",
                self.value(b).shape()
            )));
        }
        let (out_ch, in_ch) = (ws[0], ws[1]);
        let (frames, bins) = self.expect_rank3(x, in_ch, "pointwise")?;
        Self::check_finite(self.value(w), "pointwise weights")?;
        Self::check_finite(self.value(b), "bias")?;
        let mut out = Tensor::zeros(&[frames, out_ch, bins]);
        {
            let (xv, wv, bv) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
            for (t, o) in out.data_mut().chunks_exact_mut(out_ch * bins).enumerate() {
                let xf = &xv[t * in_ch * bins..(t + 1) * in_ch * bins];
                kernels::pointwise(xf, o, wv, bv, in_ch, out_ch, bins);
            }
        }
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(out, Op::Pointwise { x, w, b }, rg))
    }

    /// Frequency-axis linear map `p: [to, from]` shared across channels.
    pub fn project(&mut self, x: Var, p: Var) -> Result<Var> {
        let ps = self.value(p).shape().to_vec();
        let xs = self.value(x).shape().to_vec();
        if ps.len() != 2 || xs.len() != 3 || xs[2] != ps[1] {
            return Err(Error::shape(format!("projection {ps:?} applied to {xs:?}")));
        }
        let (to, from) = (ps[0], ps[1]);
        let (frames, channels) = (xs[0], xs[1]);
        let mut out = Tensor::zeros(&[frames, channels, to]);
        {
            let (xv, pv) = (self.value(x).data(), self.value(p).data());
            for (t, o) in out.data_mut().chunks_exact_mut(channels * to).enumerate() {
                kernels::project(
                    &xv[t * channels * from..(t + 1) * channels * from],
                    o,
                    pv,
                    channels,
                    from,
                    to,
                );
            }
        }
        let rg = self.rg(&[x, p]);
        Ok(self.push(out, Op::Project { x, p }, rg))
    }

    /// Drops the trailing `pad` frames.
    pub fn chomp(&mut self, x: Var, pad: usize) -> Result<Var> {
        let xv = self.value(x);
        let frames = frames_of(xv);
        if pad >= frames {
            return Err(Error::shape(format!("cannot chomp {pad} of {frames} frames")));
        }
        let fl = frame_len(xv);
        let mut shape = xv.shape().to_vec();
        shape[0] = frames - pad;
        let out = Tensor::from_vec(&shape, xv.data()[..(frames - pad) * fl].to_vec())?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Chomp { x }, rg))
    }

    /// Complex instance norm with per-channel affine `gain`, `bias` (`[channels]`).
    pub fn instance_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64, smoothing: f64) -> Result<Var> {
        let channels = self.value(gain).len();
        if self.value(bias).len() != channels {
            return Err(Error::shape("norm gain and bias differ in length"));
        }
        if !(0.0..1.0).contains(&smoothing) {
            return Err(Error::config(format!("norm smoothing {smoothing} outside [0, 1)")));
        }
        let (frames, bins) = self.expect_rank3(x, channels, "instance_norm")?;
        let mut out = Tensor::zeros(&[frames, channels, bins]);
        let mut stats = vec![NormFrameStats { mean: ZERO, scale: 1.0 }; frames * channels];
        {
            let (xv, g, b) = (self.value(x).data(), self.value(gain).data(), self.value(bias).data());
            let mut running = vec![NormRunning { mean: ZERO, power: 0.0 }; channels];
            let fl = channels * bins;
            for (t, (o, s)) in out
                .data_mut()
                .chunks_exact_mut(fl)
                .zip(stats.chunks_exact_mut(channels))
                .enumerate()
            {
                kernels::instance_norm(
                    &xv[t * fl..(t + 1) * fl],
                    o,
                    g,
                    b,
                    channels,
                    bins,
                    eps,
                    smoothing,
                    &mut running,
                    t == 0,
                    Some(s),
                );
            }
        }
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            out,
            Op::Norm {
                x,
                gain,
                bias,
                smoothing,
                stats,
            },
            rg,
        ))
    }

    /// Split PReLU; `slope` is a single complex value (real slope for the real
    /// part, imaginary slope for the imaginary part).
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        if self.value(slope).len() != 1 {
            return Err(Error::shape("prelu slope must hold one complex value"));
        }
        let s = self.value(slope).data()[0];
        if !s.re.is_finite() || !s.im.is_finite() {
            return Err(Error::Numeric("non-finite prelu slope".into()));
        }
        let xv = &self.nodes[x.0].value;
        let mut out = Tensor::zeros(xv.shape());
        kernels::prelu(xv.data(), out.data_mut(), s);
        if let Some(tr) = self.trace.as_mut() {
            for z in xv.data() {
                tr.0.push(z.re > 0.0);
                tr.0.push(z.im > 0.0);
            }
        }
        let rg = self.rg(&[x, slope]);
        Ok(self.push(out, Op::Prelu { x, slope }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(format!(
                "add {:?} + {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut out = Tensor::zeros(self.value(a).shape());
        kernels::add(self.value(a).data(), self.value(b).data(), out.data_mut());
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    /// `c - a` for a constant `c`.
    pub fn sub_from(&mut self, c: &Tensor, a: Var) -> Result<Var> {
        if c.shape() != self.value(a).shape() {
            return Err(Error::shape("sub_from operands differ in shape"));
        }
        let data = c.data().iter().zip(self.value(a).data()).map(|(p, q)| p - q).collect();
        let out = Tensor::from_vec(c.shape(), data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::SubFrom { a }, rg))
    }

    fn predictor_shapes(&self, a: Var, b: Var, y: &Tensor) -> Result<(usize, usize)> {
        let ys = y.shape();
        if ys.len() != 3 || ys[1] != 2 {
            return Err(Error::shape(format!(
                "noisy low band must be [frames, 2, q], got {ys:?}"
            )));
        }
        for v in [a, b] {
            let s = self.value(v).shape();
            if s != [ys[0], 1, ys[2]] {
                return Err(Error::shape(format!("head output {s:?} vs noisy {ys:?}")));
            }
        }
        Ok((ys[0], ys[2]))
    }

    /// Restores both ears from the two RATFs and the noisy low band.
    pub fn restore(&mut self, wx: Var, wn: Var, y: &Tensor, eps: f64) -> Result<Var> {
        let (frames, q) = self.predictor_shapes(wx, wn, y)?;
        let mut out = Tensor::zeros(&[frames, 2, q]);
        {
            let (a, b, yv) = (self.nodes[wx.0].value.data(), self.nodes[wn.0].value.data(), y.data());
            let o = out.data_mut();
            for t in 0..frames {
                for f in 0..q {
                    let i = t * q + f;
                    let (yl, yr) = (yv[t * 2 * q + f], yv[t * 2 * q + q + f]);
                    let (xl, xr) = predictor::restore_bin(yl, yr, a[i], b[i], eps);
                    o[t * 2 * q + f] = xl;
                    o[t * 2 * q + q + f] = xr;
                    if let Some(tr) = self.trace.as_mut() {
                        tr.0.push((a[i] - b[i]).norm() < eps);
                    }
                }
            }
        }
        let rg = self.rg(&[wx, wn]);
        Ok(self.push(
            out,
            Op::Restore {
                wx,
                wn,
                y: y.clone(),
                eps,
            },
            rg,
        ))
    }

    pub fn apply_masks(&mut self, ml: Var, mr: Var, y: &Tensor) -> Result<Var> {
        let (frames, q) = self.predictor_shapes(ml, mr, y)?;
        let mut out = Tensor::zeros(&[frames, 2, q]);
        {
            let (l, r, yv) = (self.value(ml).data(), self.value(mr).data(), y.data());
            let o = out.data_mut();
            for t in 0..frames {
                for f in 0..q {
                    let i = t * q + f;
                    o[t * 2 * q + f] = l[i] * yv[t * 2 * q + f];
                    o[t * 2 * q + q + f] = r[i] * yv[t * 2 * q + q + f];
                }
            }
        }
        let rg = self.rg(&[ml, mr]);
        Ok(self.push(out, Op::Masks { ml, mr, y: y.clone() }, rg))
    }

    /// Right ear by masking, left ear through the target RATF.
    pub fn apply_mask_plus_ratf(&mut self, mr: Var, wx: Var, y: &Tensor) -> Result<Var> {
        let (frames, q) = self.predictor_shapes(mr, wx, y)?;
        let mut out = Tensor::zeros(&[frames, 2, q]);
        {
            let (m, w, yv) = (self.value(mr).data(), self.value(wx).data(), y.data());
            let o = out.data_mut();
            for t in 0..frames {
                for f in 0..q {
                    let i = t * q + f;
                    let xr = m[i] * yv[t * 2 * q + q + f];
                    o[t * 2 * q + f] = w[i] * xr;
                    o[t * 2 * q + q + f] = xr;
                }
            }
        }
        let rg = self.rg(&[mr, wx]);
        Ok(self.push(out, Op::MaskRatf { mr, wx, y: y.clone() }, rg))
    }

    /// Synthesises waveforms `[channels, signal_len]` (values in the real part)
    /// from low-band frames `[frames, channels, q]`; bins above `q` are zero.
    pub fn istft(&mut self, x: Var, engine: Arc<Stft>, signal_len: usize) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let bins = engine.config().bins();
        if xs.len() != 3 || xs[2] > bins {
            return Err(Error::shape(format!("istft input {xs:?} exceeds {bins} bins")));
        }
        let (frames, channels, q) = (xs[0], xs[1], xs[2]);
        let mut data = Vec::with_capacity(channels * signal_len);
        {
            let xv = self.value(x).data();
            let mut full = vec![ZERO; frames * bins];
            for c in 0..channels {
                for t in 0..frames {
                    let src = &xv[(t * channels + c) * q..(t * channels + c + 1) * q];
                    full[t * bins..t * bins + q].copy_from_slice(src);
                }
                let wave = engine.istft_frames(&full, bins, signal_len)?;
                data.extend(wave.into_iter().map(|v| C64::new(v, 0.0)));
            }
        }
        let out = Tensor::from_vec(&[channels, signal_len], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Istft { x, engine, signal_len }, rg))
    }

    fn waves_of(t: &Tensor) -> Vec<Vec<f64>> {
        let len = t.shape()[1];
        t.data()
            .chunks_exact(len.max(1))
            .map(|c| c.iter().map(|z| z.re).collect())
            .collect()
    }

    /// SNR loss of waveforms `[channels, len]` against a fixed reference.
    pub fn snr_loss(&mut self, x: Var, reference: Vec<Vec<f64>>) -> Result<Var> {
        let s = self.value(x).shape();
        if s.len() != 2 {
            return Err(Error::shape("snr loss expects [channels, samples]"));
        }
        let (v, _) = components::snr_loss(&Self::waves_of(self.value(x)), &reference, false)?;
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::scalar(v), Op::Snr { x, reference }, rg))
    }

    pub fn ild_loss(&mut self, x: Var, reference: Tensor) -> Result<Var> {
        let (v, _) = components::ild_loss(&self.nodes[x.0].value, &reference, false, self.trace.as_mut())?;
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::scalar(v), Op::Ild { x, reference }, rg))
    }

    pub fn ipd_loss(&mut self, x: Var, reference: Tensor) -> Result<Var> {
        let (v, _) = components::ipd_loss(
            &self.nodes[x.0].value,
            &reference,
            IpdMode::MagnitudeRatio,
            false,
            self.trace.as_mut(),
        )?;
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::scalar(v), Op::Ipd { x, reference }, rg))
    }

    pub fn stoi_loss(
        &mut self,
        x: Var,
        reference: Tensor,
        bands: Arc<ThirdOctaveBands>,
        segment: usize,
    ) -> Result<Var> {
        let (v, _) = components::stoi_surrogate_loss(self.value(x), &reference, &bands, segment, false)?;
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::scalar(v),
            Op::Stoi {
                x,
                reference,
                bands,
                segment,
            },
            rg,
        ))
    }

    /// `sum_i weight_i * term_i` over scalar terms.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut v = 0.0;
        for &(t, w) in terms {
            let val = self.value(t);
            if val.len() != 1 {
                return Err(Error::shape("weighted_sum terms must be scalars"));
            }
            v += w * val.data()[0].re;
        }
        let vars: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let rg = self.rg(&vars);
        Ok(self.push(Tensor::scalar(v), Op::WeightedSum { terms: terms.to_vec() }, rg))
    }

    pub fn sum_abs_sq(&mut self, x: Var) -> Result<Var> {
        let v: f64 = self.value(x).data().iter().map(|z| z.norm_sqr()).sum();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::scalar(v), Op::SumAbsSq { x }, rg))
    }

    /// Back-propagates from a real scalar `loss`, filling the gradient of
    /// every node that requires one.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "loss has shape {:?}, expected a scalar",
                lv.shape()
            )));
        }
        if lv.data()[0].im != 0.0 {
            return Err(Error::Contract("loss is not real".into()));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[loss.0].grad = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else { continue };
            let contributions = self.backward_node(i, &g)?;
            self.nodes[i].grad = Some(g);
            for (v, t) in contributions {
                if v.0 >= i {
                    return Err(Error::Internal(format!("tape cycle: node {i} feeds from {}", v.0)));
                }
                let node = &mut self.nodes[v.0];
                if !node.requires_grad {
                    continue;
                }
                match node.grad.as_mut() {
                    Some(acc) => acc.add_assign(&t),
                    None => node.grad = Some(t),
                }
            }
        }
        Ok(())
    }

    fn zeros_like(&self, v: Var) -> Tensor {
        Tensor::zeros(self.value(v).shape())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&self, i: usize, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let gd = g.data();
        let mut out = Vec::new();
        match &self.nodes[i].op {
            Op::Leaf => {}
            &Op::DepthwiseFreq { x, w, kernel, dilation } => {
                let xs = self.value(x).shape();
                let (frames, channels, bins) = (xs[0], xs[1], xs[2]);
                let (xv, wv) = (self.value(x).data(), self.value(w).data());
                let mut gx = self.zeros_like(x);
                let mut gw = self.zeros_like(w);
                let half = (kernel - 1) / 2 * dilation;
                {
                    let (gxd, gwd) = (gx.data_mut(), gw.data_mut());
                    for t in 0..frames {
                        for c in 0..channels {
                            let base = (t * channels + c) * bins;
                            for j in 0..kernel {
                                let shift = j * dilation;
                                let lo = half.saturating_sub(shift);
                                let hi = (bins + half).saturating_sub(shift).min(bins);
                                let wc = wv[c * kernel + j].conj();
                                let mut acc = ZERO;
                                for f in lo..hi {
                                    let src = base + f + shift - half;
                                    let gv = gd[base + f];
                                    gxd[src] += wc * gv;
                                    acc += xv[src].conj() * gv;
                                }
                                gwd[c * kernel + j] += acc;
                            }
                        }
                    }
                }
                out.push((x, gx));
                out.push((w, gw));
            }
            &Op::DepthwiseTf { x, w, kt, kf, dilation } => {
                let xs = self.value(x).shape();
                let (frames, channels, bins) = (xs[0], xs[1], xs[2]);
                let out_frames = g.shape()[0];
                let (xv, wv) = (self.value(x).data(), self.value(w).data());
                let mut gx = self.zeros_like(x);
                let mut gw = self.zeros_like(w);
                let half = (kf - 1) / 2;
                let fl = channels * bins;
                {
                    let (gxd, gwd) = (gx.data_mut(), gw.data_mut());
                    for t in 0..out_frames {
                        for jt in 0..kt {
                            let lag = (kt - 1 - jt) * dilation;
                            if t < lag || t - lag >= frames {
                                continue;
                            }
                            let src_t = t - lag;
                            for c in 0..channels {
                                let gb = t * fl + c * bins;
                                let xb = src_t * fl + c * bins;
                                for jf in 0..kf {
                                    let lo = half.saturating_sub(jf);
                                    let hi = (bins + half).saturating_sub(jf).min(bins);
                                    let wi = (c * kt + jt) * kf + jf;
                                    let wc = wv[wi].conj();
                                    let mut acc = ZERO;
                                    for f in lo..hi {
                                        let src = xb + f + jf - half;
                                        let gv = gd[gb + f];
                                        gxd[src] += wc * gv;
                                        acc += xv[src].conj() * gv;
                                    }
                                    gwd[wi] += acc;
                                }
                            }
                        }
                    }
                }
                out.push((x, gx));
                out.push((w, gw));
            }
            &Op::Pointwise { x, w, b } => {
                let xs = self.value(x).shape();
                let (frames, in_ch, bins) = (xs[0], xs[1], xs[2]);
                let out_ch = self.value(w).shape()[0];
                let (xv, wv) = (self.value(x).data(), self.value(w).data());
                let mut gx = self.zeros_like(x);
                let mut gw = self.zeros_like(w);
                let mut gb = self.zeros_like(b);
                {
                    let (gxd, gwd, gbd) = (gx.data_mut(), gw.data_mut(), gb.data_mut());
                    for t in 0..frames {
                        for o in 0..out_ch {
                            let gr = &gd[(t * out_ch + o) * bins..(t * out_ch + o + 1) * bins];
                            gbd[o] += gr.iter().sum::<C64>();
                            for ii in 0..in_ch {
                                let xb = (t * in_ch + ii) * bins;
                                let wc = wv[o * in_ch + ii].conj();
                                let mut acc = ZERO;
                                let xr = &xv[xb..xb + bins];
                                let gxr = &mut gxd[xb..xb + bins];
                                for f in 0..bins {
                                    gxr[f] += wc * gr[f];
                                    acc += xr[f].conj() * gr[f];
                                }
                                gwd[o * in_ch + ii] += acc;
                            }
                        }
                    }
                }
                out.push((x, gx));
                out.push((w, gw));
                out.push((b, gb));
            }
            &Op::Project { x, p } => {
                let xs = self.value(x).shape();
                let (frames, channels, from) = (xs[0], xs[1], xs[2]);
                let to = self.value(p).shape()[0];
                let (xv, pv) = (self.value(x).data(), self.value(p).data());
                let mut gx = self.zeros_like(x);
                let mut gp = self.zeros_like(p);
                {
                    let (gxd, gpd) = (gx.data_mut(), gp.data_mut());
                    for t in 0..frames {
                        for c in 0..channels {
                            let xb = (t * channels + c) * from;
                            for j in 0..to {
                                let gv = gd[(t * channels + c) * to + j];
                                let pr = &pv[j * from..(j + 1) * from];
                                let gpr = &mut gpd[j * from..(j + 1) * from];
                                for f in 0..from {
                                    gxd[xb + f] += pr[f].conj() * gv;
                                    gpr[f] += xv[xb + f].conj() * gv;
                                }
                            }
                        }
                    }
                }
                out.push((x, gx));
                out.push((p, gp));
            }
            &Op::Chomp { x, .. } => {
                let mut gx = self.zeros_like(x);
                gx.data_mut()[..gd.len()].copy_from_slice(gd);
                out.push((x, gx));
            }
            Op::Norm {
                x,
                gain,
                bias,
                smoothing,
                stats,
            } => {
                let (x, gain, bias, alpha) = (*x, *gain, *bias, *smoothing);
                let xs = self.value(x).shape();
                let (frames, channels, bins) = (xs[0], xs[1], xs[2]);
                let n = bins as f64;
                let (xv, gv) = (self.value(x).data(), self.value(gain).data());
                let mut gx = self.zeros_like(x);
                let mut gg = self.zeros_like(gain);
                let mut gbias = self.zeros_like(bias);
                {
                    let (gxd, ggd, gbd) = (gx.data_mut(), gg.data_mut(), gbias.data_mut());
                    for c in 0..channels {
                        // adjoints flowing back through the running mean/power
                        let mut carry_mu = ZERO;
                        let mut carry_p = 0.0;
                        for t in (0..frames).rev() {
                            let st = stats[t * channels + c];
                            let base = (t * channels + c) * bins;
                            let inv = 1.0 / st.scale;
                            let gc = gv[c].conj();
                            let mut sum_h = ZERO;
                            let mut dot = 0.0;
                            for f in 0..bins {
                                let xh = (xv[base + f] - st.mean) * inv;
                                let go = gd[base + f];
                                ggd[c] += xh.conj() * go;
                                gbd[c] += go;
                                let h = gc * go;
                                sum_h += h;
                                dot += h.re * xh.re + h.im * xh.im;
                                gxd[base + f] += h * inv;
                            }
                            let d_scale = -dot * inv;
                            let g_mu_direct = -sum_h * inv - st.mean * (d_scale * inv);
                            let g_p_direct = d_scale * 0.5 * inv;
                            let a_mu = g_mu_direct + carry_mu * alpha;
                            let a_p = g_p_direct + carry_p * alpha;
                            let (g_m, g_pw) = if t == 0 || alpha == 0.0 {
                                (a_mu, a_p)
                            } else {
                                (a_mu * (1.0 - alpha), a_p * (1.0 - alpha))
                            };
                            carry_mu = a_mu;
                            carry_p = a_p;
                            let gm_n = g_m / n;
                            let gp_n = 2.0 * g_pw / n;
                            for f in 0..bins {
                                gxd[base + f] += gm_n + xv[base + f] * gp_n;
                            }
                        }
                    }
                }
                out.push((x, gx));
                out.push((gain, gg));
                out.push((bias, gbias));
            }
            &Op::Prelu { x, slope } => {
                let s = self.value(slope).data()[0];
                let xv = self.value(x).data();
                let mut gx = self.zeros_like(x);
                let mut gs = ZERO;
                for ((o, v), gv) in gx.data_mut().iter_mut().zip(xv).zip(gd) {
                    let (re, im);
                    if v.re > 0.0 {
                        re = gv.re;
                    } else {
                        re = gv.re * s.re;
                        gs.re += v.re * gv.re;
                    }
                    if v.im > 0.0 {
                        im = gv.im;
                    } else {
                        im = gv.im * s.im;
                        gs.im += v.im * gv.im;
                    }
                    *o = C64::new(re, im);
                }
                out.push((x, gx));
                out.push((slope, Tensor::from_vec(&[1], vec![gs])?));
            }
            &Op::Add { a, b } => {
                out.push((a, g.clone()));
                out.push((b, g.clone()));
            }
            &Op::SubFrom { a } => {
                let data = gd.iter().map(|z| -z).collect();
                out.push((a, Tensor::from_vec(g.shape(), data)?));
            }
            Op::Restore { wx, wn, y, eps } => {
                let (wx, wn, eps) = (*wx, *wn, *eps);
                let q = y.shape()[2];
                let frames = y.shape()[0];
                let (a, b, yv) = (self.value(wx).data(), self.value(wn).data(), y.data());
                let mut gwx = self.zeros_like(wx);
                let mut gwn = self.zeros_like(wn);
                {
                    let (ga, gb) = (gwx.data_mut(), gwn.data_mut());
                    for t in 0..frames {
                        for f in 0..q {
                            let i = t * q + f;
                            let (yl, yr) = (yv[t * 2 * q + f], yv[t * 2 * q + q + f]);
                            let (g_l, g_r) = (gd[t * 2 * q + f], gd[t * 2 * q + q + f]);
                            let (d_wx, d_wn) = predictor::restore_bin_grad(yl, yr, a[i], b[i], eps, g_l, g_r);
                            ga[i] += d_wx;
                            gb[i] += d_wn;
                        }
                    }
                }
                out.push((wx, gwx));
                out.push((wn, gwn));
            }
            Op::Masks { ml, mr, y } => {
                let (ml, mr) = (*ml, *mr);
                let q = y.shape()[2];
                let frames = y.shape()[0];
                let mut gl = self.zeros_like(ml);
                let mut gr = self.zeros_like(mr);
                for t in 0..frames {
                    for f in 0..q {
                        let i = t * q + f;
                        gl.data_mut()[i] = y.data()[t * 2 * q + f].conj() * gd[t * 2 * q + f];
                        gr.data_mut()[i] = y.data()[t * 2 * q + q + f].conj() * gd[t * 2 * q + q + f];
                    }
                }
                out.push((ml, gl));
                out.push((mr, gr));
            }
            Op::MaskRatf { mr, wx, y } => {
                let (mr, wx) = (*mr, *wx);
                let q = y.shape()[2];
                let frames = y.shape()[0];
                let (m, w) = (self.value(mr).data(), self.value(wx).data());
                let mut gm = self.zeros_like(mr);
                let mut gw = self.zeros_like(wx);
                for t in 0..frames {
                    for f in 0..q {
                        let i = t * q + f;
                        let yr = y.data()[t * 2 * q + q + f];
                        let xr = m[i] * yr;
                        let (g_l, g_r) = (gd[t * 2 * q + f], gd[t * 2 * q + q + f]);
                        gw.data_mut()[i] = xr.conj() * g_l;
                        let g_xr = g_r + w[i].conj() * g_l;
                        gm.data_mut()[i] = yr.conj() * g_xr;
                    }
                }
                out.push((mr, gm));
                out.push((wx, gw));
            }
            Op::Istft { x, engine, signal_len } => {
                let x = *x;
                let xs = self.value(x).shape();
                let (frames, channels, q) = (xs[0], xs[1], xs[2]);
                let cfg = engine.config();
                let (n, hop, pad) = (cfg.fft_size, cfg.hop, cfg.pad_left());
                let window = engine.window();
                let inv_norm = engine.inv_norm();
                let mut gx = self.zeros_like(x);
                let buf_len = (frames.max(1) - 1) * hop + n;
                let mut gbuf = vec![0.0; buf_len];
                let mut scratch = vec![ZERO; n];
                for c in 0..channels {
                    gbuf.fill(0.0);
                    for s in 0..*signal_len {
                        let p = s + pad;
                        if p < buf_len {
                            gbuf[p] = gd[c * signal_len + s].re * inv_norm[p % hop];
                        }
                    }
                    for t in 0..frames {
                        for (k, z) in scratch.iter_mut().enumerate() {
                            *z = C64::new(gbuf[t * hop + k] * window[k], 0.0);
                        }
                        engine.fft().forward(&mut scratch);
                        let gxd = gx.data_mut();
                        for k in 0..q {
                            let ck = if k == 0 || k == n / 2 { 1.0 } else { 2.0 };
                            let mut v = scratch[k] * (ck / n as f64);
                            if k == 0 || k == n / 2 {
                                v.im = 0.0;
                            }
                            gxd[(t * channels + c) * q + k] += v;
                        }
                    }
                }
                out.push((x, gx));
            }
            Op::Snr { x, reference } => {
                let x = *x;
                let (_, grads) = components::snr_loss(&Self::waves_of(self.value(x)), reference, true)?;
                let scale = gd[0].re;
                let data = grads.into_iter().flatten().map(|v| C64::new(v * scale, 0.0)).collect();
                out.push((x, Tensor::from_vec(self.value(x).shape(), data)?));
            }
            Op::Ild { x, reference } => {
                let (_, gr) = components::ild_loss(self.value(*x), reference, true, None)?;
                out.push((*x, scaled(gr, gd[0].re)));
            }
            Op::Ipd { x, reference } => {
                let (_, gr) = components::ipd_loss(self.value(*x), reference, IpdMode::MagnitudeRatio, true, None)?;
                out.push((*x, scaled(gr, gd[0].re)));
            }
            Op::Stoi {
                x,
                reference,
                bands,
                segment,
            } => {
                let (_, gr) = components::stoi_surrogate_loss(self.value(*x), reference, bands, *segment, true)?;
                out.push((*x, scaled(gr, gd[0].re)));
            }
            Op::WeightedSum { terms } => {
                for &(t, w) in terms {
                    if self.wants(t) {
                        out.push((t, Tensor::scalar(w * gd[0].re)));
                    }
                }
            }
            &Op::SumAbsSq { x } => {
                let s = gd[0].re;
                let data = self.value(x).data().iter().map(|z| z * (2.0 * s)).collect();
                out.push((x, Tensor::from_vec(self.value(x).shape(), data)?));
            }
        }
        Ok(out)
    }
}

fn scaled(g: Option<Tensor>, s: f64) -> Tensor {
    let mut g = g.expect("gradient requested");
    for z in g.data_mut() {
        *z *= s;
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{grad_check, Evaluation};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    fn at(t: &Tensor, idx: [usize; 3]) -> C64 {
        let s = t.shape();
        t.data()[(idx[0] * s[1] + idx[1]) * s[2] + idx[2]]
    }

    #[test]
    fn abs_sq_gradient_is_twice_the_value() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::from_vec(&[1], vec![c(3.0, 4.0)]).unwrap(), true);
        let l = tape.sum_abs_sq(w).unwrap();
        assert_eq!(tape.value(l).data()[0].re, 25.0);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(w).unwrap().data()[0], c(6.0, 8.0));
    }

    #[test]
    fn unused_parameter_gets_no_gradient() {
        let mut tape = Tape::new();
        let a = tape.leaf(random(&[3], 1), true);
        let b = tape.leaf(random(&[3], 2), true);
        let l = tape.sum_abs_sq(a).unwrap();
        tape.backward(l).unwrap();
        assert!(tape.grad(b).is_none_or(|g| g.data().iter().all(|z| *z == ZERO)));
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let a = tape.leaf(random(&[3], 1), true);
        assert!(tape.backward(a).is_err());
    }

    #[test]
    fn freq_conv_matches_naive_loop() {
        let (t, ch, f, k, d) = (3, 2, 11, 5, 2);
        let x = random(&[t, ch, f], 3);
        let w = random(&[ch, k], 4);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let wv = tape.constant(w.clone());
        let y = tape.depthwise_freq(xv, wv, k, d).unwrap();
        let y = tape.value(y).clone();
        for ti in 0..t {
            for ci in 0..ch {
                for fi in 0..f {
                    let mut acc = ZERO;
                    for j in 0..k {
                        let src = fi as i64 + (j as i64 - (k as i64 - 1) / 2) * d as i64;
                        if (0..f as i64).contains(&src) {
                            acc += w.data()[ci * k + j] * at(&x, [ti, ci, src as usize]);
                        }
                    }
                    assert!((at(&y, [ti, ci, fi]) - acc).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn tf_conv_matches_padded_correlation_then_chomp() {
        let (t, ch, f, kt, kf, d) = (9, 2, 6, 3, 3, 2);
        let pad = (kt - 1) * d;
        let x = random(&[t, ch, f], 5);
        let w = random(&[ch, kt, kf], 6);
        // pad `pad` frames on both sides, correlate, keep the first `t` outputs
        let mut expected = Tensor::zeros(&[t, ch, f]);
        for to in 0..t {
            for ci in 0..ch {
                for fi in 0..f {
                    let mut acc = ZERO;
                    for jt in 0..kt {
                        let src_t = (to + jt * d) as i64 - pad as i64;
                        for jf in 0..kf {
                            let src_f = fi as i64 + jf as i64 - (kf as i64 - 1) / 2;
                            if (0..t as i64).contains(&src_t) && (0..f as i64).contains(&src_f) {
                                acc +=
                                    w.data()[(ci * kt + jt) * kf + jf] * at(&x, [src_t as usize, ci, src_f as usize]);
                            }
                        }
                    }
                    expected.data_mut()[(to * ch + ci) * f + fi] = acc;
                }
            }
        }
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let wv = tape.constant(w);
        let direct = tape.depthwise_tf(xv, wv, d, 0).unwrap();
        let long = tape.depthwise_tf(xv, wv, d, pad).unwrap();
        assert_eq!(tape.value(long).shape(), [t + pad, ch, f]);
        let chomped = tape.chomp(long, pad).unwrap();
        assert!(tape.value(direct).max_abs_diff(&expected) < 1e-12);
        assert_eq!(tape.value(direct), tape.value(chomped));
    }

    #[test]
    fn tf_conv_is_causal() {
        let (t, ch, f) = (12, 1, 5);
        let x = random(&[t, ch, f], 7);
        let w = random(&[ch, 4, 3], 8);
        let mut changed = x.clone();
        for v in &mut changed.data_mut()[6 * ch * f..] {
            *v += c(5.0, -2.0);
        }
        let mut tape = Tape::new();
        let (a, b, wv) = (tape.constant(x), tape.constant(changed), tape.constant(w));
        let ya = tape.depthwise_tf(a, wv, 2, 0).unwrap();
        let yb = tape.depthwise_tf(b, wv, 2, 0).unwrap();
        let (ya, yb) = (tape.value(ya).data(), tape.value(yb).data());
        assert_eq!(ya[..6 * ch * f], yb[..6 * ch * f]);
        assert_ne!(ya[6 * ch * f..], yb[6 * ch * f..]);
    }

    #[test]
    fn instance_norm_gives_zero_mean_unit_power() {
        let x = random(&[4, 3, 17], 9);
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let g = tape.constant(Tensor::from_vec(&[3], vec![c(1.0, 0.0); 3]).unwrap());
        let b = tape.constant(Tensor::zeros(&[3]));
        let y = tape.instance_norm(xv, g, b, 0.0, 0.0).unwrap();
        for row in tape.value(y).data().chunks(17) {
            let mean: C64 = row.iter().sum::<C64>() / 17.0;
            let power: f64 = row.iter().map(|z| (z - mean).norm_sqr()).sum::<f64>() / 17.0;
            assert!(mean.norm() < 1e-12);
            assert!((power - 1.0).abs() < 1e-12);
        }
    }

    fn conv_eval(x: &Tensor, theta: &[Tensor], want: bool, slope: Option<C64>) -> Result<Evaluation> {
        let mut tape = Tape::with_branch_trace();
        let xv = tape.constant(x.clone());
        let vars: Vec<Var> = theta.iter().map(|t| tape.leaf(t.clone(), want)).collect();
        let h = tape.depthwise_tf(xv, vars[0], 1, 0)?;
        let mut h = tape.pointwise(h, vars[1], vars[2])?;
        if let Some(s) = slope {
            let s = tape.constant(Tensor::from_vec(&[1], vec![s])?);
            h = tape.prelu(h, s)?;
        }
        let l = tape.sum_abs_sq(h)?;
        let loss = tape.value(l).data()[0].re;
        let grads = if want {
            tape.backward(l)?;
            Some(vars.iter().map(|&v| tape.grad(v).cloned().unwrap()).collect())
        } else {
            None
        };
        Ok(Evaluation {
            loss,
            grads,
            trace: tape.branch_trace().unwrap().to_vec(),
        })
    }

    #[test]
    fn single_conv_gradients_match_central_differences() {
        let x = random(&[6, 2, 5], 10);
        let theta = vec![random(&[2, 3, 3], 11), random(&[3, 2], 12), random(&[3], 13)];
        let names: Vec<String> = ["dw", "pw", "b"].iter().map(|s| s.to_string()).collect();
        let r = grad_check(&names, &theta, |p, want| conv_eval(&x, p, want, None), 1e-3, 1e-6).unwrap();
        assert!(r.passed(), "{:?}", r.failures());
        assert_eq!(r.excluded(), 0);
    }

    #[test]
    fn prelu_kinks_are_excluded_not_failed() {
        let x = random(&[6, 2, 5], 14);
        let mut theta = vec![random(&[2, 3, 3], 15), random(&[3, 2], 16), random(&[3], 17)];
        // push one pre-activation to within the step of zero
        let y = {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let v: Vec<Var> = theta.iter().map(|t| tape.constant(t.clone())).collect();
            let h = tape.depthwise_tf(xv, v[0], 1, 0).unwrap();
            let h = tape.pointwise(h, v[1], v[2]).unwrap();
            tape.value(h).data()[0]
        };
        theta[2].data_mut()[0] -= c(y.re - 1e-4, 0.0);
        let names: Vec<String> = ["dw", "pw", "b"].iter().map(|s| s.to_string()).collect();
        let r = grad_check(
            &names,
            &theta,
            |p, want| conv_eval(&x, p, want, Some(c(0.25, 0.25))),
            1e-3,
            1e-6,
        )
        .unwrap();
        assert!(r.excluded() > 0);
        assert!(r.passed(), "{:?}", r.failures());
    }
}
