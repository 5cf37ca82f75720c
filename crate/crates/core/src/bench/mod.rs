//! Parameter, multiply-accumulate and real-time-factor accounting.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dsp::{Stft, PIPELINE_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::model::{architecture, LbccnConfig, LbccnModel, StreamState};
use crate::tensor::ZERO;

/// Real multiplies per complex multiply-accumulate.
pub const REAL_MACS_PER_COMPLEX: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParamCounts {
    pub complex: usize,
    pub real: usize,
}

/// Analytic count from the layer formulas (depthwise `in*taps`, pointwise
/// `out*in`, bias `out`, plus projection, norm affine and PReLU slopes).
pub fn count_params(config: &LbccnConfig) -> Result<ParamCounts> {
    let complex = architecture(config)?.iter().map(|l| l.block.complex_params()).sum();
    Ok(ParamCounts {
        complex,
        real: 2 * complex,
    })
}

/// Sum of the element counts of every stored weight tensor.
pub fn enumerate_params(model: &LbccnModel) -> ParamCounts {
    let complex = model.params().tensors().iter().map(|t| t.len()).sum();
    ParamCounts {
        complex,
        real: 2 * complex,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MacCount {
    pub complex_per_frame: usize,
    pub real_per_frame: usize,
    pub frame_rate: f64,
    pub audio_seconds: f64,
    pub real_macs: f64,
    pub basis: String,
}

/// Multiply-accumulates of the network for `audio_seconds` of audio.
///
/// Per frame every layer contributes `in*taps*bins` (depthwise, padded taps
/// included), `in*from*to` (projection), `out*in*bins` (pointwise) and
/// `out*bins` (norm gain). Each complex MAC counts as four real MACs and the
/// frame rate is `sample_rate / hop`.
pub fn count_macs(config: &LbccnConfig, audio_seconds: f64) -> Result<MacCount> {
    if !(audio_seconds > 0.0) {
        return Err(Error::Input(format!(
            "audio duration {audio_seconds} s must be positive"
        )));
    }
    let complex_per_frame: usize = architecture(config)?
        .iter()
        .map(|l| l.block.complex_macs_per_frame(l.input_bins))
        .sum();
    let real_per_frame = REAL_MACS_PER_COMPLEX * complex_per_frame;
    let frame_rate = config.stft.frame_rate();
    Ok(MacCount {
        complex_per_frame,
        real_per_frame,
        frame_rate,
        audio_seconds,
        real_macs: real_per_frame as f64 * frame_rate * audio_seconds,
        basis: format!(
            "network layers only (depthwise with padded taps, projection, pointwise, norm gain); \
             1 complex MAC = {REAL_MACS_PER_COMPLEX} real MACs; {frame_rate} frames/s; STFT and predictor excluded"
        ),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RtfStats {
    pub median: f64,
    pub min: f64,
    pub max: f64,
    pub runs: Vec<f64>,
    pub audio_seconds: f64,
    pub path: &'static str,
}

fn test_signal(len: usize, seed: u64) -> (Vec<f32>, Vec<f32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ch = || (0..len).map(|_| rng.gen_range(-0.3f32..0.3)).collect::<Vec<f32>>();
    (ch(), ch())
}

fn stats(mut runs: Vec<f64>, audio_seconds: f64, path: &'static str) -> RtfStats {
    let mut sorted = runs.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    runs.shrink_to_fit();
    RtfStats {
        median,
        min: sorted[0],
        max: sorted[n - 1],
        runs,
        audio_seconds,
        path,
    }
}

fn check_reps(audio_seconds: f64, repetitions: usize) -> Result<usize> {
    if repetitions < 3 {
        return Err(Error::Input(format!("need at least 3 repetitions, got {repetitions}")));
    }
    if !(audio_seconds > 0.0) {
        return Err(Error::Input(format!(
            "audio duration {audio_seconds} s must be positive"
        )));
    }
    Ok((audio_seconds * PIPELINE_SAMPLE_RATE as f64).round() as usize)
}

/// Real-time factor of streaming enhancement on the calling thread: median
/// over `repetitions` timed runs after one untimed warm-up.
pub fn measure_rtf(model: &LbccnModel, audio_seconds: f64, repetitions: usize) -> Result<RtfStats> {
    let len = check_reps(audio_seconds, repetitions)?;
    let (left, right) = test_signal(len, 0);
    let run = || -> Result<f64> {
        let mut st = StreamState::new(model)?;
        let hop = st.hop();
        let (mut ol, mut or) = (vec![0.0f32; hop], vec![0.0f32; hop]);
        let start = Instant::now();
        for (l, r) in left.chunks_exact(hop).zip(right.chunks_exact(hop)) {
            st.process(l, r, &mut ol, &mut or)?;
        }
        std::hint::black_box((&ol, &or));
        Ok(start.elapsed().as_secs_f64() / audio_seconds)
    };
    run()?;
    let runs = (0..repetitions).map(|_| run()).collect::<Result<Vec<_>>>()?;
    Ok(stats(runs, audio_seconds, "streaming"))
}

/// Real-time factor of the streaming STFT analysis/synthesis alone, a
/// lower bound for any model run through the same framing.
pub fn measure_passthrough_rtf(config: &LbccnConfig, audio_seconds: f64, repetitions: usize) -> Result<RtfStats> {
    let len = check_reps(audio_seconds, repetitions)?;
    let (left, right) = test_signal(len, 0);
    let engine = Stft::new(&config.stft)?;
    let (n, hop, bins) = (config.stft.fft_size, config.stft.hop, config.stft.bins());
    let inv = engine.inv_norm().to_vec();
    let run = || -> f64 {
        let mut input = [vec![0.0; n], vec![0.0; n]];
        let mut ola = [vec![0.0; n], vec![0.0; n]];
        let (mut scratch, mut spec, mut seg) = (vec![ZERO; n], vec![ZERO; bins], vec![0.0; n]);
        let mut out = [vec![0.0f32; hop], vec![0.0f32; hop]];
        let start = Instant::now();
        for (l, r) in left.chunks_exact(hop).zip(right.chunks_exact(hop)) {
            for (ear, x) in [l, r].into_iter().enumerate() {
                input[ear].copy_within(hop.., 0);
                for (d, &s) in input[ear][n - hop..].iter_mut().zip(x) {
                    *d = s as f64;
                }
                engine.analyze_frame(&input[ear], &mut scratch, &mut spec);
                engine.synthesize_frame(&spec, &mut scratch, &mut seg);
                for (o, s) in ola[ear].iter_mut().zip(&seg) {
                    *o += s;
                }
                for (i, o) in out[ear].iter_mut().enumerate() {
                    *o = (ola[ear][i] * inv[i % hop]) as f32;
                }
                ola[ear].copy_within(hop.., 0);
                ola[ear][n - hop..].fill(0.0);
            }
        }
        std::hint::black_box(&out);
        start.elapsed().as_secs_f64() / audio_seconds
    };
    run();
    let runs = (0..repetitions).map(|_| run()).collect();
    Ok(stats(runs, audio_seconds, "streaming stft passthrough"))
}

/// CPU model, logical core count and target triple of this machine.
pub fn hardware_tag() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".to_string());
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    format!(
        "{cpu}; {cores} logical cores; {}-{}",
        std::env::consts::ARCH,
        std::env::consts::OS
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplexityReport {
    pub real_params: usize,
    pub complex_params: usize,
    pub real_macs_per_second_audio: f64,
    pub macs: MacCount,
    pub rtf: f64,
    pub rtf_stats: RtfStats,
    pub passthrough_rtf: f64,
    pub hardware_tag: String,
    pub config_hash: String,
    pub threads: usize,
}

impl ComplexityReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

/// Full report: counts, MACs for `audio_seconds` and the streaming RTF.
pub fn complexity_report(model: &LbccnModel, audio_seconds: f64, repetitions: usize) -> Result<ComplexityReport> {
    let cfg = model.config();
    let params = count_params(cfg)?;
    let macs = count_macs(cfg, audio_seconds)?;
    let rtf_stats = measure_rtf(model, audio_seconds, repetitions)?;
    let pass = measure_passthrough_rtf(cfg, audio_seconds, repetitions)?;
    let cfg_json = serde_json::to_vec(cfg).map_err(|e| Error::Internal(e.to_string()))?;
    Ok(ComplexityReport {
        real_params: params.real,
        complex_params: params.complex,
        real_macs_per_second_audio: macs.real_macs / audio_seconds,
        macs,
        rtf: rtf_stats.median,
        rtf_stats,
        passthrough_rtf: pass.median,
        hardware_tag: hardware_tag(),
        config_hash: format!("{:016x}", crate::model::checkpoint::fnv1a(&cfg_json)),
        threads: 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ConvSpec, LightBlockConfig};

    #[test]
    fn single_conv_formula() {
        let spec = ConvSpec::frequency(2, 40, 5, 1);
        assert_eq!(spec.complex_params(), 130);
    }

    #[test]
    fn one_by_one_conv_is_four_real_macs() {
        let spec = ConvSpec::frequency(1, 1, 1, 1);
        assert_eq!(REAL_MACS_PER_COMPLEX * spec.pointwise_macs(1), 4);
        // the separable block adds its single depthwise tap
        let b = LightBlockConfig::new(spec, false, false);
        assert_eq!(REAL_MACS_PER_COMPLEX * b.complex_macs_per_frame(1), 8);
    }

    #[test]
    fn conv_macs_equal_naive_loop_count() {
        let (cin, cout, k, bins) = (3, 5, 5, 17);
        let b = LightBlockConfig::new(ConvSpec::frequency(cin, cout, k, 2), false, false);
        let mut mults = 0;
        // depthwise over a zero-padded input, then pointwise
        for _c in 0..cin {
            for _f in 0..bins {
                for _j in 0..k {
                    mults += 1;
                }
            }
        }
        for _o in 0..cout {
            for _i in 0..cin {
                for _f in 0..bins {
                    mults += 1;
                }
            }
        }
        assert_eq!(b.complex_macs_per_frame(bins), mults);
    }

    #[test]
    fn analytic_counts_match_enumeration() {
        for cfg in [
            LbccnConfig::default(),
            LbccnConfig::toy(),
            LbccnConfig::default().with_q(129),
        ] {
            let m = LbccnModel::build(cfg.clone(), 0).unwrap();
            assert_eq!(count_params(&cfg).unwrap(), enumerate_params(&m));
        }
    }

    #[test]
    fn macs_scale_linearly() {
        let cfg = LbccnConfig::default();
        let a = count_macs(&cfg, 1.0).unwrap().real_macs;
        let b = count_macs(&cfg, 3.0).unwrap().real_macs;
        assert!((b - 3.0 * a).abs() < 1e-6 * b);
        assert!(count_macs(&cfg, 0.0).is_err());
    }

    #[test]
    fn rtf_needs_three_repetitions() {
        let m = LbccnModel::build(LbccnConfig::toy(), 0).unwrap();
        assert!(measure_rtf(&m, 0.1, 2).is_err());
        let s = measure_rtf(&m, 0.1, 3).unwrap();
        assert!(s.median > 0.0 && s.min <= s.median && s.median <= s.max);
    }
}
