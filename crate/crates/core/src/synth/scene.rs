//! Binaural scene construction: spatialisation, diffuse noise and mixing.

use crate::dsp::BinauralWaveform;
use crate::error::{Error, Result};

use super::hrir::{HrirCatalog, HrirEntry};

/// Single-channel signal.
#[derive(Debug, Clone, PartialEq)]
pub struct MonoWave {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl MonoWave {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        MonoWave { samples, sample_rate }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Linear convolution keeping the first `x.len()` samples.
pub fn convolve_truncated(x: &[f64], h: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for (n, out) in y.iter_mut().enumerate() {
        let k_max = h.len().min(n + 1);
        let mut acc = 0.0;
        for k in 0..k_max {
            acc += h[k] * x[n - k];
        }
        *out = acc;
    }
    y
}

fn source_f64(source: &MonoWave, rate: u32) -> Result<Vec<f64>> {
    if source.sample_rate != rate {
        return Err(Error::Input(format!(
            "source is {} Hz but the HRIRs are {rate} Hz",
            source.sample_rate
        )));
    }
    if source.is_empty() {
        return Err(Error::Input("source is empty".into()));
    }
    Ok(source.samples.iter().map(|&v| v as f64).collect())
}

/// Renders `source` at the direction of `hrir`, one convolution per ear,
/// truncated to the source length.
pub fn spatialize(source: &MonoWave, hrir: &HrirEntry) -> Result<BinauralWaveform> {
    let x = source_f64(source, hrir.sample_rate)?;
    BinauralWaveform::from_f64(
        &convolve_truncated(&x, &hrir.left),
        &convolve_truncated(&x, &hrir.right),
        source.sample_rate,
    )
}

/// Diffuse field from one source: the mean over all catalog directions of
/// the spatialised signal, computed as one convolution with the mean HRIR.
pub fn diffuse_noise(noise: &MonoWave, catalog: &HrirCatalog) -> Result<BinauralWaveform> {
    let x = source_f64(noise, catalog.sample_rate())?;
    let (l, r) = catalog.mean_ir();
    BinauralWaveform::from_f64(
        &convolve_truncated(&x, &l),
        &convolve_truncated(&x, &r),
        noise.sample_rate,
    )
}

/// Same field as [`diffuse_noise`], averaging the individual convolutions.
pub fn diffuse_noise_averaged(noise: &MonoWave, catalog: &HrirCatalog) -> Result<BinauralWaveform> {
    let x = source_f64(noise, catalog.sample_rate())?;
    let (mut l, mut r) = (vec![0.0; x.len()], vec![0.0; x.len()]);
    for e in catalog.entries() {
        for (acc, v) in l.iter_mut().zip(convolve_truncated(&x, &e.left)) {
            *acc += v;
        }
        for (acc, v) in r.iter_mut().zip(convolve_truncated(&x, &e.right)) {
            *acc += v;
        }
    }
    let d = catalog.len() as f64;
    l.iter_mut().chain(r.iter_mut()).for_each(|v| *v /= d);
    BinauralWaveform::from_f64(&l, &r, noise.sample_rate)
}

/// Mean power over both ears.
pub fn binaural_power(w: &BinauralWaveform) -> f64 {
    let n = (2 * w.len()).max(1) as f64;
    w.left
        .iter()
        .chain(&w.right)
        .map(|&v| (v as f64) * (v as f64))
        .sum::<f64>()
        / n
}

/// Result of [`mix_at_snr`]; `noisy = clean + noise` holds sample by sample
/// in `f32` arithmetic.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub noisy: BinauralWaveform,
    pub clean: BinauralWaveform,
    pub noise: BinauralWaveform,
    pub gain: f64,
}

/// Scales `noise` so that the two-ear power ratio of target to noise equals
/// `snr_db`, and adds it to `target`.
pub fn mix_at_snr(target: &BinauralWaveform, noise: &BinauralWaveform, snr_db: f64) -> Result<Mixture> {
    if target.len() != noise.len() {
        return Err(Error::Input(format!(
            "target has {} samples, noise {}",
            target.len(),
            noise.len()
        )));
    }
    if target.sample_rate != noise.sample_rate {
        return Err(Error::Input("target and noise sample rates differ".into()));
    }
    if !snr_db.is_finite() {
        return Err(Error::Input(format!("snr {snr_db} dB is not finite")));
    }
    let pt = binaural_power(target);
    let pn = binaural_power(noise);
    if pt <= 0.0 {
        return Err(Error::Input("target has zero energy".into()));
    }
    if pn <= 0.0 {
        return Err(Error::Input("noise has zero energy".into()));
    }
    let gain = (pt / (pn * 10f64.powf(snr_db / 10.0))).sqrt();
    let scale = |x: &[f32]| x.iter().map(|&v| (v as f64 * gain) as f32).collect::<Vec<_>>();
    let n = BinauralWaveform::new(scale(&noise.left), scale(&noise.right), noise.sample_rate)?;
    let add = |a: &[f32], b: &[f32]| a.iter().zip(b).map(|(x, y)| x + y).collect::<Vec<_>>();
    let noisy = BinauralWaveform::new(
        add(&target.left, &n.left),
        add(&target.right, &n.right),
        target.sample_rate,
    )?;
    Ok(Mixture {
        noisy,
        clean: target.clone(),
        noise: n,
        gain,
    })
}

/// Measured two-ear SNR in dB.
pub fn measured_snr_db(clean: &BinauralWaveform, noise: &BinauralWaveform) -> f64 {
    10.0 * (binaural_power(clean) / binaural_power(noise)).log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::hrir::{synth_spherical_hrir, DEFAULT_HEAD_RADIUS};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn mono(x: &[f64]) -> MonoWave {
        MonoWave::new(x.iter().map(|&v| v as f32).collect(), 16000)
    }

    fn entry(left: Vec<f64>, right: Vec<f64>) -> HrirEntry {
        HrirEntry {
            azimuth: 0.0,
            elevation: 0.0,
            left,
            right,
            sample_rate: 16000,
        }
    }

    fn random_catalog(d: usize, taps: usize, seed: u64) -> HrirCatalog {
        let entries = (0..d)
            .map(|i| {
                let mut e = entry(
                    rand_vec(taps, seed + 2 * i as u64),
                    rand_vec(taps, seed + 2 * i as u64 + 1),
                );
                e.azimuth = i as f64;
                e
            })
            .collect();
        HrirCatalog::new(entries, 16000, "random").unwrap()
    }

    #[test]
    fn unit_impulse_is_identity() {
        let s = mono(&rand_vec(300, 1));
        let mut h = vec![0.0; 16];
        h[0] = 1.0;
        let out = spatialize(&s, &entry(h.clone(), h)).unwrap();
        assert_eq!(out.left, s.samples);
        assert_eq!(out.right, s.samples);
    }

    #[test]
    fn shifted_impulse_delays() {
        let s = mono(&rand_vec(100, 2));
        let mut h = vec![0.0; 16];
        h[7] = 1.0;
        let out = spatialize(&s, &entry(h.clone(), h)).unwrap();
        assert!(out.left[..7].iter().all(|&v| v == 0.0));
        assert_eq!(out.left[7..], s.samples[..93]);
    }

    #[test]
    fn matches_naive_convolution() {
        let x = rand_vec(500, 3);
        let h = rand_vec(40, 4);
        let out = spatialize(&mono(&x), &entry(h.clone(), h.clone())).unwrap();
        let xf: Vec<f64> = mono(&x).samples.iter().map(|&v| v as f64).collect();
        for n in 0..x.len() {
            let mut acc = 0.0;
            for i in 0..=n {
                if n - i < h.len() {
                    acc += xf[i] * h[n - i];
                }
            }
            assert!((out.left[n] as f64 - acc).abs() < 1e-6);
        }
    }

    #[test]
    fn rate_mismatch_is_rejected() {
        let s = MonoWave::new(vec![1.0; 10], 48000);
        assert!(spatialize(&s, &entry(vec![1.0], vec![1.0])).is_err());
    }

    #[test]
    fn single_direction_diffuse_equals_spatialize() {
        let c = random_catalog(1, 24, 5);
        let s = mono(&rand_vec(400, 6));
        assert_eq!(diffuse_noise(&s, &c).unwrap(), spatialize(&s, &c.entries()[0]).unwrap());
    }

    #[test]
    fn symmetric_catalog_gives_identical_ears() {
        let dirs: Vec<(f64, f64)> = [-60.0, -20.0, 0.0, 20.0, 60.0].iter().map(|&a| (a, 0.0)).collect();
        let c = synth_spherical_hrir(&dirs, DEFAULT_HEAD_RADIUS, 64).unwrap();
        let s = mono(&rand_vec(400, 7));
        for w in [diffuse_noise(&s, &c).unwrap(), diffuse_noise_averaged(&s, &c).unwrap()] {
            for (l, r) in w.left.iter().zip(&w.right) {
                assert!((l - r).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn mixing_hits_requested_snr() {
        let t = BinauralWaveform::from_f64(&rand_vec(2000, 8), &rand_vec(2000, 9), 16000).unwrap();
        let n = BinauralWaveform::from_f64(&rand_vec(2000, 10), &rand_vec(2000, 11), 16000).unwrap();
        let m0 = mix_at_snr(&t, &n, 0.0).unwrap();
        let (pt, pn) = (binaural_power(&m0.clean), binaural_power(&m0.noise));
        assert!(((pt - pn) / pt).abs() < 1e-6);
        let m10 = mix_at_snr(&t, &n, 10.0).unwrap();
        assert!((measured_snr_db(&m10.clean, &m10.noise) - 10.0).abs() < 0.01);
        let m = mix_at_snr(&t, &n, 10.0 - 20.0 * 2f64.log10()).unwrap();
        assert!((m.gain / m10.gain - 2.0).abs() < 1e-12);
        for (i, y) in m10.noisy.left.iter().enumerate() {
            assert_eq!(*y, m10.clean.left[i] + m10.noise.left[i]);
        }
    }

    #[test]
    fn zero_energy_is_rejected() {
        let z = BinauralWaveform::zeros(10, 16000);
        let n = BinauralWaveform::from_f64(&rand_vec(10, 1), &rand_vec(10, 2), 16000).unwrap();
        assert!(mix_at_snr(&z, &n, 0.0).is_err());
        assert!(mix_at_snr(&n, &z, 0.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn fast_and_slow_diffuse_paths_agree(d in 1usize..=64, taps in 1usize..48, seed in 0u64..1000) {
            let c = random_catalog(d, taps, seed);
            let s = mono(&rand_vec(256, seed + 999));
            let fast = diffuse_noise(&s, &c).unwrap();
            let slow = diffuse_noise_averaged(&s, &c).unwrap();
            let scale = slow.left.iter().chain(&slow.right).fold(0f32, |m, v| m.max(v.abs())).max(1e-3);
            for (a, b) in fast.left.iter().chain(&fast.right).zip(slow.left.iter().chain(&slow.right)) {
                prop_assert!(((a - b).abs() / scale) < 1e-6);
            }
        }

        #[test]
        fn spatialize_is_linear(a in -3.0f64..3.0, seed in 0u64..1000) {
            let h = rand_vec(32, seed);
            let s1 = rand_vec(200, seed + 2);
            let s2 = rand_vec(200, seed + 3);
            let combo: Vec<f64> = s1.iter().zip(&s2).map(|(x, y)| a * x + y).collect();
            let lhs = convolve_truncated(&combo, &h);
            let (y1, y2) = (convolve_truncated(&s1, &h), convolve_truncated(&s2, &h));
            for i in 0..200 {
                prop_assert!((lhs[i] - (a * y1[i] + y2[i])).abs() < 1e-6);
            }
        }
    }
}
