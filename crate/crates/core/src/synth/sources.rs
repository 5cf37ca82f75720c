//! Synthetic speech-like and noise sources.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Error;

const SOURCE_RMS: f64 = 0.05;

/// Vowel formant targets (F1, F2, F3) in Hz.
const VOWELS: [[f64; 3]; 6] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [300.0, 870.0, 2240.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
    [660.0, 1720.0, 2410.0],
];
const BANDWIDTHS: [f64; 3] = [80.0, 100.0, 150.0];

fn normalise(x: &mut [f64]) {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v *= SOURCE_RMS / rms);
    }
}

fn to_f32(x: Vec<f64>) -> Vec<f32> {
    x.into_iter().map(|v| v as f32).collect()
}

/// Two-pole resonator with time-varying centre frequency and unit DC gain.
struct Resonator {
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn step(&mut self, x: f64, freq: f64, bw: f64, rate: f64) -> f64 {
        let r = (-PI * bw / rate).exp();
        let c = 2.0 * r * (2.0 * PI * freq / rate).cos();
        let y = (1.0 - c + r * r) * x + c * self.y1 - r * r * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Speech-like signal: a harmonic glottal source with a drifting pitch,
/// shaped by three formant resonators that glide between vowel targets,
/// gated by syllable envelopes with occasional fricative onsets and pauses.
pub fn synth_speech<R: Rng>(len: usize, rate: u32, rng: &mut R) -> Vec<f32> {
    let fs = rate as f64;
    let f0_base = rng.gen_range(95.0..230.0);
    let vib_rate = rng.gen_range(0.4..1.2);
    let vib_phase = rng.gen_range(0.0..2.0 * PI);
    let mut out = vec![0.0; len];
    let mut res = [
        Resonator { y1: 0.0, y2: 0.0 },
        Resonator { y1: 0.0, y2: 0.0 },
        Resonator { y1: 0.0, y2: 0.0 },
    ];
    let mut phase = 0.0;
    let mut prev = VOWELS[rng.gen_range(0..VOWELS.len())];
    let mut n = 0;
    while n < len {
        if rng.gen_bool(0.15) {
            n += (rng.gen_range(0.05..0.25) * fs) as usize;
            continue;
        }
        let dur = (rng.gen_range(0.12..0.30) * fs) as usize;
        let target = VOWELS[rng.gen_range(0..VOWELS.len())];
        let fric = if rng.gen_bool(0.4) {
            (rng.gen_range(0.03..0.08) * fs) as usize
        } else {
            0
        };
        let (mut d1, mut d2) = (0.0, 0.0);
        for i in 0..dur + fric {
            let idx = n + i;
            if idx >= len {
                break;
            }
            let t = idx as f64 / fs;
            if i < fric {
                // second difference of white noise: a crude high-passed hiss
                let w: f64 = rng.sample(StandardNormal);
                let hiss = w - 2.0 * d1 + d2;
                d2 = d1;
                d1 = w;
                let env = (PI * i as f64 / fric as f64).sin();
                out[idx] += 0.3 * env * hiss;
                continue;
            }
            let j = i - fric;
            let u = j as f64 / dur as f64;
            let glide = (u / 0.3).min(1.0);
            let f0 = f0_base * (1.0 + 0.08 * (2.0 * PI * vib_rate * t + vib_phase).sin()) * (1.0 - 0.1 * u);
            phase += 2.0 * PI * f0 / fs;
            if phase > 2.0 * PI {
                phase -= 2.0 * PI;
            }
            let harmonics = ((0.45 * fs) / f0) as usize;
            let mut src = 0.0;
            for k in 1..=harmonics.min(40) {
                src += (k as f64 * phase).sin() / k as f64;
            }
            let mut y = src;
            for (f, r) in res.iter_mut().enumerate() {
                let freq = prev[f] + (target[f] - prev[f]) * glide;
                y = r.step(y, freq, BANDWIDTHS[f], fs);
            }
            let env = (PI * u).sin().powi(2);
            out[idx] += env * y;
        }
        prev = target;
        n += dur + fric;
    }
    normalise(&mut out);
    to_f32(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    White,
    Pink,
    Babble,
    Modulated,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 4] = [
        NoiseKind::White,
        NoiseKind::Pink,
        NoiseKind::Babble,
        NoiseKind::Modulated,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NoiseKind::White => "white",
            NoiseKind::Pink => "pink",
            NoiseKind::Babble => "babble",
            NoiseKind::Modulated => "modulated",
        }
    }
}

impl std::fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        NoiseKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown noise kind {s:?} (white, pink, babble, modulated)")))
    }
}

pub fn synth_noise<R: Rng>(kind: NoiseKind, len: usize, rate: u32, rng: &mut R) -> Vec<f32> {
    let fs = rate as f64;
    let mut white = || -> Vec<f64> { (0..len).map(|_| rng.sample(StandardNormal)).collect() };
    let mut x = match kind {
        NoiseKind::White => white(),
        NoiseKind::Pink => {
            // Kellet's economy pink filter
            let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
            white()
                .into_iter()
                .map(|w| {
                    b0 = 0.99765 * b0 + w * 0.0990460;
                    b1 = 0.96300 * b1 + w * 0.2965164;
                    b2 = 0.57000 * b2 + w * 1.0526913;
                    b0 + b1 + b2 + w * 0.1848
                })
                .collect()
        }
        NoiseKind::Babble => {
            let mut acc = vec![0.0; len];
            for _ in 0..6 {
                for (a, v) in acc.iter_mut().zip(synth_speech(len, rate, rng)) {
                    *a += v as f64;
                }
            }
            acc
        }
        NoiseKind::Modulated => {
            let fm = rng.gen_range(2.0..8.0);
            let ph = rng.gen_range(0.0..2.0 * PI);
            let mut y = 0.0;
            let w: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
            w.into_iter()
                .enumerate()
                .map(|(n, v)| {
                    y = 0.1 * v + 0.9 * y;
                    y * (1.0 + 0.8 * (2.0 * PI * fm * n as f64 / fs + ph).sin())
                })
                .collect()
        }
    };
    normalise(&mut x);
    to_f32(x)
}
