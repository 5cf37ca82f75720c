//! Band-limited sample-rate conversion with a Blackman-windowed sinc kernel.

use std::f64::consts::PI;

const HALF_WIDTH: f64 = 32.0;

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

pub fn resample(x: &[f64], from: u32, to: u32) -> Vec<f64> {
    if from == to || x.is_empty() {
        return x.to_vec();
    }
    let g = gcd(from, to);
    let (up, down) = ((to / g) as usize, (from / g) as usize);
    let out_len = (x.len() * up).div_ceil(down);
    // cutoff relative to the input Nyquist, slightly below the tighter rate
    let cutoff = 0.95 * (to as f64 / from as f64).min(1.0);
    let reach = HALF_WIDTH / cutoff;
    (0..out_len)
        .map(|m| {
            let t = (m * down) as f64 / up as f64;
            let lo = (t - reach).ceil().max(0.0) as usize;
            let hi = ((t + reach).floor() as usize).min(x.len() - 1);
            (lo..=hi)
                .map(|k| {
                    let d = t - k as f64;
                    x[k] * cutoff * sinc(cutoff * d) * blackman(d / reach)
                })
                .sum()
        })
        .collect()
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Blackman window over `u` in [-1, 1].
fn blackman(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        return 0.0;
    }
    let p = PI * (u + 1.0);
    0.42 - 0.5 * p.cos() + 0.08 * (2.0 * p).cos()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tone_survives_downsampling() {
        let x: Vec<f64> = (0..16_000)
            .map(|n| (2.0 * PI * 1000.0 * n as f64 / 16_000.0).sin())
            .collect();
        let y = resample(&x, 16_000, 10_000);
        assert_eq!(y.len(), 10_000);
        for (n, v) in y.iter().enumerate().skip(200).take(9_600) {
            let expect = (2.0 * PI * 1000.0 * n as f64 / 10_000.0).sin();
            assert!((v - expect).abs() < 1e-3, "n={n}");
        }
    }

    #[test]
    fn identity_rate() {
        let x = vec![1.0, 2.0, 3.0];
        assert_eq!(resample(&x, 16_000, 16_000), x);
    }
}
