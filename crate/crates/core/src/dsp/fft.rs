//! Iterative radix-2 FFT for power-of-two sizes.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tensor::C64;

#[derive(Debug, Clone)]
pub struct Fft {
    n: usize,
    twiddles: Vec<C64>,
    bitrev: Vec<usize>,
}

impl Fft {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::config(format!("fft size {n} is not a power of two")));
        }
        let twiddles = (0..n / 2)
            .map(|k| {
                let a = -2.0 * PI * k as f64 / n as f64;
                C64::new(a.cos(), a.sin())
            })
            .collect();
        let bits = n.trailing_zeros();
        let bitrev = (0..n)
            .map(|i| {
                if bits == 0 {
                    0
                } else {
                    i.reverse_bits() >> (usize::BITS - bits)
                }
            })
            .collect();
        Ok(Fft { n, twiddles, bitrev })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// In-place forward transform, `X[k] = sum_n x[n] e^{-2 pi i k n / N}`.
    pub fn forward(&self, buf: &mut [C64]) {
        assert_eq!(buf.len(), self.n, "fft buffer length");
        for i in 0..self.n {
            let j = self.bitrev[i];
            if j > i {
                buf.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= self.n {
            let half = len / 2;
            let stride = self.n / len;
            for start in (0..self.n).step_by(len) {
                for k in 0..half {
                    let w = self.twiddles[k * stride];
                    let a = buf[start + k];
                    let b = buf[start + k + half] * w;
                    buf[start + k] = a + b;
                    buf[start + k + half] = a - b;
                }
            }
            len <<= 1;
        }
    }

    /// In-place inverse transform including the `1/N` scale.
    pub fn inverse(&self, buf: &mut [C64]) {
        for z in buf.iter_mut() {
            *z = z.conj();
        }
        self.forward(buf);
        let scale = 1.0 / self.n as f64;
        for z in buf.iter_mut() {
            *z = z.conj() * scale;
        }
    }
}
