use crate::error::{Error, Result};

pub const PIPELINE_SAMPLE_RATE: u32 = 16_000;

/// Time-aligned left/right ear signals.
#[derive(Debug, Clone, PartialEq)]
pub struct BinauralWaveform {
    pub left: Vec<f32>,
    pub right: Vec<f32>,
    pub sample_rate: u32,
}

impl BinauralWaveform {
    pub fn new(left: Vec<f32>, right: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if left.len() != right.len() {
            return Err(Error::Input(format!(
                "left has {} samples, right has {}",
                left.len(),
                right.len()
            )));
        }
        Ok(BinauralWaveform {
            left,
            right,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        BinauralWaveform {
            left: vec![0.0; len],
            right: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.left.is_empty()
    }

    pub fn ears(&self) -> [&[f32]; 2] {
        [&self.left, &self.right]
    }

    pub fn ear_f64(&self, ear: usize) -> Vec<f64> {
        self.ears()[ear].iter().map(|&v| v as f64).collect()
    }

    pub fn require_rate(&self, rate: u32) -> Result<()> {
        if self.sample_rate != rate {
            return Err(Error::Input(format!(
                "expected {rate} Hz audio, got {} Hz",
                self.sample_rate
            )));
        }
        Ok(())
    }

    pub fn from_f64(left: &[f64], right: &[f64], sample_rate: u32) -> Result<Self> {
        Self::new(
            left.iter().map(|&v| v as f32).collect(),
            right.iter().map(|&v| v as f32).collect(),
            sample_rate,
        )
    }
}
