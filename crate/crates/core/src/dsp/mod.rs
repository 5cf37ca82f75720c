//! Signal-processing foundations: FFT, STFT, band handling, waveforms.

pub mod bands;
pub mod fft;
pub mod resample;
pub mod stft;
pub mod waveform;

pub use bands::{band_merge, band_split, BandSplitConfig};
pub use stft::{istft, stft, ComplexSpectrogram, Stft, StftConfig, WindowKind};
pub use waveform::{BinauralWaveform, PIPELINE_SAMPLE_RATE};
