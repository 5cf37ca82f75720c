//! File formats used by the command-line tools.

pub mod wav;

pub use wav::{read_binaural, read_wav, write_binaural, write_wav, WavEncoding, WavFile};
