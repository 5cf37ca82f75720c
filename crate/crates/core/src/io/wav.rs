//! WAV reading and writing (16-bit integer PCM and 32-bit IEEE float).

use std::io::ErrorKind;
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::dsp::BinauralWaveform;
use crate::error::{Error, Result};

/// Sample encoding of a WAV file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Int16,
    Float32,
}

/// Decoded WAV contents; `samples` are interleaved and scaled to [-1, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct WavFile {
    pub sample_rate: u32,
    pub channels: u16,
    pub encoding: WavEncoding,
    pub samples: Vec<f32>,
}

impl WavFile {
    pub fn frames(&self) -> usize {
        self.samples.len() / self.channels.max(1) as usize
    }

    /// De-interleaves channel `ch`.
    pub fn channel(&self, ch: usize) -> Vec<f32> {
        let n = self.channels as usize;
        self.samples.iter().skip(ch).step_by(n).copied().collect()
    }

    pub fn from_binaural(wave: &BinauralWaveform) -> Self {
        let samples = wave.left.iter().zip(&wave.right).flat_map(|(&l, &r)| [l, r]).collect();
        WavFile {
            sample_rate: wave.sample_rate,
            channels: 2,
            encoding: WavEncoding::Float32,
            samples,
        }
    }

    pub fn mono(samples: Vec<f32>, sample_rate: u32) -> Self {
        WavFile {
            sample_rate,
            channels: 1,
            encoding: WavEncoding::Float32,
            samples,
        }
    }

    pub fn to_binaural(&self) -> Result<BinauralWaveform> {
        if self.channels != 2 {
            return Err(Error::Input(format!(
                "expected a stereo file, found {} channel(s)",
                self.channels
            )));
        }
        BinauralWaveform::new(self.channel(0), self.channel(1), self.sample_rate)
    }

    /// Single-channel view: the only channel, or the mean of all channels.
    pub fn to_mono(&self) -> Vec<f32> {
        if self.channels == 1 {
            return self.samples.clone();
        }
        let n = self.channels as usize;
        self.samples
            .chunks_exact(n)
            .map(|f| f.iter().sum::<f32>() / n as f32)
            .collect()
    }
}

fn map_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) if io.kind() == ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        hound::Error::IoError(io) if io.kind() == ErrorKind::UnexpectedEof => Error::WavTruncated,
        hound::Error::IoError(io) => Error::Io(io),
        hound::Error::FormatError(msg) => Error::WavHeader(msg.to_string()),
        hound::Error::UnfinishedSample => Error::WavTruncated,
        hound::Error::Unsupported => Error::WavCodec("format tag not PCM or IEEE float".into()),
        hound::Error::InvalidSampleFormat | hound::Error::TooWide => {
            Error::WavCodec("sample format inconsistent with header".into())
        }
    }
}

fn codec_name(tag: u16) -> String {
    match tag {
        0x0002 => "MS ADPCM".into(),
        0x0006 => "A-law".into(),
        0x0007 => "mu-law".into(),
        0x0011 => "IMA ADPCM".into(),
        0x0031 => "GSM 6.10".into(),
        0x0055 => "MPEG layer 3".into(),
        t => format!("format tag {t:#06x}"),
    }
}

/// Walks the RIFF chunks to classify the codec and detect a data chunk that
/// extends past the end of the file before decoding.
fn scan_chunks(bytes: &[u8]) -> Result<()> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::WavHeader("missing RIFF/WAVE signature".into()));
    }
    let mut pos = 12;
    let mut tag = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let len = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().expect("4 bytes")) as usize;
        let body = pos + 8;
        if id == b"fmt " {
            if len < 16 || body + 2 > bytes.len() {
                return Err(Error::WavHeader("fmt chunk too short".into()));
            }
            let t = u16::from_le_bytes([bytes[body], bytes[body + 1]]);
            if !matches!(t, 0x0001 | 0x0003 | 0xFFFE) {
                return Err(Error::WavCodec(codec_name(t)));
            }
            tag = Some(t);
        } else if id == b"data" {
            if tag.is_none() {
                return Err(Error::WavHeader("data chunk before fmt chunk".into()));
            }
            if body + len > bytes.len() {
                return Err(Error::WavTruncated);
            }
            return Ok(());
        }
        pos = body + len + (len & 1);
    }
    Err(Error::WavHeader("no data chunk".into()))
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<WavFile> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    scan_chunks(&bytes)?;
    let reader = WavReader::new(std::io::Cursor::new(bytes)).map_err(|e| map_err(path, e))?;
    let spec = reader.spec();
    if spec.channels == 0 {
        return Err(Error::WavHeader("zero channels".into()));
    }
    let declared = reader.len() as usize;
    let (encoding, samples) = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => (
            WavEncoding::Float32,
            reader.into_samples::<f32>().collect::<std::result::Result<Vec<_>, _>>(),
        ),
        (SampleFormat::Int, 16) => (
            WavEncoding::Int16,
            reader
                .into_samples::<i16>()
                .map(|s| s.map(|v| v as f32 / 32768.0))
                .collect::<std::result::Result<Vec<_>, _>>(),
        ),
        (fmt, bits) => {
            return Err(Error::WavCodec(format!("{bits}-bit {fmt:?} samples")));
        }
    };
    let samples = samples.map_err(|e| map_err(path, e))?;
    if samples.len() != declared || samples.len() % spec.channels as usize != 0 {
        return Err(Error::WavTruncated);
    }
    Ok(WavFile {
        sample_rate: spec.sample_rate,
        channels: spec.channels,
        encoding,
        samples,
    })
}

pub fn write_wav(path: impl AsRef<Path>, wav: &WavFile) -> Result<()> {
    let path = path.as_ref();
    if wav.channels == 0 || !wav.samples.len().is_multiple_of(wav.channels as usize) {
        return Err(Error::Input(
            "sample count is not a multiple of the channel count".into(),
        ));
    }
    let (bits, format) = match wav.encoding {
        WavEncoding::Int16 => (16, SampleFormat::Int),
        WavEncoding::Float32 => (32, SampleFormat::Float),
    };
    let spec = WavSpec {
        channels: wav.channels,
        sample_rate: wav.sample_rate,
        bits_per_sample: bits,
        sample_format: format,
    };
    let mut w = WavWriter::create(path, spec).map_err(|e| map_err(path, e))?;
    for &s in &wav.samples {
        let r = match wav.encoding {
            WavEncoding::Float32 => w.write_sample(s),
            WavEncoding::Int16 => w.write_sample((s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16),
        };
        r.map_err(|e| map_err(path, e))?;
    }
    w.finalize().map_err(|e| map_err(path, e))
}

pub fn read_binaural(path: impl AsRef<Path>) -> Result<BinauralWaveform> {
    read_wav(path)?.to_binaural()
}

pub fn write_binaural(path: impl AsRef<Path>, wave: &BinauralWaveform) -> Result<()> {
    write_wav(path, &WavFile::from_binaural(wave))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw_header(format_tag: u16, bits: u16, block_align: u16, data_len: u32) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(b"RIFF");
        b.extend_from_slice(&(36 + data_len).to_le_bytes());
        b.extend_from_slice(b"WAVEfmt ");
        b.extend_from_slice(&16u32.to_le_bytes());
        b.extend_from_slice(&format_tag.to_le_bytes());
        b.extend_from_slice(&1u16.to_le_bytes());
        b.extend_from_slice(&16000u32.to_le_bytes());
        b.extend_from_slice(&(16000 * block_align as u32).to_le_bytes());
        b.extend_from_slice(&block_align.to_le_bytes());
        b.extend_from_slice(&bits.to_le_bytes());
        b.extend_from_slice(b"data");
        b.extend_from_slice(&data_len.to_le_bytes());
        b
    }

    #[test]
    fn float_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let samples: Vec<f32> = (0..200)
            .map(|i| ((i as f32) * 0.37).sin() * 0.9 + 1e-9 * i as f32)
            .collect();
        let w = WavFile {
            sample_rate: 16000,
            channels: 2,
            encoding: WavEncoding::Float32,
            samples,
        };
        write_wav(&p, &w).unwrap();
        let r = read_wav(&p).unwrap();
        assert_eq!(r, w);
        assert_eq!(
            r.samples.iter().map(|s| s.to_bits()).collect::<Vec<_>>(),
            w.samples.iter().map(|s| s.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn int16_full_scale_maps_below_one() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("i.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&p, spec).unwrap();
        for v in [i16::MAX, i16::MIN, 0, 1] {
            w.write_sample(v).unwrap();
        }
        w.finalize().unwrap();
        let r = read_wav(&p).unwrap();
        assert_eq!(r.encoding, WavEncoding::Int16);
        assert_eq!(r.samples, vec![1.0 - 1.0 / 32768.0, -1.0, 0.0, 1.0 / 32768.0]);
    }

    #[test]
    fn gsm_is_an_unsupported_codec() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.wav");
        let mut b = raw_header(0x0031, 0, 65, 65);
        b.extend(std::iter::repeat_n(0u8, 65));
        std::fs::write(&p, b).unwrap();
        assert!(matches!(read_wav(&p), Err(Error::WavCodec(_))), "{:?}", read_wav(&p));
    }

    #[test]
    fn short_data_chunk_is_truncated() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.wav");
        let mut b = raw_header(1, 16, 2, 100);
        b.extend(std::iter::repeat_n(0u8, 40));
        std::fs::write(&p, b).unwrap();
        assert!(matches!(read_wav(&p), Err(Error::WavTruncated)), "{:?}", read_wav(&p));
    }

    #[test]
    fn garbage_is_a_header_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.wav");
        std::fs::write(&p, b"RIFX0000WAVEjunkjunkjunk").unwrap();
        assert!(matches!(read_wav(&p), Err(Error::WavHeader(_))), "{:?}", read_wav(&p));
    }

    #[test]
    fn missing_file_is_named() {
        let e = read_wav("/nonexistent/x.wav").unwrap_err();
        assert!(matches!(e, Error::MissingFile(_)));
        assert!(e.to_string().contains("/nonexistent/x.wav"));
    }

    #[test]
    fn binaural_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.wav");
        let w = BinauralWaveform::new(vec![0.1, 0.2, 0.3], vec![-0.1, -0.2, -0.3], 16000).unwrap();
        write_binaural(&p, &w).unwrap();
        assert_eq!(read_binaural(&p).unwrap(), w);
    }
}
