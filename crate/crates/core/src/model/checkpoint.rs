//! Binary checkpoint format.
//!
//! Little-endian layout:
//!
//! ```text
//! magic "LBCCNCKP" | u32 version | u32 len + JSON config
//! u32 tensor count, then per tensor:
//!     u32 len + name | u32 rank | u32 dims[rank] | f32 real[n] | f32 imag[n]
//! u8 optimiser flag; if 1: u64 step | f64 lr, beta1, beta2, eps |
//!     per tensor: f32 m.re, m.im, v.re, v.im planes
//! u32 len + JSON training metadata
//! u64 FNV-1a checksum of everything before it
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{LbccnConfig, PredictorVariant};
use super::network::LbccnModel;
use crate::error::{Error, Result};
use crate::nn::{AdamHyper, AdamState};
use crate::tensor::{Tensor, C64};

pub const MAGIC: &[u8; 8] = b"LBCCNCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub epoch: usize,
    pub steps: u64,
    pub loss_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: LbccnModel,
    pub optimizer: Option<AdamState>,
    pub metadata: TrainingMetadata,
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn blob(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.0.extend_from_slice(b);
    }
    fn planes(&mut self, t: &Tensor, part: impl Fn(&C64) -> f64) {
        for z in t.data() {
            self.0.extend_from_slice(&(part(z) as f32).to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn blob(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }
    fn f32_plane(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(4).ok_or(Error::Truncated)?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect())
    }
    fn complex(&mut self, shape: &[usize]) -> Result<Tensor> {
        let n = shape.iter().product();
        let re = self.f32_plane(n)?;
        let im = self.f32_plane(n)?;
        Tensor::from_vec(shape, re.into_iter().zip(im).map(|(r, i)| C64::new(r, i)).collect())
    }
}

/// Serialises a checkpoint to bytes.
pub fn to_bytes(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(FORMAT_VERSION);
    let config = serde_json::to_vec(ckpt.model.config()).map_err(|e| Error::Internal(e.to_string()))?;
    w.blob(&config);
    let params = ckpt.model.params();
    w.u32(params.len() as u32);
    for (name, t) in params.names().iter().zip(params.tensors()) {
        w.blob(name.as_bytes());
        w.u32(t.shape().len() as u32);
        for &d in t.shape() {
            w.u32(d as u32);
        }
        w.planes(t, |z| z.re);
        w.planes(t, |z| z.im);
    }
    match &ckpt.optimizer {
        None => w.0.push(0),
        Some(st) => {
            w.0.push(1);
            w.u64(st.step);
            let h = st.hyper;
            for v in [h.lr, h.beta1, h.beta2, h.eps] {
                w.f64(v);
            }
            for (m, v) in st.m.iter().zip(&st.v) {
                w.planes(m, |z| z.re);
                w.planes(m, |z| z.im);
                w.planes(v, |z| z.re);
                w.planes(v, |z| z.im);
            }
        }
    }
    let meta = serde_json::to_vec(&ckpt.metadata).map_err(|e| Error::Internal(e.to_string()))?;
    w.blob(&meta);
    let sum = fnv1a(&w.0);
    w.u64(sum);
    Ok(w.0)
}

/// Parses a checkpoint; truncation, bad magic, version and content errors
/// are reported as distinct variants.
pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len()).map_err(|_| Error::BadMagic)? != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let config: LbccnConfig = serde_json::from_slice(r.blob()?).map_err(|e| Error::Corrupt(format!("config: {e}")))?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name = String::from_utf8(r.blob()?.to_vec()).map_err(|_| Error::Corrupt("tensor name".into()))?;
        let rank = r.u32()? as usize;
        if rank == 0 || rank > 4 {
            return Err(Error::Corrupt(format!("tensor {name} has rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        tensors.push((name, r.complex(&shape)?));
    }
    let optimizer = match r.u8()? {
        0 => None,
        1 => {
            let step = r.u64()?;
            let hyper = AdamHyper {
                lr: r.f64()?,
                beta1: r.f64()?,
                beta2: r.f64()?,
                eps: r.f64()?,
            };
            let (mut m, mut v) = (Vec::new(), Vec::new());
            for (_, t) in &tensors {
                m.push(r.complex(t.shape())?);
                v.push(r.complex(t.shape())?);
            }
            Some(AdamState { step, m, v, hyper })
        }
        f => return Err(Error::Corrupt(format!("optimiser flag {f}"))),
    };
    let meta: TrainingMetadata =
        serde_json::from_slice(r.blob()?).map_err(|e| Error::Corrupt(format!("metadata: {e}")))?;
    let body_end = r.pos;
    let stored = r.u64()?;
    if r.pos != bytes.len() {
        return Err(Error::Corrupt("trailing bytes after checksum".into()));
    }
    if fnv1a(&bytes[..body_end]) != stored {
        return Err(Error::Corrupt("checksum mismatch".into()));
    }
    let mut model = LbccnModel::build(config, meta.seed).map_err(|e| Error::Corrupt(format!("config: {e}")))?;
    let store = model.params_mut();
    if tensors.len() != store.len() {
        return Err(Error::Corrupt(format!(
            "{} tensors stored, architecture has {}",
            tensors.len(),
            store.len()
        )));
    }
    for (i, (name, t)) in tensors.into_iter().enumerate() {
        if store.name(i) != name || store.get(i).shape() != t.shape() {
            return Err(Error::Corrupt(format!("unexpected tensor {name} {:?}", t.shape())));
        }
        *store.get_mut(i) = t;
    }
    Ok(Checkpoint {
        model,
        optimizer,
        metadata: meta,
    })
}

pub fn save_checkpoint_full(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(ckpt)?)?;
    Ok(())
}

/// Saves weights and configuration only.
pub fn save_checkpoint(model: &LbccnModel, path: &Path) -> Result<()> {
    save_checkpoint_full(
        &Checkpoint {
            model: model.clone(),
            optimizer: None,
            metadata: TrainingMetadata {
                seed: model.seed(),
                ..Default::default()
            },
        },
        path,
    )
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_path_buf())
        } else {
            Error::Io(e)
        }
    })
}

pub fn load_checkpoint_full(path: &Path) -> Result<Checkpoint> {
    from_bytes(&read(path)?)
}

pub fn load_checkpoint(path: &Path) -> Result<LbccnModel> {
    Ok(load_checkpoint_full(path)?.model)
}

/// Loads a checkpoint and checks that it holds the expected predictor variant.
pub fn load_checkpoint_expecting(path: &Path, expected: PredictorVariant) -> Result<LbccnModel> {
    let model = load_checkpoint(path)?;
    if model.variant() != expected {
        return Err(Error::VariantMismatch {
            found: model.variant().to_string(),
            expected: expected.to_string(),
        });
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ckpt() -> Checkpoint {
        let model = LbccnModel::build(LbccnConfig::toy(), 3).unwrap();
        Checkpoint {
            model,
            optimizer: None,
            metadata: TrainingMetadata {
                seed: 3,
                epoch: 2,
                steps: 10,
                loss_history: vec![1.5, 0.5],
            },
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let c = ckpt();
        let back = from_bytes(&to_bytes(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn optimiser_state_round_trips() {
        let mut c = ckpt();
        let mut st = AdamState::new(c.model.params(), AdamHyper::default());
        st.step = 7;
        st.m[0].data_mut()[0] = C64::new(0.25, -0.5);
        c.optimizer = Some(st);
        let back = from_bytes(&to_bytes(&c).unwrap()).unwrap();
        assert_eq!(back.optimizer, c.optimizer);
    }

    #[test]
    fn distinct_errors() {
        let bytes = to_bytes(&ckpt()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(Error::BadMagic)));
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(matches!(from_bytes(&bad), Err(Error::VersionMismatch { found: 9, .. })));
        for cut in [20, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(from_bytes(&bytes[..cut]), Err(Error::Truncated)), "cut {cut}");
        }
        let mut bad = bytes.clone();
        let mid = bytes.len() - 40;
        bad[mid] ^= 0x55;
        assert!(matches!(from_bytes(&bad), Err(Error::Corrupt(_))));
    }
}
