//! Head-related impulse response catalogs: manifest ingestion and a
//! spherical-head model used when measured responses are unavailable.
//!
//! Directions use interaural-polar coordinates as in CIPIC: azimuth is the
//! lateral angle (positive to the right), elevation the polar angle.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dsp::resample::resample;
use crate::dsp::PIPELINE_SAMPLE_RATE;
use crate::error::{Error, Result};
use crate::io::{read_wav, write_wav, WavEncoding, WavFile};

pub const SPEED_OF_SOUND: f64 = 343.0;
pub const DEFAULT_HEAD_RADIUS: f64 = 0.0875;
pub const DEFAULT_IR_LENGTH: usize = 64;

/// Samples of bulk delay before the earliest arrival.
const BASE_DELAY: f64 = 16.0;
const SINC_HALF_WIDTH: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct HrirEntry {
    pub azimuth: f64,
    pub elevation: f64,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
    pub sample_rate: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HrirCatalog {
    entries: Vec<HrirEntry>,
    sample_rate: u32,
    source_tag: String,
}

impl HrirCatalog {
    pub fn new(entries: Vec<HrirEntry>, sample_rate: u32, source_tag: impl Into<String>) -> Result<Self> {
        let Some(first) = entries.first() else {
            return Err(Error::Input("HRIR catalog is empty".into()));
        };
        let n = first.left.len();
        if n == 0 {
            return Err(Error::Input("HRIRs are empty".into()));
        }
        for e in &entries {
            if e.left.len() != n || e.right.len() != n {
                return Err(Error::Input(format!(
                    "HRIR at azimuth {} elevation {} has length {}/{}, expected {n}",
                    e.azimuth,
                    e.elevation,
                    e.left.len(),
                    e.right.len()
                )));
            }
            if e.sample_rate != sample_rate {
                return Err(Error::Input(format!(
                    "HRIR sample rate {} differs from {sample_rate}",
                    e.sample_rate
                )));
            }
            if !(e.azimuth.is_finite() && e.elevation.is_finite())
                || e.left.iter().chain(&e.right).any(|v| !v.is_finite())
            {
                return Err(Error::Numeric(format!("non-finite HRIR at azimuth {}", e.azimuth)));
            }
        }
        Ok(HrirCatalog {
            entries,
            sample_rate,
            source_tag: source_tag.into(),
        })
    }

    pub fn entries(&self) -> &[HrirEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn source_tag(&self) -> &str {
        &self.source_tag
    }

    pub fn ir_length(&self) -> usize {
        self.entries[0].left.len()
    }

    /// Number of distinct azimuths and elevations.
    pub fn grid_shape(&self) -> (usize, usize) {
        let distinct = |f: fn(&HrirEntry) -> f64| {
            let mut v: Vec<f64> = self.entries.iter().map(f).collect();
            v.sort_by(f64::total_cmp);
            v.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
            v.len()
        };
        (distinct(|e| e.azimuth), distinct(|e| e.elevation))
    }

    /// Entry closest to the requested direction (angular distance on the grid).
    pub fn nearest(&self, azimuth: f64, elevation: f64) -> &HrirEntry {
        self.entries
            .iter()
            .min_by(|a, b| {
                let da = (a.azimuth - azimuth).powi(2) + (a.elevation - elevation).powi(2);
                let db = (b.azimuth - azimuth).powi(2) + (b.elevation - elevation).powi(2);
                da.total_cmp(&db)
            })
            .expect("catalog is non-empty")
    }

    /// Per-ear average of all impulse responses.
    pub fn mean_ir(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.ir_length();
        let d = self.entries.len() as f64;
        let (mut l, mut r) = (vec![0.0; n], vec![0.0; n]);
        for e in &self.entries {
            for i in 0..n {
                l[i] += e.left[i];
                r[i] += e.right[i];
            }
        }
        l.iter_mut().chain(r.iter_mut()).for_each(|v| *v /= d);
        (l, r)
    }
}

/// CIPIC measurement grid: 25 azimuths by 50 elevations.
pub fn cipic_directions() -> Vec<(f64, f64)> {
    let mut az: Vec<f64> = vec![-80.0, -65.0, -55.0];
    az.extend((0..19).map(|i| -45.0 + 5.0 * i as f64));
    az.extend([55.0, 65.0, 80.0]);
    let el: Vec<f64> = (0..50).map(|k| -45.0 + 5.625 * k as f64).collect();
    az.iter().flat_map(|&a| el.iter().map(move |&e| (a, e))).collect()
}

/// Interaural time difference of the spherical-head model, in seconds.
pub fn woodworth_itd(azimuth_deg: f64, head_radius: f64) -> f64 {
    let a = azimuth_deg.to_radians().abs().min(PI / 2.0);
    head_radius / SPEED_OF_SOUND * (a + a.sin())
}

/// Delayed, Hann-windowed sinc normalised to unit DC gain.
fn fractional_delay(delay: f64, len: usize) -> Vec<f64> {
    let hw = SINC_HALF_WIDTH as f64;
    let mut h: Vec<f64> = (0..len)
        .map(|n| {
            let x = n as f64 - delay;
            if x.abs() > hw {
                0.0
            } else {
                let s = if x == 0.0 { 1.0 } else { (PI * x).sin() / (PI * x) };
                s * 0.5 * (1.0 + (PI * x / (hw + 1.0)).cos())
            }
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= sum);
    h
}

fn one_pole(x: &mut [f64], a: f64) {
    let mut y = 0.0;
    for v in x {
        y = (1.0 - a) * *v + a * y;
        *v = y;
    }
}

/// Near- and far-ear responses for a lateral angle in `[0, 90]` degrees.
fn ear_pair(lateral_deg: f64, head_radius: f64, ir_length: usize) -> (Vec<f64>, Vec<f64>) {
    let a = lateral_deg.to_radians();
    let scale = head_radius / SPEED_OF_SOUND * PIPELINE_SAMPLE_RATE as f64;
    let near = fractional_delay(BASE_DELAY - scale * a.sin(), ir_length);
    let mut far = fractional_delay(BASE_DELAY + scale * a, ir_length);
    one_pole(&mut far, 0.5 * a.sin());
    (near, far)
}

/// Spherical-head catalog at 16 kHz: each ear gets a fractional delay from
/// the Woodworth model and the far ear an additional one-pole low-pass.
pub fn synth_spherical_hrir(directions: &[(f64, f64)], head_radius: f64, ir_length: usize) -> Result<HrirCatalog> {
    if !(head_radius > 0.0) || !head_radius.is_finite() {
        return Err(Error::config(format!(
            "head radius must be positive, got {head_radius}"
        )));
    }
    let scale = head_radius / SPEED_OF_SOUND * PIPELINE_SAMPLE_RATE as f64;
    let latest = BASE_DELAY + scale * PI / 2.0 + SINC_HALF_WIDTH as f64;
    if (ir_length as f64) <= latest || scale >= BASE_DELAY - SINC_HALF_WIDTH as f64 {
        return Err(Error::config(format!(
            "ir length {ir_length} cannot hold the delays of a {head_radius} m head"
        )));
    }
    let entries = directions
        .iter()
        .map(|&(az, el)| {
            let lateral = if az.is_finite() { az.clamp(-90.0, 90.0) } else { 0.0 };
            let (near, far) = ear_pair(lateral.abs(), head_radius, ir_length);
            let (left, right) = if lateral >= 0.0 { (far, near) } else { (near, far) };
            HrirEntry {
                azimuth: az,
                elevation: el,
                left,
                right,
                sample_rate: PIPELINE_SAMPLE_RATE,
            }
        })
        .collect();
    HrirCatalog::new(
        entries,
        PIPELINE_SAMPLE_RATE,
        format!("spherical-head r={head_radius} m, {ir_length} taps"),
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    azimuth: f64,
    elevation: f64,
    file: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HrirManifest {
    #[serde(default)]
    source_tag: Option<String>,
    entries: Vec<ManifestEntry>,
}

/// Loads a catalog from a JSON manifest listing `{azimuth, elevation, file}`
/// records, where each file is a stereo WAV (left, right). Relative paths
/// resolve against the manifest's directory; responses are resampled to 16 kHz.
pub fn load_hrir_catalog(path: impl AsRef<Path>) -> Result<HrirCatalog> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let manifest: HrirManifest = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let root = path.parent().unwrap_or(Path::new("."));
    let mut entries = Vec::with_capacity(manifest.entries.len());
    for m in &manifest.entries {
        let file = root.join(&m.file);
        if !file.exists() {
            return Err(Error::MissingFile(file));
        }
        let wav = read_wav(&file)?;
        if wav.channels != 2 {
            return Err(Error::Input(format!("{}: HRIR files must be stereo", file.display())));
        }
        let ear = |c| {
            let x: Vec<f64> = wav.channel(c).iter().map(|&v| v as f64).collect();
            resample(&x, wav.sample_rate, PIPELINE_SAMPLE_RATE)
        };
        entries.push(HrirEntry {
            azimuth: m.azimuth,
            elevation: m.elevation,
            left: ear(0),
            right: ear(1),
            sample_rate: PIPELINE_SAMPLE_RATE,
        });
    }
    let tag = manifest.source_tag.unwrap_or_else(|| path.display().to_string());
    HrirCatalog::new(entries, PIPELINE_SAMPLE_RATE, tag)
}

/// Writes a catalog as a manifest plus one stereo float WAV per direction.
pub fn save_hrir_catalog(catalog: &HrirCatalog, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(catalog.len());
    for (i, e) in catalog.entries().iter().enumerate() {
        let file = PathBuf::from(format!("hrir_{i:04}.wav"));
        let samples = e
            .left
            .iter()
            .zip(&e.right)
            .flat_map(|(&l, &r)| [l as f32, r as f32])
            .collect();
        let wav = WavFile {
            sample_rate: catalog.sample_rate,
            channels: 2,
            encoding: WavEncoding::Float32,
            samples,
        };
        write_wav(dir.join(&file), &wav)?;
        entries.push(ManifestEntry {
            azimuth: e.azimuth,
            elevation: e.elevation,
            file,
        });
    }
    let manifest = HrirManifest {
        source_tag: Some(catalog.source_tag.clone()),
        entries,
    };
    let path = dir.join("hrir.json");
    std::fs::write(
        &path,
        serde_json::to_string_pretty(&manifest).map_err(|e| Error::Internal(e.to_string()))?,
    )?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn peak(x: &[f64]) -> f64 {
        // centroid of the squared response around the main lobe
        let i = x
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .unwrap()
            .0;
        let (lo, hi) = (i.saturating_sub(3), (i + 4).min(x.len()));
        let w: f64 = x[lo..hi].iter().map(|v| v * v).sum();
        x[lo..hi]
            .iter()
            .enumerate()
            .map(|(k, v)| (lo + k) as f64 * v * v)
            .sum::<f64>()
            / w
    }

    #[test]
    fn frontal_source_gives_identical_ears() {
        let c = synth_spherical_hrir(&[(0.0, 0.0), (0.0, 30.0)], DEFAULT_HEAD_RADIUS, 64).unwrap();
        for e in c.entries() {
            assert_eq!(e.left, e.right);
        }
    }

    #[test]
    fn lateral_itd_follows_woodworth() {
        let itd = woodworth_itd(90.0, DEFAULT_HEAD_RADIUS);
        assert!((itd * 1e3 - 0.656).abs() < 0.005, "{itd}");
        assert!((itd * 16000.0 - 10.5).abs() < 0.05);
        let c = synth_spherical_hrir(&[(90.0, 0.0)], DEFAULT_HEAD_RADIUS, 64).unwrap();
        let e = &c.entries()[0];
        let near = fractional_delay(BASE_DELAY - DEFAULT_HEAD_RADIUS / SPEED_OF_SOUND * 16000.0, 64);
        assert_eq!(e.right, near);
        // group delay of the shadowed ear includes the low-pass lag a / (1 - a)
        let measured = peak(&e.left) - peak(&e.right);
        assert!((measured - (itd * 16000.0 + 1.0)).abs() < 1.0, "{measured}");
    }

    #[test]
    fn mirrored_azimuths_swap_ears() {
        let c = synth_spherical_hrir(&[(35.0, 10.0), (-35.0, 10.0)], DEFAULT_HEAD_RADIUS, 64).unwrap();
        let (a, b) = (&c.entries()[0], &c.entries()[1]);
        assert_eq!(a.left, b.right);
        assert_eq!(a.right, b.left);
    }

    #[test]
    fn integer_delay_is_a_unit_impulse() {
        let h = fractional_delay(5.0, 16);
        assert!(h.iter().enumerate().all(|(i, &v)| if i == 5 {
            (v - 1.0).abs() < 1e-15
        } else {
            v.abs() < 1e-15
        }));
    }

    #[test]
    fn cipic_grid_shape() {
        let d = cipic_directions();
        assert_eq!(d.len(), 1250);
        let c = synth_spherical_hrir(&d, DEFAULT_HEAD_RADIUS, DEFAULT_IR_LENGTH).unwrap();
        assert_eq!(c.grid_shape(), (25, 50));
        assert_eq!(c.nearest(44.0, 1.0).azimuth, 45.0);
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(synth_spherical_hrir(&[(0.0, 0.0)], 0.0, 64).is_err());
        assert!(synth_spherical_hrir(&[(0.0, 0.0)], DEFAULT_HEAD_RADIUS, 20).is_err());
    }

    #[test]
    fn catalog_round_trips_through_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let dirs = [(-30.0, 0.0), (0.0, 0.0), (30.0, 0.0), (90.0, 45.0)];
        let c = synth_spherical_hrir(&dirs, DEFAULT_HEAD_RADIUS, 64).unwrap();
        let p = save_hrir_catalog(&c, dir.path()).unwrap();
        let back = load_hrir_catalog(&p).unwrap();
        assert_eq!(back.len(), 4);
        for (a, b) in c.entries().iter().zip(back.entries()) {
            assert_eq!(a.azimuth, b.azimuth);
            for (x, y) in a.left.iter().zip(&b.left) {
                assert!((x - y).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn manifest_errors_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        std::fs::write(
            &p,
            r#"{"entries": [{"azimuth": 0, "elevation": 0, "file": "gone.wav"}]}"#,
        )
        .unwrap();
        let e = load_hrir_catalog(&p).unwrap_err();
        assert!(matches!(e, Error::MissingFile(_)));
        assert!(e.to_string().contains("gone.wav"));
        std::fs::write(&p, "{not json").unwrap();
        assert!(matches!(load_hrir_catalog(&p), Err(Error::Manifest { .. })));
        let c = synth_spherical_hrir(&[(0.0, 0.0)], DEFAULT_HEAD_RADIUS, 64).unwrap();
        save_hrir_catalog(&c, dir.path()).unwrap();
        let short = WavFile {
            sample_rate: 16000,
            channels: 2,
            encoding: WavEncoding::Float32,
            samples: vec![0.5; 20],
        };
        write_wav(dir.path().join("short.wav"), &short).unwrap();
        std::fs::write(
            &p,
            r#"{"entries": [{"azimuth": 0, "elevation": 0, "file": "hrir_0000.wav"},
                            {"azimuth": 5, "elevation": 0, "file": "short.wav"}]}"#,
        )
        .unwrap();
        assert!(matches!(load_hrir_catalog(&p), Err(Error::Input(_))));
    }
}
