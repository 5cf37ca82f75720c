//! Reproducible binaural dataset generation and loading.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::resample::resample;
use crate::dsp::{BinauralWaveform, PIPELINE_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::io::{read_binaural, read_wav, write_binaural};

use super::hrir::{HrirCatalog, HrirEntry};
use super::scene::{convolve_truncated, mix_at_snr, spatialize, Mixture, MonoWave};
use super::sources::{synth_noise, synth_speech, NoiseKind};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT: &str = "lbccn-dataset";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Validation,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Validation => "validation",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "validation" => Ok(Split::Validation),
            other => Err(Error::config(format!(
                "unknown split '{other}' (expected train, validation or test)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub count: usize,
    pub snr_range: (f64, f64),
    pub seed: u64,
    pub duration_s: f64,
    pub target_azimuth: f64,
    pub target_elevation: f64,
    /// Directory of speech WAVs; synthetic speech when absent.
    pub speech_dir: Option<PathBuf>,
    /// Directory of noise WAVs; synthetic noise of `noise_kinds` when absent.
    pub noise_dir: Option<PathBuf>,
    pub noise_kinds: Vec<NoiseKind>,
    /// Worker threads; 0 uses all cores.
    pub workers: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            count: 200,
            snr_range: (-10.0, 10.0),
            seed: 0,
            duration_s: 2.0,
            target_azimuth: 45.0,
            target_elevation: 0.0,
            speech_dir: None,
            noise_dir: None,
            noise_kinds: NoiseKind::ALL.to_vec(),
            workers: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        if self.count == 0 {
            v.push("count must be positive".to_string());
        }
        let (lo, hi) = self.snr_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            v.push(format!("snr range [{lo}, {hi}] is invalid"));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            v.push(format!("duration {} s must be positive", self.duration_s));
        }
        if self.noise_dir.is_none() && self.noise_kinds.is_empty() {
            v.push("no noise kinds selected".to_string());
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }

    pub fn samples_per_item(&self) -> usize {
        (self.duration_s * PIPELINE_SAMPLE_RATE as f64).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePaths {
    pub noisy: PathBuf,
    pub clean: PathBuf,
    pub noise: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub split: Split,
    pub snr_db: f64,
    pub azimuth: f64,
    pub elevation: f64,
    pub seed: u64,
    pub speech: String,
    pub noise: String,
    pub noise_gain: f64,
    pub paths: SamplePaths,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub sample_rate: u32,
    pub duration_s: f64,
    pub seed: u64,
    pub count: usize,
    pub snr_range: [f64; 2],
    pub requested_azimuth: f64,
    pub requested_elevation: f64,
    pub hrir_source: String,
    pub hrir_directions: usize,
    pub split_ratio: [u32; 3],
    pub speech_source: String,
    pub noise_source: String,
    pub samples: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &SampleRecord> {
        self.samples.iter().filter(move |s| s.split == split)
    }
}

/// One generated scene held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSample {
    pub record: SampleRecord,
    pub mixture: Mixture,
}

struct Corpus {
    name: String,
    clips: Vec<(String, Vec<f32>)>,
}

fn load_corpus(dir: &Path, min_len: usize) -> Result<Corpus> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    let mut clips = Vec::new();
    for f in files {
        let wav = read_wav(&f)?;
        let x: Vec<f64> = wav.to_mono().iter().map(|&v| v as f64).collect();
        let y: Vec<f32> = resample(&x, wav.sample_rate, PIPELINE_SAMPLE_RATE)
            .iter()
            .map(|&v| v as f32)
            .collect();
        if y.len() >= min_len && y.iter().any(|&v| v != 0.0) {
            let name = f
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            clips.push((name, y));
        }
    }
    if clips.is_empty() {
        return Err(Error::Input(format!(
            "{} holds no non-silent WAV of at least {min_len} samples",
            dir.display()
        )));
    }
    Ok(Corpus {
        name: dir.display().to_string(),
        clips,
    })
}

fn pick_clip<R: Rng>(corpus: &Corpus, len: usize, rng: &mut R) -> (String, Vec<f32>) {
    let (name, clip) = &corpus.clips[rng.gen_range(0..corpus.clips.len())];
    let off = rng.gen_range(0..=clip.len() - len);
    (format!("{name}@{off}"), clip[off..off + len].to_vec())
}

fn sample_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index as u64 + 1))
}

fn assign_splits(count: usize, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = count * 8 / 10;
    let n_test = count / 10;
    let mut splits = vec![Split::Train; count];
    for (pos, &i) in order.iter().enumerate() {
        splits[i] = if pos < n_train {
            Split::Train
        } else if pos < n_train + n_test {
            Split::Test
        } else {
            Split::Validation
        };
    }
    splits
}

struct Generator<'a> {
    cfg: &'a DatasetConfig,
    target: &'a HrirEntry,
    diffuse: (Vec<f64>, Vec<f64>),
    speech: Option<Corpus>,
    noise: Option<Corpus>,
    splits: Vec<Split>,
    len: usize,
}

impl<'a> Generator<'a> {
    fn new(catalog: &'a HrirCatalog, cfg: &'a DatasetConfig) -> Result<Self> {
        cfg.validate()?;
        if catalog.sample_rate() != PIPELINE_SAMPLE_RATE {
            return Err(Error::Input(format!("HRIR catalog is {} Hz", catalog.sample_rate())));
        }
        let len = cfg.samples_per_item();
        Ok(Generator {
            cfg,
            target: catalog.nearest(cfg.target_azimuth, cfg.target_elevation),
            diffuse: catalog.mean_ir(),
            speech: cfg.speech_dir.as_deref().map(|d| load_corpus(d, len)).transpose()?,
            noise: cfg.noise_dir.as_deref().map(|d| load_corpus(d, len)).transpose()?,
            splits: assign_splits(cfg.count, cfg.seed),
            len,
        })
    }

    fn sample(&self, index: usize) -> Result<GeneratedSample> {
        let seed = sample_seed(self.cfg.seed, index);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (lo, hi) = self.cfg.snr_range;
        let snr_db = if lo == hi { lo } else { rng.gen_range(lo..=hi) };
        let (speech_name, speech) = match &self.speech {
            Some(c) => pick_clip(c, self.len, &mut rng),
            None => (
                "synthetic".to_string(),
                synth_speech(self.len, PIPELINE_SAMPLE_RATE, &mut rng),
            ),
        };
        let (noise_name, noise) = match &self.noise {
            Some(c) => pick_clip(c, self.len, &mut rng),
            None => {
                let kind = self.cfg.noise_kinds[rng.gen_range(0..self.cfg.noise_kinds.len())];
                (
                    kind.to_string(),
                    synth_noise(kind, self.len, PIPELINE_SAMPLE_RATE, &mut rng),
                )
            }
        };
        let clean = spatialize(&MonoWave::new(speech, PIPELINE_SAMPLE_RATE), self.target)?;
        let n: Vec<f64> = noise.iter().map(|&v| v as f64).collect();
        let diffuse = BinauralWaveform::from_f64(
            &convolve_truncated(&n, &self.diffuse.0),
            &convolve_truncated(&n, &self.diffuse.1),
            PIPELINE_SAMPLE_RATE,
        )?;
        let mixture = mix_at_snr(&clean, &diffuse, snr_db)?;
        let id = format!("s{index:05}");
        let split = self.splits[index];
        let dir = PathBuf::from(split.as_str());
        let record = SampleRecord {
            paths: SamplePaths {
                noisy: dir.join(format!("{id}_noisy.wav")),
                clean: dir.join(format!("{id}_clean.wav")),
                noise: dir.join(format!("{id}_noise.wav")),
            },
            id,
            split,
            snr_db,
            azimuth: self.target.azimuth,
            elevation: self.target.elevation,
            seed,
            speech: speech_name,
            noise: noise_name,
            noise_gain: mixture.gain,
        };
        Ok(GeneratedSample { record, mixture })
    }

    fn manifest(&self, catalog: &HrirCatalog, samples: Vec<SampleRecord>) -> DatasetManifest {
        let cfg = self.cfg;
        let kinds: Vec<&str> = cfg.noise_kinds.iter().map(|k| k.as_str()).collect();
        DatasetManifest {
            format: MANIFEST_FORMAT.to_string(),
            version: 1,
            sample_rate: PIPELINE_SAMPLE_RATE,
            duration_s: cfg.duration_s,
            seed: cfg.seed,
            count: cfg.count,
            snr_range: [cfg.snr_range.0, cfg.snr_range.1],
            requested_azimuth: cfg.target_azimuth,
            requested_elevation: cfg.target_elevation,
            hrir_source: catalog.source_tag().to_string(),
            hrir_directions: catalog.len(),
            split_ratio: [8, 1, 1],
            speech_source: self.speech.as_ref().map_or("synthetic".into(), |c| c.name.clone()),
            noise_source: self
                .noise
                .as_ref()
                .map_or(format!("synthetic ({})", kinds.join(", ")), |c| c.name.clone()),
            samples,
        }
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))
}

/// Generates every scene in memory without touching the disk.
pub fn generate_in_memory(
    catalog: &HrirCatalog,
    cfg: &DatasetConfig,
) -> Result<(DatasetManifest, Vec<GeneratedSample>)> {
    let g = Generator::new(catalog, cfg)?;
    let samples: Vec<GeneratedSample> = pool(cfg.workers)?.install(|| {
        (0..cfg.count)
            .into_par_iter()
            .map(|i| g.sample(i))
            .collect::<Result<_>>()
    })?;
    let manifest = g.manifest(catalog, samples.iter().map(|s| s.record.clone()).collect());
    Ok((manifest, samples))
}

/// Writes noisy, clean and noise stereo files for every scene under
/// `out_dir/<split>/` plus `out_dir/manifest.json`.
pub fn generate_dataset(
    catalog: &HrirCatalog,
    cfg: &DatasetConfig,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    let out = out_dir.as_ref();
    let g = Generator::new(catalog, cfg)?;
    for s in [Split::Train, Split::Test, Split::Validation] {
        std::fs::create_dir_all(out.join(s.as_str()))?;
    }
    let records: Vec<SampleRecord> = pool(cfg.workers)?.install(|| {
        (0..cfg.count)
            .into_par_iter()
            .map(|i| {
                let s = g.sample(i)?;
                write_binaural(out.join(&s.record.paths.noisy), &s.mixture.noisy)?;
                write_binaural(out.join(&s.record.paths.clean), &s.mixture.clean)?;
                write_binaural(out.join(&s.record.paths.noise), &s.mixture.noise)?;
                Ok(s.record)
            })
            .collect::<Result<_>>()
    })?;
    let manifest = g.manifest(catalog, records);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Internal(e.to_string()))?;
    std::fs::write(out.join(MANIFEST_FILE), text)?;
    Ok(manifest)
}

/// A manifest together with the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub root: PathBuf,
}

/// Stereo audio of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleAudio {
    pub noisy: BinauralWaveform,
    pub clean: BinauralWaveform,
    pub noise: BinauralWaveform,
}

impl Dataset {
    /// Opens `path`, which is either a manifest file or a directory holding one.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let mut p = path.as_ref().to_path_buf();
        if p.is_dir() {
            p = p.join(MANIFEST_FILE);
        }
        let text = std::fs::read_to_string(&p).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(p.clone()),
            _ => Error::Io(e),
        })?;
        let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Manifest {
            path: p.clone(),
            msg: e.to_string(),
        })?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(Error::Manifest {
                path: p,
                msg: format!("format {:?} is not {MANIFEST_FORMAT}", manifest.format),
            });
        }
        let root = p.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Dataset { manifest, root })
    }

    pub fn load(&self, record: &SampleRecord) -> Result<SampleAudio> {
        let read = |rel: &Path| {
            let w = read_binaural(self.root.join(rel))?;
            w.require_rate(PIPELINE_SAMPLE_RATE)?;
            Ok::<_, Error>(w)
        };
        Ok(SampleAudio {
            noisy: read(&record.paths.noisy)?,
            clean: read(&record.paths.clean)?,
            noise: read(&record.paths.noise)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::hrir::{cipic_directions, synth_spherical_hrir, DEFAULT_HEAD_RADIUS, DEFAULT_IR_LENGTH};
    use crate::synth::scene::measured_snr_db;

    fn catalog() -> HrirCatalog {
        synth_spherical_hrir(&cipic_directions(), DEFAULT_HEAD_RADIUS, DEFAULT_IR_LENGTH).unwrap()
    }

    fn small(count: usize, seed: u64) -> DatasetConfig {
        DatasetConfig {
            count,
            seed,
            duration_s: 0.25,
            workers: 2,
            ..Default::default()
        }
    }

    #[test]
    fn splits_follow_eight_one_one() {
        let s = assign_splits(100, 3);
        let n = |x| s.iter().filter(|&&v| v == x).count();
        assert_eq!((n(Split::Train), n(Split::Test), n(Split::Validation)), (80, 10, 10));
        assert_eq!(s, assign_splits(100, 3));
        assert_ne!(s, assign_splits(100, 4));
    }

    #[test]
    fn in_memory_generation_is_reproducible() {
        let c = catalog();
        let (m1, s1) = generate_in_memory(&c, &small(12, 5)).unwrap();
        let (m2, s2) = generate_in_memory(
            &c,
            &DatasetConfig {
                workers: 1,
                ..small(12, 5)
            },
        )
        .unwrap();
        assert_eq!(m1, m2);
        assert_eq!(s1, s2);
        assert_eq!(m1.samples[0].azimuth, 45.0);
        for s in &s1 {
            assert!((-10.0..=10.0).contains(&s.record.snr_db));
            assert_eq!(s.mixture.noisy.len(), 4000);
            assert!((measured_snr_db(&s.mixture.clean, &s.mixture.noise) - s.record.snr_db).abs() < 0.01);
        }
    }

    #[test]
    fn files_round_trip_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let c = catalog();
        let m = generate_dataset(&c, &small(10, 7), dir.path()).unwrap();
        let ds = Dataset::open(dir.path()).unwrap();
        assert_eq!(ds.manifest, m);
        for r in &m.samples {
            let a = ds.load(r).unwrap();
            for (y, (x, n)) in a.noisy.left.iter().zip(a.clean.left.iter().zip(&a.noise.left)) {
                assert_eq!(*y, x + n);
            }
        }
    }

    #[test]
    fn corpus_directories_are_used_and_checked() {
        let dir = tempfile::tempdir().unwrap();
        let speech = dir.path().join("speech");
        std::fs::create_dir_all(&speech).unwrap();
        let cfg = DatasetConfig {
            speech_dir: Some(speech.clone()),
            ..small(4, 1)
        };
        assert!(matches!(generate_in_memory(&catalog(), &cfg), Err(Error::Input(_))));
        let tone: Vec<f32> = (0..9000).map(|i| (i as f32 * 0.05).sin() * 0.1).collect();
        crate::io::write_wav(speech.join("a.wav"), &crate::io::WavFile::mono(tone, 16000)).unwrap();
        let (m, _) = generate_in_memory(&catalog(), &cfg).unwrap();
        assert!(m.samples.iter().all(|s| s.speech.starts_with("a.wav@")));
    }

    #[test]
    fn invalid_config_lists_problems() {
        let cfg = DatasetConfig {
            count: 0,
            snr_range: (5.0, -5.0),
            ..Default::default()
        };
        match cfg.validate() {
            Err(Error::Config(v)) => assert_eq!(v.len(), 2),
            other => panic!("{other:?}"),
        }
    }
}
