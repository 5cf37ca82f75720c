//! Binaural scene synthesis and dataset generation.

pub mod dataset;
pub mod hrir;
pub mod scene;
pub mod sources;

pub use dataset::{
    generate_dataset, generate_in_memory, Dataset, DatasetConfig, DatasetManifest, GeneratedSample, SampleAudio,
    SamplePaths, SampleRecord, Split,
};
pub use hrir::{
    cipic_directions, load_hrir_catalog, save_hrir_catalog, synth_spherical_hrir, woodworth_itd, HrirCatalog,
    HrirEntry, DEFAULT_HEAD_RADIUS, DEFAULT_IR_LENGTH, SPEED_OF_SOUND,
};
pub use scene::{
    binaural_power, convolve_truncated, diffuse_noise, diffuse_noise_averaged, measured_snr_db, mix_at_snr, spatialize,
    Mixture, MonoWave,
};
pub use sources::{synth_noise, synth_speech, NoiseKind};
