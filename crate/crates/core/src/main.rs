use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use lbccn::bench::complexity_report;
use lbccn::experiment::{evaluate_model, examples, load_split, summarize, train_and_evaluate, EvalSummary, Utterance};
use lbccn::io::{read_wav, write_wav, WavFile};
use lbccn::losses::LossWeights;
use lbccn::model::checkpoint::save_checkpoint_full;
use lbccn::model::{
    enhance_streaming, load_checkpoint, Checkpoint, LbccnConfig, LbccnModel, PredictorVariant, TrainConfig, Trainer,
    TrainingMetadata,
};
use lbccn::synth::{
    cipic_directions, generate_dataset, load_hrir_catalog, synth_spherical_hrir, Dataset, DatasetConfig, NoiseKind,
    Split, DEFAULT_HEAD_RADIUS, DEFAULT_IR_LENGTH,
};
use lbccn::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "lbccn", version, about = "Binaural low-band speech enhancement")]
struct Cli {
    /// JSON file with per-command sections ("synth", "train", "model", ...).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dataset and artifact directory.
    #[arg(long, global = true, env = "LBCCN_DATA_DIR", default_value = "data")]
    data_dir: PathBuf,
    /// More logging (-v debug, -vv trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a binaural training set.
    Synth(SynthArgs),
    /// Train a model on the training split.
    Train(TrainArgs),
    /// Enhance a binaural WAV file.
    Enhance(EnhanceArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Report parameters, MACs and real-time factor.
    Bench(BenchArgs),
    /// Train and evaluate across values of k.
    SweepK(SweepKArgs),
    /// Train and evaluate across low-band sizes q.
    AblateQ(AblateQArgs),
}

macro_rules! apply {
    ($settings:expr, $args:expr; $($field:ident),+ $(,)?) => {
        $(if let Some(v) = $args.$field.clone() {
            $settings.$field = v.into();
        })+
    };
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
struct ConfigFile {
    synth: Option<SynthSettings>,
    train: Option<TrainSettings>,
    model: Option<LbccnConfig>,
    eval: Option<EvalSettings>,
    bench: Option<BenchSettings>,
    sweep_k: Option<SweepKSettings>,
    ablate_q: Option<AblateQSettings>,
}

impl ConfigFile {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(ConfigFile::default());
        };
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => e.into(),
        })?;
        serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }
}

fn log_resolved<T: Serialize>(command: &str, settings: &T) {
    match serde_json::to_string(settings) {
        Ok(s) => log::info!("{command} config: {s}"),
        Err(e) => log::warn!("cannot serialise {command} config: {e}"),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
struct SynthSettings {
    count: usize,
    seed: u64,
    snr_min: f64,
    snr_max: f64,
    duration: f64,
    azimuth: f64,
    elevation: f64,
    hrir: Option<PathBuf>,
    speech_dir: Option<PathBuf>,
    noise_dir: Option<PathBuf>,
    noise_kinds: Vec<NoiseKind>,
    workers: usize,
    output: Option<PathBuf>,
}

impl Default for SynthSettings {
    fn default() -> Self {
        let d = DatasetConfig::default();
        SynthSettings {
            count: d.count,
            seed: d.seed,
            snr_min: d.snr_range.0,
            snr_max: d.snr_range.1,
            duration: d.duration_s,
            azimuth: d.target_azimuth,
            elevation: d.target_elevation,
            hrir: None,
            speech_dir: None,
            noise_dir: None,
            noise_kinds: d.noise_kinds,
            workers: d.workers,
            output: None,
        }
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Number of mixtures (split 8:1:1).
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, allow_hyphen_values = true)]
    snr_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    snr_max: Option<f64>,
    /// Mixture length in seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Target direction in degrees.
    #[arg(long, allow_hyphen_values = true)]
    azimuth: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    elevation: Option<f64>,
    /// HRIR manifest (hrir.json or its directory); spherical-head model when absent.
    #[arg(long)]
    hrir: Option<PathBuf>,
    #[arg(long)]
    speech_dir: Option<PathBuf>,
    #[arg(long)]
    noise_dir: Option<PathBuf>,
    /// Comma-separated synthetic noise kinds.
    #[arg(long, value_delimiter = ',')]
    noise_kinds: Option<Vec<NoiseKind>>,
    /// Worker threads; 0 uses all cores.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory; defaults to the data directory.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn run_synth(cli: &Cli, file: ConfigFile, args: &SynthArgs) -> Result<()> {
    let mut s = file.synth.unwrap_or_default();
    apply!(s, args; count, seed, snr_min, snr_max, duration, azimuth, elevation, noise_kinds, workers);
    if args.hrir.is_some() {
        s.hrir = args.hrir.clone();
    }
    if args.speech_dir.is_some() {
        s.speech_dir = args.speech_dir.clone();
    }
    if args.noise_dir.is_some() {
        s.noise_dir = args.noise_dir.clone();
    }
    let out = args
        .output
        .clone()
        .or(s.output.clone())
        .unwrap_or_else(|| cli.data_dir.clone());
    s.output = Some(out.clone());
    log_resolved("synth", &s);

    let catalog = match &s.hrir {
        Some(p) => load_hrir_catalog(p)?,
        None => synth_spherical_hrir(&cipic_directions(), DEFAULT_HEAD_RADIUS, DEFAULT_IR_LENGTH)?,
    };
    let cfg = DatasetConfig {
        count: s.count,
        snr_range: (s.snr_min, s.snr_max),
        seed: s.seed,
        duration_s: s.duration,
        target_azimuth: s.azimuth,
        target_elevation: s.elevation,
        speech_dir: s.speech_dir.clone(),
        noise_dir: s.noise_dir.clone(),
        noise_kinds: s.noise_kinds.clone(),
        workers: s.workers,
    };
    let manifest = generate_dataset(&catalog, &cfg, &out)?;
    println!(
        "wrote {} mixtures to {} (hrir: {})",
        manifest.samples.len(),
        out.display(),
        manifest.hrir_source
    );
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
struct TrainSettings {
    k: f64,
    q: usize,
    variant: PredictorVariant,
    epochs: usize,
    seed: u64,
    lr: f64,
    batch_size: usize,
    crop_frames: Option<usize>,
    limit: Option<usize>,
    workers: usize,
    dataset: Option<PathBuf>,
    output: Option<PathBuf>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            k: LossWeights::default().k,
            q: LbccnConfig::default().bands.q,
            variant: PredictorVariant::Ratfs,
            epochs: 4,
            seed: 0,
            lr: 1e-3,
            batch_size: 1,
            crop_frames: Some(64),
            limit: None,
            workers: 1,
            dataset: None,
            output: None,
        }
    }
}

impl TrainSettings {
    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            weights: LossWeights {
                k: self.k,
                ..LossWeights::default()
            },
            crop_frames: self.crop_frames.filter(|&c| c > 0),
            seed: self.seed,
        }
    }

    fn model_config(&self, base: Option<&LbccnConfig>) -> LbccnConfig {
        base.cloned()
            .unwrap_or_default()
            .with_variant(self.variant)
            .with_q(self.q)
    }

    fn dataset(&self, cli: &Cli) -> Result<Dataset> {
        let path = self.dataset.clone().unwrap_or_else(|| cli.data_dir.clone());
        Dataset::open(&path).inspect_err(|_| log::error!("no dataset at {}; run `lbccn synth` first", path.display()))
    }
}

#[derive(Args, Debug, Clone)]
struct TrainFlags {
    /// Balance between the speech and noise SNR terms, in [0, 1].
    #[arg(long)]
    k: Option<f64>,
    /// Number of low-frequency bins processed by the network.
    #[arg(long)]
    q: Option<usize>,
    #[arg(long)]
    variant: Option<PredictorVariant>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Random crop length in frames; 0 trains on whole utterances.
    #[arg(long)]
    crop_frames: Option<usize>,
    /// Use at most this many training utterances.
    #[arg(long)]
    limit: Option<usize>,
    /// Worker threads for feature extraction and evaluation.
    #[arg(long)]
    workers: Option<usize>,
    /// Dataset manifest or directory; defaults to the data directory.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

impl TrainFlags {
    fn resolve(&self, file: Option<TrainSettings>) -> TrainSettings {
        let mut s = file.unwrap_or_default();
        apply!(s, self; k, q, variant, epochs, seed, lr, batch_size, workers);
        if self.crop_frames.is_some() {
            s.crop_frames = self.crop_frames;
        }
        if self.limit.is_some() {
            s.limit = self.limit;
        }
        if self.dataset.is_some() {
            s.dataset = self.dataset.clone();
        }
        s
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    flags: TrainFlags,
    /// Checkpoint path; defaults to <data-dir>/lbccn-<variant>.ckpt.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Serialize)]
struct Resolved<'a, T: Serialize> {
    #[serde(flatten)]
    settings: &'a T,
    model: &'a LbccnConfig,
}

fn run_train(cli: &Cli, file: ConfigFile, args: &TrainArgs) -> Result<()> {
    let mut s = args.flags.resolve(file.train);
    if args.output.is_some() {
        s.output = args.output.clone();
    }
    let output = s
        .output
        .clone()
        .unwrap_or_else(|| cli.data_dir.join(format!("lbccn-{}.ckpt", s.variant)));
    s.output = Some(output.clone());
    let config = s.model_config(file.model.as_ref());
    let tc = s.train_config();
    tc.validate()?;
    log_resolved(
        "train",
        &Resolved {
            settings: &s,
            model: &config,
        },
    );

    let ds = s.dataset(cli)?;
    let train = load_split(&ds, Split::Train, s.limit)?;
    let val = load_split(&ds, Split::Validation, None)?;
    let mut model = LbccnModel::build(config, s.seed)?;
    log::info!(
        "{} training utterances, {} real parameters",
        train.len(),
        model.real_param_count()
    );

    let ex = examples(&model, &train)?;
    let mut trainer = Trainer::new(&model, tc)?;
    let history = trainer.fit(&mut model, &ex, |epoch, loss, _| {
        println!("epoch {epoch:>3}  loss {loss:.4}")
    })?;

    if !val.is_empty() {
        let summary = summarize(&evaluate_model(&model, &val, false)?)?;
        log::info!("validation: {}", summary_line(&summary));
        println!("validation  {}", summary_line(&summary));
    }
    let ckpt = Checkpoint {
        model,
        metadata: TrainingMetadata {
            seed: s.seed,
            epoch: s.epochs,
            steps: trainer.adam.step,
            loss_history: history,
        },
        optimizer: Some(trainer.adam),
    };
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_checkpoint_full(&ckpt, &output)?;
    println!("saved {}", output.display());
    Ok(())
}

#[derive(Args, Debug)]
struct EnhanceArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Binaural 16 kHz WAV.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Process hop by hop through the streaming engine.
    #[arg(long)]
    streaming: bool,
}

fn run_enhance(args: &EnhanceArgs) -> Result<()> {
    log::info!(
        "enhance config: checkpoint={} input={} output={} streaming={}",
        args.checkpoint.display(),
        args.input.display(),
        args.output.display(),
        args.streaming
    );
    let model = load_checkpoint(&args.checkpoint)?;
    let wav = read_wav(&args.input)?;
    if wav.channels != 2 {
        return Err(Error::Input(format!(
            "{} has {} channel(s); a binaural (2-channel) file is required",
            args.input.display(),
            wav.channels
        )));
    }
    let noisy = wav.to_binaural()?;
    let out = if args.streaming {
        enhance_streaming(&model, &noisy)?
    } else {
        model.enhance(&noisy)?
    };
    let mut result = WavFile::from_binaural(&out);
    result.encoding = wav.encoding;
    write_wav(&args.output, &result)?;
    println!("wrote {} ({} frames)", args.output.display(), result.frames());
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
struct EvalSettings {
    split: Split,
    limit: Option<usize>,
    streaming: bool,
    workers: usize,
    dataset: Option<PathBuf>,
    report: Option<PathBuf>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            split: Split::Test,
            limit: None,
            streaming: false,
            workers: 0,
            dataset: None,
            report: None,
        }
    }
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset manifest or directory; defaults to the data directory.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// train, validation or test.
    #[arg(long)]
    split: Option<Split>,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    streaming: bool,
    #[arg(long)]
    workers: Option<usize>,
    /// Per-utterance JSON lines; defaults to <data-dir>/eval-<split>.jsonl.
    #[arg(long)]
    report: Option<PathBuf>,
}

fn run_eval(cli: &Cli, file: ConfigFile, args: &EvalArgs) -> Result<()> {
    let mut s = file.eval.unwrap_or_default();
    apply!(s, args; split, workers);
    if args.limit.is_some() {
        s.limit = args.limit;
    }
    if args.dataset.is_some() {
        s.dataset = args.dataset.clone();
    }
    if args.report.is_some() {
        s.report = args.report.clone();
    }
    s.streaming |= args.streaming;
    let report = s
        .report
        .clone()
        .unwrap_or_else(|| cli.data_dir.join(format!("eval-{}.jsonl", s.split.as_str())));
    s.report = Some(report.clone());
    log_resolved("eval", &s);

    let model = load_checkpoint(&args.checkpoint)?;
    let ds = Dataset::open(s.dataset.clone().unwrap_or_else(|| cli.data_dir.clone()))?;
    let utts = load_split(&ds, s.split, s.limit)?;
    let reports = in_pool(s.workers, || evaluate_model(&model, &utts, s.streaming))?;
    let mut out = std::io::BufWriter::new(fs::File::create(&report)?);
    for r in &reports {
        writeln!(out, "{}", r.to_json_line())?;
    }
    out.flush()?;
    let summary = summarize(&reports)?;
    print_table(
        &format!(
            "{} split, {} utterances, {}",
            s.split.as_str(),
            summary.count,
            model.variant()
        ),
        &[
            ("noisy".into(), noisy_as_summary(&summary)),
            (model.variant().to_string(), summary),
        ],
    );
    println!("per-utterance metrics: {}", report.display());
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
struct BenchSettings {
    seconds: f64,
    repetitions: usize,
    variant: PredictorVariant,
    q: usize,
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings {
            seconds: 2.0,
            repetitions: 5,
            variant: PredictorVariant::Ratfs,
            q: LbccnConfig::default().bands.q,
        }
    }
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Benchmark a trained checkpoint instead of a freshly built model.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Audio length per timed run, in seconds.
    #[arg(long)]
    seconds: Option<f64>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    variant: Option<PredictorVariant>,
    #[arg(long)]
    q: Option<usize>,
}

fn run_bench(file: ConfigFile, args: &BenchArgs) -> Result<()> {
    let mut s = file.bench.unwrap_or_default();
    apply!(s, args; seconds, repetitions, variant, q);
    let model = match &args.checkpoint {
        Some(p) => load_checkpoint(p)?,
        None => LbccnModel::build(file.model.unwrap_or_default().with_variant(s.variant).with_q(s.q), 0)?,
    };
    log_resolved(
        "bench",
        &Resolved {
            settings: &s,
            model: model.config(),
        },
    );
    let report = in_pool(1, || complexity_report(&model, s.seconds, s.repetitions))?;
    println!("{}", report.to_json());
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
struct SweepKSettings {
    ks: Vec<f64>,
    report: Option<PathBuf>,
}

impl Default for SweepKSettings {
    fn default() -> Self {
        SweepKSettings {
            ks: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            report: None,
        }
    }
}

#[derive(Args, Debug)]
struct SweepKArgs {
    #[command(flatten)]
    flags: TrainFlags,
    /// Comma-separated values of k.
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<f64>>,
    /// JSON summary of every run.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
struct AblateQSettings {
    qs: Vec<usize>,
    /// Adds a Masks-variant run at the configured q.
    masks_row: bool,
    report: Option<PathBuf>,
}

impl Default for AblateQSettings {
    fn default() -> Self {
        AblateQSettings {
            qs: vec![30, 40, 64, 129],
            masks_row: true,
            report: None,
        }
    }
}

#[derive(Args, Debug)]
struct AblateQArgs {
    #[command(flatten)]
    flags: TrainFlags,
    /// Comma-separated values of q.
    #[arg(long, value_delimiter = ',')]
    qs: Option<Vec<usize>>,
    /// Skip the Masks-variant row.
    #[arg(long)]
    no_masks_row: bool,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Serialize)]
struct RunRow {
    label: String,
    k: f64,
    q: usize,
    variant: PredictorVariant,
    real_params: usize,
    loss_history: Vec<f64>,
    summary: EvalSummary,
}

struct Runner {
    train: Vec<Utterance>,
    eval: Vec<Utterance>,
    base: Option<LbccnConfig>,
    workers: usize,
}

impl Runner {
    fn new(cli: &Cli, s: &TrainSettings, base: Option<LbccnConfig>) -> Result<Self> {
        let ds = s.dataset(cli)?;
        Ok(Runner {
            train: load_split(&ds, Split::Train, s.limit)?,
            eval: load_split(&ds, Split::Test, None)?,
            base,
            workers: s.workers,
        })
    }

    fn run(&self, label: String, s: &TrainSettings) -> Result<RunRow> {
        let config = s.model_config(self.base.as_ref());
        log::info!("run {label}: k={} q={} variant={}", s.k, s.q, s.variant);
        let model = LbccnModel::build(config, s.seed)?;
        let real_params = model.real_param_count();
        let r = in_pool(self.workers, || {
            train_and_evaluate(model, &self.train, &self.eval, s.train_config())
        })?;
        Ok(RunRow {
            label,
            k: s.k,
            q: s.q,
            variant: s.variant,
            real_params,
            loss_history: r.loss_history,
            summary: r.summary,
        })
    }
}

fn finish_grid(title: &str, rows: &[RunRow], report: Option<&Path>) -> Result<()> {
    let mut table: Vec<(String, EvalSummary)> = Vec::new();
    if let Some(first) = rows.first() {
        table.push(("noisy".into(), noisy_as_summary(&first.summary)));
    }
    table.extend(rows.iter().map(|r| (r.label.clone(), r.summary)));
    print_table(title, &table);
    if let Some(p) = report {
        fs::write(
            p,
            serde_json::to_string_pretty(rows).map_err(|e| Error::Internal(e.to_string()))?,
        )?;
        println!("report: {}", p.display());
    }
    Ok(())
}

fn run_sweep_k(cli: &Cli, file: ConfigFile, args: &SweepKArgs) -> Result<()> {
    let base_settings = args.flags.resolve(file.train);
    let mut g = file.sweep_k.unwrap_or_default();
    apply!(g, args; ks);
    if args.report.is_some() {
        g.report = args.report.clone();
    }
    let base = file.model;
    log_resolved(
        "sweep-k",
        &serde_json::json!({ "train": &base_settings, "grid": &g, "model": base_settings.model_config(base.as_ref()) }),
    );
    for &k in &g.ks {
        TrainSettings {
            k,
            ..base_settings.clone()
        }
        .train_config()
        .validate()?;
    }
    let runner = Runner::new(cli, &base_settings, base)?;
    let rows =
        g.ks.iter()
            .map(|&k| {
                runner.run(
                    format!("k={k}"),
                    &TrainSettings {
                        k,
                        ..base_settings.clone()
                    },
                )
            })
            .collect::<Result<Vec<_>>>()?;
    finish_grid(
        &format!("k sweep, {} epochs, {}", base_settings.epochs, base_settings.variant),
        &rows,
        g.report.as_deref(),
    )
}

fn run_ablate_q(cli: &Cli, file: ConfigFile, args: &AblateQArgs) -> Result<()> {
    let base_settings = args.flags.resolve(file.train);
    let mut g = file.ablate_q.unwrap_or_default();
    apply!(g, args; qs);
    g.masks_row &= !args.no_masks_row;
    if args.report.is_some() {
        g.report = args.report.clone();
    }
    let base = file.model;
    log_resolved(
        "ablate-q",
        &serde_json::json!({ "train": &base_settings, "grid": &g, "model": base_settings.model_config(base.as_ref()) }),
    );
    let mut plan: Vec<(String, TrainSettings)> =
        g.qs.iter()
            .map(|&q| {
                (
                    format!("q={q} {}", base_settings.variant),
                    TrainSettings {
                        q,
                        ..base_settings.clone()
                    },
                )
            })
            .collect();
    if g.masks_row {
        let s = TrainSettings {
            variant: PredictorVariant::Masks,
            ..base_settings.clone()
        };
        plan.push((format!("q={} masks", s.q), s));
    }
    for (_, s) in &plan {
        s.model_config(base.as_ref()).validate()?;
    }
    let runner = Runner::new(cli, &base_settings, base)?;
    let rows = plan
        .into_iter()
        .map(|(label, s)| runner.run(label, &s))
        .collect::<Result<Vec<_>>>()?;
    finish_grid(
        &format!("q ablation, {} epochs, k={}", base_settings.epochs, base_settings.k),
        &rows,
        g.report.as_deref(),
    )
}

fn noisy_as_summary(s: &EvalSummary) -> EvalSummary {
    EvalSummary {
        enhanced: s.noisy,
        delta: Default::default(),
        ..*s
    }
}

fn summary_line(s: &EvalSummary) -> String {
    format!(
        "dSNR {:+.2} dB  dSTOI {:+.3}  ILD err {:.4}  IPD err {:.4}",
        s.snr_improvement_db(),
        s.delta.mean_stoi(),
        s.enhanced.ild_error,
        s.enhanced.ipd_error
    )
}

fn print_table(title: &str, rows: &[(String, EvalSummary)]) {
    println!("{title}");
    println!(
        "{:<16} {:>9} {:>9} {:>7} {:>8} {:>9} {:>9}",
        "run", "SNR dB", "dSNR dB", "STOI", "dSTOI", "ILD err", "IPD err"
    );
    for (label, s) in rows {
        println!(
            "{:<16} {:>9.2} {:>+9.2} {:>7.3} {:>+8.3} {:>9.4} {:>9.4}",
            label,
            s.enhanced.mean_snr_db(),
            s.snr_improvement_db(),
            s.enhanced.mean_stoi(),
            s.delta.mean_stoi(),
            s.enhanced.ild_error,
            s.enhanced.ipd_error
        );
    }
}

fn in_pool<T: Send>(workers: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Internal(e.to_string()))?;
    pool.install(f)
}

fn run(cli: &Cli) -> Result<()> {
    let file = ConfigFile::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Synth(a) => run_synth(cli, file, a),
        Command::Train(a) => run_train(cli, file, a),
        Command::Enhance(a) => run_enhance(a),
        Command::Eval(a) => run_eval(cli, file, a),
        Command::Bench(a) => run_bench(file, a),
        Command::SweepK(a) => run_sweep_k(cli, file, a),
        Command::AblateQ(a) => run_ablate_q(cli, file, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.category().exit_code();
            eprintln!("error ({:?}): {e}", e.category());
            ExitCode::from(code as u8)
        }
    }
}
