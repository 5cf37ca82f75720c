//! Dataset-level training and evaluation shared by the CLI and the tests.

use rayon::prelude::*;
use serde::Serialize;

use crate::dsp::Stft;
use crate::error::{Error, Result};
use crate::losses::metrics::SignalMetrics;
use crate::losses::{evaluate, MetricsReport};
use crate::model::{enhance_streaming, Example, LbccnModel, TrainConfig, Trainer};
use crate::synth::{Dataset, GeneratedSample, SampleAudio, Split};

/// An utterance with its identifier.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: String,
    pub audio: SampleAudio,
}

impl From<&GeneratedSample> for Utterance {
    fn from(s: &GeneratedSample) -> Self {
        Utterance {
            id: s.record.id.clone(),
            audio: SampleAudio {
                noisy: s.mixture.noisy.clone(),
                clean: s.mixture.clean.clone(),
                noise: s.mixture.noise.clone(),
            },
        }
    }
}

/// Reads up to `limit` utterances of `split`, in manifest order.
pub fn load_split(ds: &Dataset, split: Split, limit: Option<usize>) -> Result<Vec<Utterance>> {
    ds.manifest
        .split(split)
        .take(limit.unwrap_or(usize::MAX))
        .map(|r| {
            Ok(Utterance {
                id: r.id.clone(),
                audio: ds.load(r)?,
            })
        })
        .collect()
}

pub fn examples(model: &LbccnModel, utterances: &[Utterance]) -> Result<Vec<Example>> {
    let engine = Stft::new(&model.config().stft)?;
    let q = model.config().bands.q;
    utterances
        .par_iter()
        .map(|u| Example::new(&engine, q, &u.audio.noisy, &u.audio.clean, &u.audio.noise))
        .collect()
}

/// Per-utterance metrics of the enhanced output against the noisy input.
pub fn evaluate_model(model: &LbccnModel, utterances: &[Utterance], streaming: bool) -> Result<Vec<MetricsReport>> {
    utterances
        .par_iter()
        .map(|u| {
            let enhanced = if streaming {
                enhance_streaming(model, &u.audio.noisy)?
            } else {
                model.enhance(&u.audio.noisy)?
            };
            let mut r = evaluate(&u.audio.clean, &u.audio.noisy, &enhanced)?;
            r.id = Some(u.id.clone());
            Ok(r)
        })
        .collect()
}

/// Means over a set of reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalSummary {
    pub count: usize,
    pub enhanced: SignalMetrics,
    pub noisy: SignalMetrics,
    pub delta: SignalMetrics,
}

impl EvalSummary {
    pub fn snr_improvement_db(&self) -> f64 {
        self.delta.mean_snr_db()
    }
}

fn mean_of(items: impl Iterator<Item = SignalMetrics>, n: f64) -> SignalMetrics {
    let mut m = SignalMetrics::default();
    for s in items {
        for ear in 0..2 {
            m.snr_db[ear] += s.snr_db[ear] / n;
            m.stoi[ear] += s.stoi[ear] / n;
        }
        m.ild_error += s.ild_error / n;
        m.ipd_error += s.ipd_error / n;
    }
    m
}

pub fn summarize(reports: &[MetricsReport]) -> Result<EvalSummary> {
    if reports.is_empty() {
        return Err(Error::Input("nothing to summarise".into()));
    }
    let n = reports.len() as f64;
    Ok(EvalSummary {
        count: reports.len(),
        enhanced: mean_of(reports.iter().map(|r| r.enhanced), n),
        noisy: mean_of(reports.iter().map(|r| r.noisy), n),
        delta: mean_of(reports.iter().map(|r| r.delta), n),
    })
}

/// Outcome of one training run followed by evaluation.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub model: LbccnModel,
    pub loss_history: Vec<f64>,
    pub summary: EvalSummary,
}

/// Trains `model` on `train` and evaluates it on `eval`.
pub fn train_and_evaluate(
    mut model: LbccnModel,
    train: &[Utterance],
    eval: &[Utterance],
    config: TrainConfig,
) -> Result<RunResult> {
    let ex = examples(&model, train)?;
    let mut trainer = Trainer::new(&model, config)?;
    let loss_history = trainer.fit(&mut model, &ex, |_, _, _| {})?;
    let summary = summarize(&evaluate_model(&model, eval, false)?)?;
    Ok(RunResult {
        model,
        loss_history,
        summary,
    })
}
