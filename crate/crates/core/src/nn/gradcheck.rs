//! Central finite-difference gradient checking.

use crate::error::Result;
use crate::tensor::{Tensor, C64};

const ZERO_GRAD_SCALE: f64 = 1e-4;

/// Result of evaluating a loss at one parameter setting.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loss: f64,
    /// Analytic gradients, one per parameter tensor (only when requested).
    pub grads: Option<Vec<Tensor>>,
    /// Branches taken at kinks; perturbations that change it are excluded.
    pub trace: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    pub fn excluded(&self) -> usize {
        self.tensors.iter().map(|t| t.excluded).sum()
    }

    pub fn failures(&self) -> Vec<&TensorCheck> {
        self.tensors
            .iter()
            .filter(|t| !(t.max_rel_error < self.tolerance))
            .collect()
    }

    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }
}

/// Compares analytic gradients against central differences with step `h`,
/// perturbing the real and imaginary part of every entry.
///
/// The error of a tensor is `max|analytic - numeric| / max(max|analytic|,
/// max|numeric|, 1e-4 * G)` where `G` is the largest analytic gradient entry
/// over all tensors, so tensors with identically zero gradients compare at
/// the scale of the model rather than of rounding noise. A coordinate whose
/// perturbation flips a recorded branch and whose difference exceeds the
/// tolerance is excluded and counted rather than failed.
pub fn grad_check<F>(
    names: &[String],
    params: &[Tensor],
    mut eval: F,
    h: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[Tensor], bool) -> Result<Evaluation>,
{
    let base = eval(params, true)?;
    let analytic = base
        .grads
        .clone()
        .unwrap_or_else(|| params.iter().map(|p| Tensor::zeros(p.shape())).collect());
    let global = analytic
        .iter()
        .flat_map(|t| t.data().iter())
        .map(|z| z.re.abs().max(z.im.abs()))
        .fold(0.0, f64::max);
    let mut work: Vec<Tensor> = params.to_vec();
    let mut tensors = Vec::with_capacity(params.len());
    for (i, a) in analytic.iter().enumerate() {
        let mut max_a: f64 = 0.0;
        let mut max_n: f64 = 0.0;
        let mut diffs = Vec::with_capacity(2 * params[i].len());
        for j in 0..params[i].len() {
            let orig = params[i].data()[j];
            for (part, unit) in [(a.data()[j].re, C64::new(h, 0.0)), (a.data()[j].im, C64::new(0.0, h))] {
                work[i].data_mut()[j] = orig + unit;
                let plus = eval(&work, false)?;
                work[i].data_mut()[j] = orig - unit;
                let minus = eval(&work, false)?;
                work[i].data_mut()[j] = orig;
                let flipped = plus.trace != base.trace || minus.trace != base.trace;
                let numeric = (plus.loss - minus.loss) / (2.0 * h);
                max_a = max_a.max(part.abs());
                if !flipped {
                    max_n = max_n.max(numeric.abs());
                }
                diffs.push(((part - numeric).abs(), flipped));
            }
        }
        let scale = max_a.max(max_n).max(ZERO_GRAD_SCALE * global).max(f64::MIN_POSITIVE);
        let (mut max_diff, mut checked, mut excluded) = (0.0f64, 0, 0);
        for (d, flipped) in diffs {
            if flipped && !(d / scale < tolerance) {
                excluded += 1;
            } else {
                max_diff = max_diff.max(d);
                checked += 1;
            }
        }
        tensors.push(TensorCheck {
            name: names.get(i).cloned().unwrap_or_else(|| format!("param{i}")),
            max_rel_error: if max_diff == 0.0 { 0.0 } else { max_diff / scale },
            checked,
            excluded,
        });
    }
    Ok(GradCheckReport { tensors, tolerance })
}
