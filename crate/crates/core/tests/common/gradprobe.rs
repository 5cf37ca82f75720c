//! Toy-model gradient probe shared by the gradient tests and the acceptance run.

use lbccn::error::Result;
use lbccn::model::{LbccnConfig, LbccnModel, PredictorVariant};
use lbccn::nn::{grad_check, Evaluation, GradCheckReport, Tape, Var};
use lbccn::tensor::{Tensor, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| C64::new(rng.gen_range(-scale..scale), rng.gen_range(-scale..scale)))
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

pub struct Probe {
    pub model: LbccnModel,
    pub noisy: Tensor,
    pub clean: Tensor,
    pub noise: Tensor,
    pub high: Tensor,
}

/// Toy model with random low-band data of 16 frames.
pub fn probe(variant: PredictorVariant) -> Probe {
    let cfg = LbccnConfig::toy().with_variant(variant);
    let model = LbccnModel::build(cfg.clone(), 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (t, q, fh) = (16, cfg.bands.q, cfg.high_bins());
    let clean = random(&[t, 2, q], 1.0, &mut rng);
    let noise = random(&[t, 2, q], 0.7, &mut rng);
    let data = clean.data().iter().zip(noise.data()).map(|(a, b)| a + b).collect();
    let noisy = Tensor::from_vec(&[t, 2, q], data).unwrap();
    let high = random(&[t, 2, fh], 0.5, &mut rng);
    Probe {
        model,
        noisy,
        clean,
        noise,
        high,
    }
}

/// Central-difference check of every parameter against the tape gradient.
pub fn check<L>(p: &Probe, h: f64, mut loss: L) -> GradCheckReport
where
    L: FnMut(&mut Tape, Var) -> Result<Var>,
{
    let names = p.model.params().names().to_vec();
    let params = p.model.params().tensors().to_vec();
    let mut m = p.model.clone();
    let eval = |theta: &[Tensor], want: bool| {
        for (i, t) in theta.iter().enumerate() {
            *m.params_mut().get_mut(i) = t.clone();
        }
        let mut tape = Tape::with_branch_trace();
        let fv = m.forward_tape(&mut tape, &p.noisy, &p.high, want)?;
        let est = m.predict_tape(&mut tape, &fv, &p.noisy)?;
        let l = loss(&mut tape, est)?;
        let value = tape.value(l).data()[0].re;
        let grads = if want {
            tape.backward(l)?;
            let g = fv
                .params
                .iter()
                .map(|&v| {
                    tape.grad(v)
                        .cloned()
                        .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))
                })
                .collect();
            Some(g)
        } else {
            None
        };
        Ok(Evaluation {
            loss: value,
            grads,
            trace: tape.branch_trace().unwrap_or(&[]).to_vec(),
        })
    };
    grad_check(&names, &params, eval, h, 1e-4).unwrap()
}
