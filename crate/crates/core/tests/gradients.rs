#[path = "common/gradprobe.rs"]
mod gradprobe;

use gradprobe::{check, probe};
use lbccn::losses::{total_on_tape, LossContext, LossWeights, Targets};
use lbccn::model::PredictorVariant;

#[test]
fn toy_model_gradients_match_central_differences() {
    for v in PredictorVariant::ALL {
        let p = probe(v);
        let clean = p.clean.clone();
        let r = check(&p, 1e-3, |tape, est| {
            let e = tape.sub_from(&clean, est)?;
            tape.sum_abs_sq(e)
        });
        assert!(r.passed(), "{v}: {:?}", r.failures());
        assert_eq!(r.tensors.len(), p.model.params().len());
        assert!(r.tensors.iter().all(|t| t.checked > 0 || t.excluded > 0));
    }
}

#[test]
fn toy_model_composite_loss_gradients_match_central_differences() {
    for v in PredictorVariant::ALL {
        let p = probe(v);
        let cfg = p.model.config().clone();
        let ctx = LossContext::new(&cfg.stft, cfg.bands.q).unwrap();
        let targets = Targets::new(&ctx, p.clean.clone(), p.noise.clone()).unwrap();
        let noisy = p.noisy.clone();
        let w = LossWeights::default();
        let r = check(&p, 1e-6, |tape, est| {
            total_on_tape(tape, est, &noisy, &targets, &ctx, &w)
        });
        assert!(r.passed(), "{v}: {:?}", r.failures());
    }
}
