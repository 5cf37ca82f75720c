//! Adam optimiser over complex parameters.
//!
//! Real and imaginary parts are treated as two independent real coordinates,
//! each with its own moment estimates.

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{Tensor, C64};

pub const DEFAULT_LR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: DEFAULT_LR,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    /// First moments; real/imag parts hold the moments of each coordinate.
    pub m: Vec<Tensor>,
    /// Second moments of the real (`.re`) and imaginary (`.im`) coordinates.
    pub v: Vec<Tensor>,
    pub hyper: AdamHyper,
}

impl AdamState {
    pub fn new(params: &ParamStore, hyper: AdamHyper) -> Self {
        let zeros = || params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        AdamState {
            step: 0,
            m: zeros(),
            v: zeros(),
            hyper,
        }
    }
}

/// One bias-corrected Adam update. Parameters are rounded to `f32` after the
/// update so checkpoints reproduce them exactly.
pub fn adam_step(params: &mut ParamStore, grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::shape("adam: parameter, gradient and state counts differ"));
    }
    for (i, g) in grads.iter().enumerate() {
        if g.shape() != params.get(i).shape() {
            return Err(Error::shape(format!(
                "adam: gradient shape {:?} for parameter {} of shape {:?}",
                g.shape(),
                params.name(i),
                params.get(i).shape()
            )));
        }
        if !g.all_finite() {
            return Err(Error::Numeric(format!(
                "non-finite gradient for parameter {}",
                params.name(i)
            )));
        }
    }
    state.step += 1;
    let AdamHyper { lr, beta1, beta2, eps } = state.hyper;
    let bc1 = 1.0 - beta1.powi(state.step as i32);
    let bc2 = 1.0 - beta2.powi(state.step as i32);
    let upd = |m: f64, v: f64| lr * (m / bc1) / ((v / bc2).sqrt() + eps);
    for (i, g) in grads.iter().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let p = params.get_mut(i);
        for (((pz, mz), vz), gz) in p
            .data_mut()
            .iter_mut()
            .zip(m.data_mut())
            .zip(v.data_mut())
            .zip(g.data())
        {
            mz.re = beta1 * mz.re + (1.0 - beta1) * gz.re;
            mz.im = beta1 * mz.im + (1.0 - beta1) * gz.im;
            vz.re = beta2 * vz.re + (1.0 - beta2) * gz.re * gz.re;
            vz.im = beta2 * vz.im + (1.0 - beta2) * gz.im * gz.im;
            let re = pz.re - upd(mz.re, vz.re);
            let im = pz.im - upd(mz.im, vz.im);
            *pz = C64::new(re as f32 as f64, im as f32 as f64);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: C64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::from_vec(&[1], vec![v]).unwrap());
        s
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = single(C64::new(0.5, -0.25));
        let mut st = AdamState::new(&p, AdamHyper::default());
        adam_step(&mut p, &[Tensor::zeros(&[1])], &mut st).unwrap();
        assert_eq!(p.get(0).data()[0], C64::new(0.5, -0.25));
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [1e-3, 1.0, 250.0] {
            let mut p = single(C64::new(0.0, 0.0));
            let hyper = AdamHyper {
                lr: 0.01,
                ..Default::default()
            };
            let mut st = AdamState::new(&p, hyper);
            let grad = Tensor::from_vec(&[1], vec![C64::new(g, -g)]).unwrap();
            adam_step(&mut p, &[grad], &mut st).unwrap();
            let z = p.get(0).data()[0];
            assert!((z.re + 0.01).abs() < 1e-6, "{z}");
            assert!((z.im - 0.01).abs() < 1e-6, "{z}");
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = single(C64::new(1.0, 0.0));
        let mut st = AdamState::new(&p, AdamHyper::default());
        let grad = Tensor::from_vec(&[1], vec![C64::new(f64::NAN, 0.0)]).unwrap();
        let err = adam_step(&mut p, &[grad], &mut st).unwrap_err();
        assert!(err.to_string().contains("w"), "{err}");
        assert_eq!(st.step, 0);
    }

    #[test]
    fn default_learning_rate() {
        assert_eq!(AdamHyper::default().lr, 1e-4);
    }
}
