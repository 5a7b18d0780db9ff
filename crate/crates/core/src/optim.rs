//! AdamW with decoupled weight decay.

use alloc::vec::Vec;

use crate::error::{dim_err, Error, Result};
use crate::model::ParamSet;
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 8e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && self.weight_decay >= 0.0
            && self.weight_decay.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if !ok {
            return Err(Error::Configuration("invalid optimizer settings".into()));
        }
        Ok(())
    }
}

/// First and second moments per parameter tensor, and the number of steps taken.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub steps: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros = || params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            m: zeros(),
            v: zeros(),
            steps: 0,
        }
    }
}

/// One update of every trainable tensor. Fails without touching anything
/// when a gradient is non-finite or misshapen.
pub fn adamw_step(
    params: &mut ParamSet,
    state: &mut AdamState,
    grads: &[Tensor],
    lr: f64,
    cfg: &AdamWConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(dim_err("adamw_step", &[params.len()], &[grads.len()]));
    }
    for (i, (g, p)) in grads.iter().zip(params.tensors()).enumerate() {
        if g.shape() != p.shape() {
            return Err(dim_err("adamw_step", p.shape(), g.shape()));
        }
        if let Some(j) = g.data().iter().position(|x| !x.is_finite()) {
            let offset: usize = params.tensors()[..i].iter().map(Tensor::len).sum();
            return Err(Error::NonFinite { index: offset + j });
        }
    }
    state.steps += 1;
    let t = state.steps as f64;
    let bc1 = 1.0 - libm::pow(cfg.beta1, t);
    let bc2 = 1.0 - libm::pow(cfg.beta2, t);
    let decay = 1.0 - lr * cfg.weight_decay;
    for i in 0..params.len() {
        if !params.is_trainable(i) {
            continue;
        }
        let p = params.tensors_mut()[i].data_mut();
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        for (k, &gk) in grads[i].data().iter().enumerate() {
            p[k] *= decay;
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
            let mh = m[k] / bc1;
            let vh = v[k] / bc2;
            p[k] -= lr * mh / (libm::sqrt(vh) + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_set(p: f64) -> ParamSet {
        let mut s = ParamSet::new();
        s.push("p", Tensor::vector(alloc::vec![p]).unwrap(), true);
        s
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let mut p = scalar_set(0.7);
        let mut st = AdamState::new(&p);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        adamw_step(&mut p, &mut st, &[Tensor::zeros(&[1])], 0.1, &cfg).unwrap();
        assert_eq!(p.tensors()[0].item(), 0.7);
    }

    #[test]
    fn single_step_hand_value() {
        let mut p = scalar_set(1.0);
        let mut st = AdamState::new(&p);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        adamw_step(&mut p, &mut st, &[Tensor::full(&[1], 1.0)], 0.1, &cfg).unwrap();
        // m̂ = 1, v̂ = 1
        let expected = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8);
        assert!((p.tensors()[0].item() - expected).abs() < 1e-15);
    }

    #[test]
    fn decoupled_decay_shrinks_by_lr_wd_p() {
        let mut p = scalar_set(2.0);
        let mut st = AdamState::new(&p);
        let cfg = AdamWConfig::default();
        adamw_step(&mut p, &mut st, &[Tensor::zeros(&[1])], 0.1, &cfg).unwrap();
        assert!((p.tensors()[0].item() - (2.0 - 0.1 * 0.01 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_leaves_state_untouched() {
        let mut p = scalar_set(1.0);
        p.push("q", Tensor::zeros(&[2]), true);
        let mut st = AdamState::new(&p);
        let before = (p.clone(), st.clone());
        let mut bad = Tensor::zeros(&[2]);
        bad.data_mut()[1] = f64::NAN;
        let grads = [Tensor::zeros(&[1]), bad];
        let r = adamw_step(&mut p, &mut st, &grads, 0.1, &AdamWConfig::default());
        assert!(matches!(r, Err(Error::NonFinite { index: 2 })));
        assert_eq!((p, st), before);
    }

    #[test]
    fn frozen_tensor_is_not_updated() {
        let mut p = ParamSet::new();
        p.push("t", Tensor::full(&[1], 3.0), false);
        let mut st = AdamState::new(&p);
        adamw_step(&mut p, &mut st, &[Tensor::full(&[1], 1.0)], 0.1, &AdamWConfig::default()).unwrap();
        assert_eq!(p.tensors()[0].item(), 3.0);
    }

    #[test]
    fn matches_reference_trajectory() {
        // independent re-implementation over several steps with varying gradients
        let cfg = AdamWConfig::default();
        let mut p = scalar_set(0.5);
        let mut st = AdamState::new(&p);
        let (mut rp, mut rm, mut rv) = (0.5f64, 0.0f64, 0.0f64);
        for t in 1..=10 {
            let g = libm::sin(t as f64);
            adamw_step(&mut p, &mut st, &[Tensor::full(&[1], g)], 1e-2, &cfg).unwrap();
            rp -= 1e-2 * 0.01 * rp;
            rm = 0.9 * rm + 0.1 * g;
            rv = 0.999 * rv + 0.001 * g * g;
            let mh = rm / (1.0 - 0.9f64.powi(t));
            let vh = rv / (1.0 - 0.999f64.powi(t));
            rp -= 1e-2 * mh / (vh.sqrt() + 1e-8);
        }
        assert!((p.tensors()[0].item() - rp).abs() < 1e-14);
    }
}
