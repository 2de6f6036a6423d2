use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::params::{Gradients, ParameterStore};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moments per real component, plus the step count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub m: ParameterStore,
    pub v: ParameterStore,
}

impl OptimizerState {
    pub fn new(params: &ParameterStore) -> Self {
        Self {
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// AdamW with decoupled decay. Real and imaginary parts of complex entries
/// are treated as independent coordinates. Entries for which `frozen`
/// returns true are left untouched.
pub fn adamw_step_masked(
    params: &mut ParameterStore,
    grads: &Gradients,
    state: &mut OptimizerState,
    lr: f64,
    weight_decay: f64,
    frozen: impl Fn(&str) -> bool,
) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    let mask: Vec<bool> = params.iter().map(|(n, _)| frozen(n)).collect();
    params.update_with(grads, &mut state.m, &mut state.v, |e, p, g, m, v| {
        if mask[e] {
            return;
        }
        *p *= 1.0 - lr * weight_decay;
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let mhat = *m / bc1;
        let vhat = *v / bc2;
        *p -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
    })
}

pub fn adamw_step(
    params: &mut ParameterStore,
    grads: &Gradients,
    state: &mut OptimizerState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    adamw_step_masked(params, grads, state, lr, weight_decay, |_| false)
}

/// `floor + (base - floor) * (1 + cos(pi * step / total)) / 2`, no warm-up.
pub fn cosine_lr(step: usize, total_steps: usize, base_lr: f64, floor: f64) -> f64 {
    if total_steps == 0 {
        return base_lr;
    }
    let x = step.min(total_steps) as f64 / total_steps as f64;
    floor + (base_lr - floor) * 0.5 * (1.0 + (PI * x).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::Param;
    use crate::tensor::{ComplexArray, RealArray};
    use num_complex::Complex64;

    fn store(vals: &[f64]) -> ParameterStore {
        let mut s = ParameterStore::new();
        s.insert("w", Param::Real(RealArray::from_vec(&[vals.len()], vals.to_vec()).unwrap()))
            .unwrap();
        s.insert(
            "z",
            Param::Complex(ComplexArray::from_vec(&[1], vec![Complex64::new(1.0, -2.0)]).unwrap()),
        )
        .unwrap();
        s
    }

    #[test]
    fn zero_gradient_and_decay() {
        let mut p = store(&[1.0, -3.0]);
        let g = p.zeros_like();
        let mut st = OptimizerState::new(&p);
        adamw_step(&mut p, &g, &mut st, 1e-3, 0.0).unwrap();
        assert_eq!(p, store(&[1.0, -3.0]));
        adamw_step(&mut p, &g, &mut st, 1e-2, 0.5).unwrap();
        let f = 1.0 - 1e-2 * 0.5;
        assert_eq!(p.by_name("w").unwrap().to_reals(), vec![1.0 * f, -3.0 * f]);
        assert_eq!(p.by_name("z").unwrap().to_reals(), vec![1.0 * f, -2.0 * f]);
    }

    #[test]
    fn frozen_entries_are_untouched() {
        let mut p = store(&[1.0]);
        let mut g = p.zeros_like();
        g.by_name_mut("w").unwrap().set_real_at(0, 1.0);
        g.by_name_mut("z").unwrap().set_real_at(1, 1.0);
        let mut st = OptimizerState::new(&p);
        adamw_step_masked(&mut p, &g, &mut st, 0.1, 0.1, |n| n == "w").unwrap();
        assert_eq!(p.by_name("w").unwrap().to_reals(), vec![1.0]);
        assert_ne!(p.by_name("z").unwrap().to_reals(), vec![1.0, -2.0]);
    }

    #[test]
    fn quadratic_loss_decreases() {
        // f(w) = sum (w - c)^2
        let c = [0.3, -1.2, 2.0];
        let mut p = store(&[0.0, 0.0, 0.0]);
        let mut st = OptimizerState::new(&p);
        let loss = |p: &ParameterStore| {
            let w = p.by_name("w").unwrap().to_reals();
            w.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        };
        let mut prev = loss(&p);
        for step in 0..100 {
            let mut g = p.zeros_like();
            let w = p.by_name("w").unwrap().to_reals();
            for k in 0..3 {
                g.by_name_mut("w").unwrap().set_real_at(k, 2.0 * (w[k] - c[k]));
            }
            adamw_step(&mut p, &g, &mut st, 0.01, 0.0).unwrap();
            let l = loss(&p);
            if step >= 1 {
                assert!(l < prev, "step {step}: {l} >= {prev}");
            }
            prev = l;
        }
    }

    #[test]
    fn cosine_schedule_points() {
        assert_eq!(cosine_lr(0, 100, 2e-3, 0.0), 2e-3);
        assert!((cosine_lr(50, 100, 2e-3, 0.0) - 1e-3).abs() < 1e-18);
        assert!(cosine_lr(100, 100, 2e-3, 0.0).abs() < 1e-18);
    }
}
