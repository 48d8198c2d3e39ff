//! Parameter update rules (SGD, Adam, AdamW) and learning-rate schedules.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("non-finite gradient in parameter block '{block}' at offset {offset}")]
    NonFiniteGradient { block: String, offset: usize },
    #[error("block count mismatch: state has {state}, got {got}")]
    BlockCountMismatch { state: usize, got: usize },
    #[error("block '{block}' size mismatch: state has {state}, got {got}")]
    BlockSizeMismatch {
        block: String,
        state: usize,
        got: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    Sgd,
    Adam,
    AdamW,
}

/// Moment coefficients shared by Adam and AdamW; `weight_decay` only acts
/// under AdamW (decoupled decay).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OptimHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for OptimHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

/// Per-parameter moment buffers plus the step counter.
#[derive(Debug, Clone)]
pub struct OptimState {
    rule: UpdateRule,
    hyper: OptimHyper,
    step_count: u64,
    names: Vec<String>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimState {
    pub fn new(rule: UpdateRule, hyper: OptimHyper, names: Vec<String>, sizes: &[usize]) -> Self {
        assert_eq!(names.len(), sizes.len());
        Self {
            rule,
            hyper,
            step_count: 0,
            names,
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }

    pub fn rule(&self) -> UpdateRule {
        self.rule
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update to every parameter block.
    pub fn step(
        &mut self,
        params: &mut [&mut [f64]],
        grads: &[&[f64]],
        lr: f64,
    ) -> Result<(), OptimError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(OptimError::BlockCountMismatch {
                state: self.m.len(),
                got: params.len().max(grads.len()),
            });
        }
        for (bi, g) in grads.iter().enumerate() {
            if g.len() != self.m[bi].len() {
                return Err(OptimError::BlockSizeMismatch {
                    block: self.names[bi].clone(),
                    state: self.m[bi].len(),
                    got: g.len(),
                });
            }
            if let Some(offset) = g.iter().position(|v| !v.is_finite()) {
                return Err(OptimError::NonFiniteGradient {
                    block: self.names[bi].clone(),
                    offset,
                });
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let h = self.hyper;
        match self.rule {
            UpdateRule::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (pv, gv) in p.iter_mut().zip(*g) {
                        *pv -= lr * gv;
                    }
                }
            }
            UpdateRule::Adam | UpdateRule::AdamW => {
                let decay = match self.rule {
                    UpdateRule::AdamW => h.weight_decay,
                    _ => 0.0,
                };
                let bc1 = 1.0 - h.beta1.powi(t);
                let bc2 = 1.0 - h.beta2.powi(t);
                for (bi, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let m = &mut self.m[bi];
                    let v = &mut self.v[bi];
                    for i in 0..p.len() {
                        m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
                        v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        p[i] -= lr * m_hat / (v_hat.sqrt() + h.epsilon);
                        p[i] -= lr * decay * p[i];
                    }
                }
            }
        }
        Ok(())
    }
}

/// Epoch-indexed learning-rate schedules.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Schedule {
    Exponential { lr0: f64, gamma: f64 },
    Cosine { lr_start: f64, lr_end: f64 },
}

impl Schedule {
    /// Learning rate at `epoch` of `total_epochs`.
    pub fn lr_at(&self, epoch: usize, total_epochs: usize) -> f64 {
        match *self {
            Schedule::Exponential { lr0, gamma } => lr0 * gamma.powi(epoch as i32),
            Schedule::Cosine { lr_start, lr_end } => {
                if total_epochs == 0 {
                    return lr_start;
                }
                let phase = std::f64::consts::PI * epoch as f64 / total_epochs as f64;
                lr_end + 0.5 * (lr_start - lr_end) * (1.0 + phase.cos())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_block(rule: UpdateRule, hyper: OptimHyper, n: usize) -> OptimState {
        OptimState::new(rule, hyper, vec!["block".to_string()], &[n])
    }

    #[test]
    fn sgd_hand_value() {
        let mut state = single_block(UpdateRule::Sgd, OptimHyper::default(), 1);
        let mut p = vec![1.0];
        state
            .step(&mut [p.as_mut_slice()], &[&[0.5]], 0.1)
            .unwrap();
        assert!((p[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_matches_hand_recurrences() {
        let h = OptimHyper::default();
        let mut state = single_block(UpdateRule::Adam, h, 1);
        let g = 0.3;
        let lr = 1e-3;
        let mut p = vec![2.0];
        state.step(&mut [p.as_mut_slice()], &[&[g]], lr).unwrap();
        // by hand: m = (1-b1) g, v = (1-b2) g^2; m_hat = g, v_hat = g^2
        let m_hat = ((1.0 - h.beta1) * g) / (1.0 - h.beta1);
        let v_hat = ((1.0 - h.beta2) * g * g) / (1.0 - h.beta2);
        let expected = 2.0 - lr * m_hat / (v_hat.sqrt() + h.epsilon);
        assert!((p[0] - expected).abs() < 1e-15);
        // update magnitude ~ lr for constant gradients
        assert!(((2.0 - p[0]).abs() - lr).abs() < 1e-6);
    }

    #[test]
    fn adam_approaches_signed_lr_updates() {
        let h = OptimHyper::default();
        let mut state = single_block(UpdateRule::Adam, h, 1);
        let mut p = vec![0.0];
        let lr = 0.01;
        let mut prev = p[0];
        for _ in 0..200 {
            prev = p[0];
            state.step(&mut [p.as_mut_slice()], &[&[-2.5]], lr).unwrap();
        }
        let update = p[0] - prev;
        // gradient is negative, so updates move p upward by ~lr
        assert!((update - lr).abs() < 1e-4);
    }

    #[test]
    fn adamw_with_zero_decay_is_bitwise_adam() {
        let mut hyper = OptimHyper::default();
        hyper.weight_decay = 0.0;
        let mut adam = single_block(UpdateRule::Adam, hyper, 3);
        let mut adamw = single_block(UpdateRule::AdamW, hyper, 3);
        let mut p1 = vec![0.4, -1.2, 3.3];
        let mut p2 = p1.clone();
        for step in 0..25 {
            let g = [0.1 * step as f64, -0.7, 2.0];
            adam.step(&mut [p1.as_mut_slice()], &[&g], 1e-3).unwrap();
            adamw.step(&mut [p2.as_mut_slice()], &[&g], 1e-3).unwrap();
        }
        assert_eq!(p1, p2);
    }

    #[test]
    fn adamw_decay_shrinks_parameters() {
        let hyper = OptimHyper::default();
        let mut state = single_block(UpdateRule::AdamW, hyper, 1);
        let mut p = vec![5.0];
        state.step(&mut [p.as_mut_slice()], &[&[0.0]], 1e-2).unwrap();
        // zero gradient: only the decoupled decay acts
        assert!((p[0] - 5.0 * (1.0 - 1e-2 * hyper.weight_decay)).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_zero_decay_is_fixed_point() {
        for rule in [UpdateRule::Sgd, UpdateRule::Adam] {
            let mut state = single_block(rule, OptimHyper::default(), 2);
            let mut p = vec![1.5, -2.5];
            for _ in 0..10 {
                state
                    .step(&mut [p.as_mut_slice()], &[&[0.0, 0.0]], 0.1)
                    .unwrap();
            }
            assert_eq!(p, vec![1.5, -2.5]);
        }
    }

    #[test]
    fn nan_gradient_names_block() {
        let mut state = OptimState::new(
            UpdateRule::Sgd,
            OptimHyper::default(),
            vec!["layer0.weight".into(), "layer0.bias".into()],
            &[2, 1],
        );
        let mut w = vec![0.0, 0.0];
        let mut b = vec![0.0];
        let err = state
            .step(
                &mut [w.as_mut_slice(), b.as_mut_slice()],
                &[&[0.0, 0.0], &[f64::NAN]],
                0.1,
            )
            .unwrap_err();
        match err {
            OptimError::NonFiniteGradient { block, offset } => {
                assert_eq!(block, "layer0.bias");
                assert_eq!(offset, 0);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn cosine_endpoints_and_midpoint() {
        let s = Schedule::Cosine {
            lr_start: 1e-3,
            lr_end: 1e-4,
        };
        assert!((s.lr_at(0, 10) - 1e-3).abs() < 1e-15);
        assert!((s.lr_at(10, 10) - 1e-4).abs() < 1e-15);
        assert!((s.lr_at(5, 10) - (1e-3 + 1e-4) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn cosine_is_non_increasing() {
        let s = Schedule::Cosine {
            lr_start: 1e-3,
            lr_end: 1e-4,
        };
        let mut prev = f64::INFINITY;
        for e in 0..=50 {
            let lr = s.lr_at(e, 50);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn exponential_hand_value() {
        let s = Schedule::Exponential {
            lr0: 0.1,
            gamma: 0.99,
        };
        assert!((s.lr_at(2, 100) - 0.09801).abs() < 1e-12);
    }
}
