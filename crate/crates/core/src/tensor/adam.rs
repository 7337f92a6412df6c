//! Adam optimizer with bias correction.

use crate::error::{HecoError, Result};
use crate::tensor::matrix::Matrix;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter first/second moment estimates plus the shared step counter.
/// Moments are keyed by a caller-chosen slot so a training phase can update a
/// subset of parameters while others stay frozen.
#[derive(Debug, Clone)]
pub struct AdamState {
    cfg: AdamConfig,
    t: u64,
    moments: Vec<Option<(Matrix, Matrix)>>,
}

impl AdamState {
    pub fn new(cfg: AdamConfig) -> Self {
        AdamState {
            cfg,
            t: 0,
            moments: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn config(&self) -> AdamConfig {
        self.cfg
    }

    /// Advance the step counter; call once before updating the parameters
    /// that participate in this step.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    /// Apply the Adam update for one parameter.
    pub fn update(&mut self, slot: usize, param: &mut Matrix, grad: &Matrix) -> Result<()> {
        if self.t == 0 {
            return Err(HecoError::Contract(
                "adam update before begin_step".into(),
            ));
        }
        if param.shape() != grad.shape() {
            return Err(HecoError::Shape {
                op: "adam_update",
                detail: format!("param {:?} vs grad {:?}", param.shape(), grad.shape()),
            });
        }
        if !grad.all_finite() {
            return Err(HecoError::Numeric { op: "adam_update" });
        }
        if slot >= self.moments.len() {
            self.moments.resize(slot + 1, None);
        }
        let (rows, cols) = param.shape();
        let (m, v) = self.moments[slot]
            .get_or_insert_with(|| (Matrix::zeros(rows, cols), Matrix::zeros(rows, cols)));
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let (md, vd, pd, gd) = (
            m.as_mut_slice(),
            v.as_mut_slice(),
            param.as_mut_slice(),
            grad.as_slice(),
        );
        for i in 0..gd.len() {
            let g = gd[i];
            md[i] = beta1 * md[i] + (1.0 - beta1) * g;
            vd[i] = beta2 * vd[i] + (1.0 - beta2) * g * g;
            let m_hat = md[i] / bc1;
            let v_hat = vd[i] / bc2;
            pd[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// One full Adam step over a parameter list (slot = index in the slice).
pub fn adam_step(params: &mut [Matrix], grads: &[Matrix], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() {
        return Err(HecoError::Contract(format!(
            "adam_step: {} params vs {} grads",
            params.len(),
            grads.len()
        )));
    }
    state.begin_step();
    for (slot, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        state.update(slot, p, g)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut params = vec![Matrix::scalar(1.0)];
        let grads = vec![Matrix::scalar(1.0)];
        let mut state = AdamState::new(AdamConfig::with_lr(0.1));
        adam_step(&mut params, &grads, &mut state).unwrap();
        // m_hat = v_hat = 1 after bias correction, so the step is -lr/(1+eps).
        assert!((params[0].get(0, 0) - 0.9).abs() < 1e-8);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = vec![Matrix::filled(2, 2, 3.0)];
        let grads = vec![Matrix::zeros(2, 2)];
        let mut state = AdamState::new(AdamConfig::default());
        adam_step(&mut params, &grads, &mut state).unwrap();
        assert_eq!(params[0], Matrix::filled(2, 2, 3.0));
    }

    #[test]
    fn identical_runs_are_identical() {
        let run = || {
            let mut params = vec![Matrix::from_rows(&[vec![1.0, -0.5]]).unwrap()];
            let mut state = AdamState::new(AdamConfig::with_lr(0.01));
            for step in 0..10 {
                let g = Matrix::from_rows(&[vec![0.3 * (step as f64 + 1.0), -0.2]]).unwrap();
                adam_step(&mut params, &[g], &mut state).unwrap();
            }
            params.remove(0)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut params = vec![Matrix::scalar(1.0)];
        let grads = vec![Matrix::scalar(f64::NAN)];
        let mut state = AdamState::new(AdamConfig::default());
        assert!(adam_step(&mut params, &grads, &mut state).is_err());
    }
}
