//! Adam with coupled L2 weight decay.

use ndarray::{Array2, Zip};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OptimError {
    #[error("optimizer tracks {expected} tensors, got {got}")]
    TensorCount { expected: usize, got: usize },
    #[error("tensor {index}: shape {got:?} does not match optimizer state {expected:?}")]
    Shape {
        index: usize,
        expected: (usize, usize),
        got: (usize, usize),
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.5,
            beta2: 0.9,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one set of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Array2<f64>>,
    u: Vec<Array2<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[Array2<f64>]) -> Self {
        let zeros = || params.iter().map(|p| Array2::zeros(p.dim())).collect();
        Self {
            config,
            m: zeros(),
            u: zeros(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[Array2<f64>] {
        &self.m
    }

    pub fn second_moment(&self) -> &[Array2<f64>] {
        &self.u
    }

    /// One descent step. `decay[i]` is the L2 coefficient for tensor `i`; the
    /// effective gradient is `g + decay·θ`.
    pub fn step(
        &mut self,
        params: &mut [Array2<f64>],
        grads: &[Array2<f64>],
        decay: &[f64],
    ) -> Result<(), OptimError> {
        let n = self.m.len();
        for got in [params.len(), grads.len(), decay.len()] {
            if got != n {
                return Err(OptimError::TensorCount { expected: n, got });
            }
        }
        for (index, (p, g)) in params.iter().zip(grads).enumerate() {
            let expected = self.m[index].dim();
            for got in [p.dim(), g.dim()] {
                if got != expected {
                    return Err(OptimError::Shape {
                        index,
                        expected,
                        got,
                    });
                }
            }
        }

        self.t += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.t as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);

        for i in 0..n {
            let d = decay[i];
            Zip::from(&mut params[i])
                .and(&grads[i])
                .and(&mut self.m[i])
                .and(&mut self.u[i])
                .for_each(|theta, &g, m, u| {
                    let g = g + d * *theta;
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *u = beta2 * *u + (1.0 - beta2) * g * g;
                    let m_hat = *m / c1;
                    let u_hat = *u / c2;
                    *theta -= learning_rate * m_hat / (u_hat.sqrt() + eps);
                });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn cfg(lr: f64) -> AdamConfig {
        AdamConfig {
            learning_rate: lr,
            ..AdamConfig::default()
        }
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut params = vec![array![[1.0, -2.0]]];
        let mut st = AdamState::new(cfg(0.1), &params);
        st.step(&mut params, &[array![[0.0, 0.0]]], &[0.0]).unwrap();
        assert_eq!(params[0], array![[1.0, -2.0]]);
        assert_eq!(st.steps(), 1);
    }

    #[test]
    fn first_step_is_learning_rate_times_sign() {
        let mut params = vec![array![[0.0]]];
        let mut st = AdamState::new(cfg(0.1), &params);
        st.step(&mut params, &[array![[4.0]]], &[0.0]).unwrap();
        // m̂ = 4, û = 16 ⇒ Δ = −0.1·4/(4 + 1e-8)
        let expected = -0.1 * 4.0 / (4.0 + 1e-8);
        assert!((params[0][[0, 0]] - expected).abs() < 1e-15);
    }

    #[test]
    fn decay_only_step() {
        let mut params = vec![array![[1.0]]];
        let mut st = AdamState::new(cfg(1e-4), &params);
        st.step(&mut params, &[array![[0.0]]], &[0.01]).unwrap();
        let expected = 1.0 - 1e-4 * 0.01 / (0.01 + 1e-8);
        assert!((params[0][[0, 0]] - expected).abs() < 1e-15);
        assert!((params[0][[0, 0]] - 0.9999).abs() < 1e-9);
    }

    #[test]
    fn shape_and_count_errors() {
        let mut params = vec![array![[1.0, 2.0]]];
        let mut st = AdamState::new(cfg(0.1), &params);
        assert!(matches!(
            st.step(&mut params, &[array![[1.0]]], &[0.0]),
            Err(OptimError::Shape { index: 0, .. })
        ));
        assert!(matches!(
            st.step(&mut params, &[], &[0.0]),
            Err(OptimError::TensorCount { .. })
        ));
        assert_eq!(st.steps(), 0);
    }

    #[test]
    fn second_moment_stays_nonnegative() {
        let mut params = vec![array![[0.3, -0.3, 1.0]]];
        let mut st = AdamState::new(cfg(0.01), &params);
        for k in 0..20 {
            let s = if k % 2 == 0 { 1.0 } else { -3.0 };
            st.step(&mut params, &[array![[s, -s, 0.5 * s]]], &[0.01]).unwrap();
            assert!(st.second_moment()[0].iter().all(|&u| u >= 0.0));
        }
        assert_eq!(st.steps(), 20);
    }
}
