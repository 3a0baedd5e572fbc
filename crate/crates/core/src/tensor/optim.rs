use serde::{Deserialize, Serialize};

use super::array::{Real, Tensor};
use super::params::{Gradients, ParameterSet};
use super::TensorError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 3e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

impl AdamWConfig {
    pub fn with_lr(self, lr: f64) -> Self {
        Self { lr, ..self }
    }

    fn validate(&self) -> Result<(), TensorError> {
        let ok = self.lr >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(TensorError::InvalidHyperparameter)
        }
    }
}

/// Moment estimates for decoupled-weight-decay Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState<T> {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> AdamWState<T> {
    pub fn new(params: &ParameterSet<T>, config: AdamWConfig) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(_, t)| Tensor::zeros(t.shape()))
                .collect()
        };
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Applies one update: `p ← p·(1 − lr·wd) − lr·m̂/(√v̂ + eps)`.
    pub fn step(
        &mut self,
        params: &mut ParameterSet<T>,
        grads: &Gradients<T>,
    ) -> Result<(), TensorError> {
        self.config.validate()?;
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(TensorError::ShapeMismatch {
                op: "adamw",
                expected: vec![params.len()],
                got: vec![grads.len()],
            });
        }
        for (i, g) in grads.iter().enumerate() {
            if g.shape() != params.get(i).shape() || self.m[i].shape() != g.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "adamw",
                    expected: params.get(i).shape().to_vec(),
                    got: g.shape().to_vec(),
                });
            }
            if !g.is_finite() {
                return Err(TensorError::NonFinite("adamw gradient"));
            }
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let bc1 = T::lit(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = T::lit(1.0 - c.beta2.powi(self.step as i32));
        let lr = T::lit(c.lr);
        let decay = T::lit(1.0 - c.lr * c.weight_decay);
        let eps = T::lit(c.eps);
        for (i, g) in grads.iter().enumerate() {
            let p = params.get_mut(i).data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for j in 0..p.len() {
                let gj = g.data()[j];
                m[j] = b1 * m[j] + (T::one() - b1) * gj;
                v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] = p[j] * decay - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_set(w: f64) -> ParameterSet<f64> {
        let mut p = ParameterSet::new();
        p.insert("w", Tensor::scalar(w)).unwrap();
        p
    }

    fn grads_of(p: &ParameterSet<f64>, g: f64) -> Gradients<f64> {
        let mut grads = Gradients::zeros_like(p);
        grads.accumulate(0, &[g]);
        grads
    }

    #[test]
    fn zero_gradient_without_decay_leaves_params() {
        let mut p = scalar_set(0.7);
        let cfg = AdamWConfig::default().with_lr(0.1);
        let mut st = AdamWState::new(
            &p,
            AdamWConfig {
                weight_decay: 0.0,
                ..cfg
            },
        );
        for _ in 0..3 {
            let g = grads_of(&p, 0.0);
            st.step(&mut p, &g).unwrap();
        }
        assert_eq!(p.get(0).data(), &[0.7]);
        assert_eq!(st.step, 3);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [3.0, -0.02] {
            let mut p = scalar_set(1.0);
            let cfg = AdamWConfig {
                weight_decay: 0.0,
                lr: 0.01,
                ..Default::default()
            };
            let mut st = AdamWState::new(&p, cfg);
            let gr = grads_of(&p, g);
            st.step(&mut p, &gr).unwrap();
            let moved = 1.0 - p.get(0).data()[0];
            assert!((moved - 0.01 * f64::signum(g)).abs() < 1e-6, "{moved}");
        }
    }

    #[test]
    fn descends_a_quadratic() {
        let mut p = scalar_set(1.0);
        let mut st = AdamWState::new(&p, AdamWConfig::default().with_lr(0.1));
        let mut trace = vec![1.0f64];
        for _ in 0..100 {
            let w = p.get(0).data()[0];
            let gr = grads_of(&p, 2.0 * w);
            st.step(&mut p, &gr).unwrap();
            trace.push(p.get(0).data()[0].abs());
        }
        // monotone while |w| is above the step size, then oscillates inward
        assert!(trace[..11].windows(2).all(|w| w[1] < w[0]), "{trace:?}");
        assert!(trace[100] < 0.01, "final |w| = {}", trace[100]);
    }

    #[test]
    fn rejects_non_finite_gradient() {
        let mut p = scalar_set(1.0);
        let mut st = AdamWState::new(&p, AdamWConfig::default());
        let g = grads_of(&p, f64::INFINITY);
        assert!(st.step(&mut p, &g).is_err());
        assert_eq!(st.step, 0);
    }
}
