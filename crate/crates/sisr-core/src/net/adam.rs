//! Bias-corrected ADAM over a graph's parameter set.

use super::graph::Graph;
use super::tensor::{Scalar, Tensor};
use crate::parallel;
use crate::{Error, Result};

/// Update chunk for the elementwise parameter sweep.
const EW_CHUNK: usize = 1 << 14;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 2e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if !ok {
            return Err(Error::InvalidParameter(format!("bad ADAM hyperparameters: {self:?}")));
        }
        Ok(())
    }
}

/// Optimizer state: step count plus first/second moment buffers, one pair
/// per parameter in the graph's declaration order.
pub struct Adam<T> {
    cfg: AdamConfig,
    t: u64,
    moments: Vec<(Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig) -> Result<Adam<T>> {
        cfg.validate()?;
        Ok(Adam { cfg, t: 0, moments: Vec::new() })
    }

    /// Rebuilds an optimizer mid-run (checkpoint resume).
    pub fn from_parts(cfg: AdamConfig, t: u64, moments: Vec<(Tensor<T>, Tensor<T>)>) -> Result<Adam<T>> {
        cfg.validate()?;
        Ok(Adam { cfg, t, moments })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    /// Completed steps.
    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> &[(Tensor<T>, Tensor<T>)] {
        &self.moments
    }

    /// Applies one update from the gradients currently held by `graph`'s
    /// parameters. Every parameter must carry a gradient (run `backward` on
    /// a loss that covers them all first).
    pub fn step(&mut self, graph: &mut Graph<T>) -> Result<()> {
        let params = graph.param_ids();
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|&p| {
                    let dims = graph.value(p).expect("params always hold a value").dims().to_vec();
                    (Tensor::zeros(&dims), Tensor::zeros(&dims))
                })
                .collect();
        }
        if self.moments.len() != params.len() {
            return Err(Error::OptimizerMismatch {
                index: self.moments.len().min(params.len()),
                detail: format!("{} moment pairs for {} parameters", self.moments.len(), params.len()),
            });
        }
        self.t += 1;
        let bc1 = 1.0 - self.cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.cfg.beta2.powi(self.t as i32);
        let lr = T::from_f64(self.cfg.lr);
        let (b1, b2) = (T::from_f64(self.cfg.beta1), T::from_f64(self.cfg.beta2));
        let (c1, c2) = (T::from_f64(1.0 - self.cfg.beta1), T::from_f64(1.0 - self.cfg.beta2));
        let (ibc1, ibc2) = (T::from_f64(1.0 / bc1), T::from_f64(1.0 / bc2));
        let eps = T::from_f64(self.cfg.eps);

        for (i, &pid) in params.iter().enumerate() {
            let (value, grad) = graph.param_value_and_grad(pid)?;
            let grad = grad.ok_or_else(|| Error::OptimizerMismatch {
                index: i,
                detail: "parameter has no gradient (backward not run over it)".into(),
            })?;
            let (m, v) = &mut self.moments[i];
            if m.dims() != value.dims() {
                return Err(Error::OptimizerMismatch {
                    index: i,
                    detail: format!("moment dims {:?} vs parameter dims {:?}", m.dims(), value.dims()),
                });
            }
            parallel::for_each_zip4_mut(
                value.data_mut(),
                m.data_mut(),
                v.data_mut(),
                grad.data(),
                EW_CHUNK,
                |pv, mv, vv, gv| {
                    for j in 0..pv.len() {
                        let g = gv[j];
                        mv[j] = b1 * mv[j] + c1 * g;
                        vv[j] = b2 * vv[j] + c2 * g * g;
                        let mhat = mv[j] * ibc1;
                        let vhat = vv[j] * ibc2;
                        pv[j] -= lr * mhat / (vhat.sqrt() + eps);
                    }
                },
            );
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::tensor::Tensor;

    /// One-parameter graph with its gradient injected by running backward
    /// over logcosh against a target that produces the wanted d.
    fn graph_with_grad(value: f64, target: f64) -> (Graph<f64>, crate::net::graph::NodeId) {
        let mut g: Graph<f64> = Graph::new();
        let p = g.param("p", Tensor::from_vec(&[1, 1, 1, 1], vec![value]).unwrap());
        let t = g.input(1);
        g.bind(t, Tensor::from_vec(&[1, 1, 1, 1], vec![target]).unwrap()).unwrap();
        let loss = g.logcosh(p, t).unwrap();
        g.forward(&[loss]).unwrap();
        g.backward(loss).unwrap();
        (g, p)
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let (mut g, p) = graph_with_grad(0.25, 0.25); // d = 0 -> grad 0
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        opt.step(&mut g).unwrap();
        assert_eq!(g.value(p).unwrap().data()[0], 0.25);
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        // with nonzero grad g, step 1 gives m_hat = g, v_hat = g^2, so the
        // update is lr * g / (|g| + eps) which is lr in magnitude
        let (mut g, p) = graph_with_grad(5.0, 0.0); // grad = tanh(5) ~ 0.9999
        let cfg = AdamConfig::default();
        let mut opt = Adam::new(cfg).unwrap();
        opt.step(&mut g).unwrap();
        let moved = 5.0 - g.value(p).unwrap().data()[0];
        assert!((moved - cfg.lr).abs() < cfg.lr * 1e-6, "moved {moved}");
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn identical_grads_and_state_evolve_identically() {
        let mut g: Graph<f64> = Graph::new();
        let a = g.param("a", Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap());
        let b = g.param("b", Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap());
        let sum = g.add(a, b).unwrap();
        let t = g.input(1);
        g.bind(t, Tensor::from_vec(&[1, 1, 1, 1], vec![0.0]).unwrap()).unwrap();
        let loss = g.logcosh(sum, t).unwrap();
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        for _ in 0..17 {
            g.forward(&[loss]).unwrap();
            g.backward(loss).unwrap();
            opt.step(&mut g).unwrap();
            assert_eq!(g.value(a).unwrap().data()[0].to_bits(), g.value(b).unwrap().data()[0].to_bits());
        }
    }

    #[test]
    fn hyperparameter_validation() {
        assert!(Adam::<f32>::new(AdamConfig { lr: 0.0, ..Default::default() }).is_err());
        assert!(Adam::<f32>::new(AdamConfig { beta1: 1.0, ..Default::default() }).is_err());
        assert!(Adam::<f32>::new(AdamConfig { beta2: -0.1, ..Default::default() }).is_err());
        assert!(Adam::<f32>::new(AdamConfig { eps: 0.0, ..Default::default() }).is_err());
    }

    #[test]
    fn moment_shape_mismatch_is_rejected() {
        let (mut g, _) = graph_with_grad(1.0, 0.0);
        let bad = vec![(Tensor::<f64>::zeros(&[2]), Tensor::zeros(&[2]))];
        let mut opt = Adam::from_parts(AdamConfig::default(), 3, bad).unwrap();
        assert!(matches!(opt.step(&mut g), Err(Error::OptimizerMismatch { .. })));
    }
}
