//! Parameter-update rules over a [`ParamStore`]'s accumulated gradients.

use indexmap::IndexMap;

use super::params::ParamStore;
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    /// Plain momentum-free gradient descent (keeps update semantics trivially
    /// auditable next to the gradient checks).
    Sgd,
    /// Adam with the usual defaults; used where raw-similarity losses make
    /// fixed-step descent unstable.
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = crate::error::Error;
    fn from_str(s: &str) -> crate::error::Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(crate::error::Error::Config(format!(
                "unknown optimizer `{other}` (sgd | adam)"
            ))),
        }
    }
}

impl OptimizerKind {
    pub fn label(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }
}

/// Stateful optimizer. Construct one per training run; call
/// [`Optimizer::apply`] after gradients have been accumulated for a step.
#[derive(Debug, Clone)]
pub struct Optimizer {
    lr: f64,
    kind: OptimizerKind,
    step: usize,
    first_moment: IndexMap<String, Tensor>,
    second_moment: IndexMap<String, Tensor>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Optimizer {
            lr,
            kind,
            step: 0,
            first_moment: IndexMap::new(),
            second_moment: IndexMap::new(),
        }
    }

    pub fn apply(&mut self, ps: &mut ParamStore) {
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => ps.sgd_step(self.lr),
            OptimizerKind::Adam => {
                let names: Vec<String> = ps.names().map(str::to_string).collect();
                let bc1 = 1.0 - BETA1.powi(self.step as i32);
                let bc2 = 1.0 - BETA2.powi(self.step as i32);
                for name in names {
                    let grad = ps.grad(&name).expect("param exists").clone();
                    let m = self
                        .first_moment
                        .entry(name.clone())
                        .or_insert_with(|| Tensor::zeros(grad.shape().to_vec()));
                    for (mi, gi) in m.data_mut().iter_mut().zip(grad.data()) {
                        *mi = BETA1 * *mi + (1.0 - BETA1) * gi;
                    }
                    let v = self
                        .second_moment
                        .entry(name.clone())
                        .or_insert_with(|| Tensor::zeros(grad.shape().to_vec()));
                    for (vi, gi) in v.data_mut().iter_mut().zip(grad.data()) {
                        *vi = BETA2 * *vi + (1.0 - BETA2) * gi * gi;
                    }
                    let m = &self.first_moment[&name];
                    let v = &self.second_moment[&name];
                    let p = ps.get_mut(&name).expect("param exists");
                    for ((pi, mi), vi) in p.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
                        let mhat = mi / bc1;
                        let vhat = vi / bc2;
                        *pi -= self.lr * mhat / (vhat.sqrt() + EPS);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_and_adam_move_against_gradient() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut ps = ParamStore::new(0);
            ps.insert("w", Tensor::vector(&[1.0, -1.0]));
            ps.accumulate_grad("w", &Tensor::vector(&[1.0, -1.0])).unwrap();
            let mut opt = Optimizer::new(kind, 0.1);
            opt.apply(&mut ps);
            let w = ps.get("w").unwrap().data();
            assert!(w[0] < 1.0, "{kind:?}");
            assert!(w[1] > -1.0, "{kind:?}");
        }
    }

    #[test]
    fn adam_steps_are_scale_normalized() {
        // wildly different gradient scales produce comparable step sizes
        let mut ps = ParamStore::new(0);
        ps.insert("w", Tensor::vector(&[0.0, 0.0]));
        ps.accumulate_grad("w", &Tensor::vector(&[1e3, 1e-3])).unwrap();
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.01);
        opt.apply(&mut ps);
        let w = ps.get("w").unwrap().data();
        assert!((w[0].abs() - 0.01).abs() < 1e-6);
        assert!((w[1].abs() - 0.01).abs() < 1e-6);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut ps = ParamStore::new(0);
        ps.insert("w", Tensor::vector(&[2.5]));
        ps.accumulate_grad("w", &Tensor::vector(&[7.0])).unwrap();
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.0);
        opt.apply(&mut ps);
        assert_eq!(ps.get("w").unwrap().data(), &[2.5]);
    }
}
