use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// `p ← p − lr·g`
    Sgd,
    /// Adaptive moments with bias correction.
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::invalid(format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl OptimizerState {
    /// `lr` must be finite and non-negative; zero freezes the parameters.
    pub fn new(kind: OptimizerKind, lr: f64) -> Result<Self> {
        if !lr.is_finite() || lr < 0.0 {
            return Err(Error::invalid(format!("learning rate must be >= 0, got {lr}")));
        }
        Ok(OptimizerState {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            first: Vec::new(),
            second: Vec::new(),
            step: 0,
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Dimension {
                op: "optimizer_step",
                left: vec![params.len()],
                right: vec![grads.len()],
            });
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::Dimension {
                    op: "optimizer_step",
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
        }
        if self.kind == OptimizerKind::Adam && self.first.is_empty() {
            self.first = grads.iter().map(|g| Tensor::zeros(g.shape().to_vec())).collect();
            self.second = self.first.clone();
        }
        if self.kind == OptimizerKind::Adam {
            for (m, g) in self.first.iter().zip(grads) {
                if m.shape() != g.shape() {
                    return Err(Error::Dimension {
                        op: "optimizer_step",
                        left: m.shape().to_vec(),
                        right: g.shape().to_vec(),
                    });
                }
            }
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (pi, gi) in p.data_mut().iter_mut().zip(g.data()) {
                        *pi -= self.lr * gi;
                    }
                }
            }
            OptimizerKind::Adam => {
                let t = self.step as i32;
                let c1 = 1.0 - self.beta1.powi(t);
                let c2 = 1.0 - self.beta2.powi(t);
                for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let m = self.first[k].data_mut();
                    let v = self.second[k].data_mut();
                    for (i, (pi, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                        v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                        let m_hat = m[i] / c1;
                        let v_hat = v[i] / c2;
                        *pi -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor {
        Tensor::vector(vec![v]).unwrap()
    }

    #[test]
    fn plain_rule_definition() {
        let mut opt = OptimizerState::new(OptimizerKind::Sgd, 0.1).unwrap();
        let mut p = scalar(1.0);
        opt.step(&mut [&mut p], &[scalar(0.5)]).unwrap();
        assert!((p.data()[0] - 0.95).abs() < 1e-15);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn zero_gradient_is_identity() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut opt = OptimizerState::new(kind, 0.1).unwrap();
            let mut p = Tensor::vector(vec![1.0, -2.0, 0.25]).unwrap();
            let before = p.clone();
            for _ in 0..3 {
                opt.step(&mut [&mut p], &[Tensor::zeros(vec![3])]).unwrap();
            }
            assert_eq!(p, before);
        }
    }

    #[test]
    fn quadratic_converges() {
        // f(w) = w², f'(w) = 2w; each plain step multiplies w by 0.8.
        let mut opt = OptimizerState::new(OptimizerKind::Sgd, 0.1).unwrap();
        let mut w = scalar(1.0);
        let mut steps = 0;
        while w.data()[0].abs() >= 1e-3 {
            let g = scalar(2.0 * w.data()[0]);
            opt.step(&mut [&mut w], &[g]).unwrap();
            steps += 1;
            assert!(steps <= 200);
        }
        assert_eq!(steps, 31);
    }

    #[test]
    fn adam_descends() {
        let mut opt = OptimizerState::new(OptimizerKind::Adam, 0.05).unwrap();
        let mut w = scalar(1.0);
        for _ in 0..200 {
            let g = scalar(2.0 * w.data()[0]);
            opt.step(&mut [&mut w], &[g]).unwrap();
        }
        assert!(w.data()[0].abs() < 0.1);
    }

    #[test]
    fn shape_mismatch_errors() {
        let mut opt = OptimizerState::new(OptimizerKind::Sgd, 0.1).unwrap();
        let mut p = scalar(1.0);
        assert!(opt.step(&mut [&mut p], &[Tensor::zeros(vec![2])]).is_err());
        assert!(opt.step(&mut [&mut p], &[]).is_err());
        assert!(OptimizerState::new(OptimizerKind::Sgd, -1.0).is_err());
    }
}
