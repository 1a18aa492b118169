use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OptimizerKind {
    Sgd,
    AdamW {
        beta1: f64,
        beta2: f64,
        eps: f64,
        weight_decay: f64,
    },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::AdamW {
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Minimizes: `step` takes the gradient of a loss.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    clip_norm: Option<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, clip_norm: Option<f64>, n_params: usize) -> Self {
        let moments = matches!(kind, OptimizerKind::AdamW { .. });
        Self {
            kind,
            lr,
            clip_norm,
            m: if moments { vec![0.0; n_params] } else { Vec::new() },
            v: if moments { vec![0.0; n_params] } else { Vec::new() },
            t: 0,
        }
    }

    /// Applies one update; returns the gradient norm before clipping.
    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) -> f64 {
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let scale = match self.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.t += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (x, g) in theta.iter_mut().zip(grad) {
                    *x -= self.lr * scale * g;
                }
            }
            OptimizerKind::AdamW {
                beta1,
                beta2,
                eps,
                weight_decay,
            } => {
                let bc1 = 1.0 - beta1.powi(self.t as i32);
                let bc2 = 1.0 - beta2.powi(self.t as i32);
                for i in 0..theta.len() {
                    let g = grad[i] * scale;
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    let update = (self.m[i] / bc1) / ((self.v[i] / bc2).sqrt() + eps);
                    theta[i] -= self.lr * (update + weight_decay * theta[i]);
                }
            }
        }
        norm
    }
}
