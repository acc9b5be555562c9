use serde::{Deserialize, Serialize};

use super::{FlatGradient, Network};
use crate::error::{Error, Result};

/// Momentum used when a config does not set one.
pub const DEFAULT_MOMENTUM: f64 = 0.9;

/// Stochastic gradient descent with heavy-ball momentum:
/// `v ← momentum·v + g`, `θ ← θ − lr·v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64, net: &Network) -> Result<Self> {
        if !(learning_rate > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {learning_rate}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        Ok(Self {
            learning_rate,
            momentum,
            velocity: vec![0.0; net.param_count()],
        })
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }

    pub fn step(&mut self, net: &mut Network, grad: &FlatGradient) -> Result<()> {
        if grad.len() != net.param_count() || self.velocity.len() != net.param_count() {
            return Err(Error::Shape {
                what: "gradient for SGD step",
                expected: net.param_count(),
                got: grad.len(),
            });
        }
        let (lr, m) = (self.learning_rate, self.momentum);
        for ((theta, v), g) in net.params_mut().iter_mut().zip(&mut self.velocity).zip(grad.as_slice()) {
            *v = m * *v + g;
            *theta -= lr * *v;
        }
        Ok(())
    }
}
