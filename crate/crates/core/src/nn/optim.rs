use crate::error::{Error, Result};

use super::mlp::{Gradients, MlpModel};

/// SGD with momentum and L2 weight decay on weights (biases are not decayed).
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Gradients,
}

impl OptimizerState {
    pub fn new(
        model: &MlpModel,
        learning_rate: f64,
        momentum: f64,
        weight_decay: f64,
    ) -> Result<Self> {
        if !learning_rate.is_finite() || learning_rate < 0.0 {
            return Err(Error::param(format!(
                "learning rate must be >= 0, got {learning_rate}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::param(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        if !weight_decay.is_finite() || weight_decay < 0.0 {
            return Err(Error::param(format!(
                "weight decay must be >= 0, got {weight_decay}"
            )));
        }
        Ok(Self {
            learning_rate,
            momentum,
            weight_decay,
            velocity: Gradients::zeros_like(model),
        })
    }

    pub fn velocity(&self) -> &Gradients {
        &self.velocity
    }
}

/// `v <- mu v + (g + lambda w)`, `w <- w - lr v`.
///
/// Non-finite gradients abort the step before anything is modified.
pub fn sgd_momentum_step(
    model: &mut MlpModel,
    grads: &Gradients,
    state: &mut OptimizerState,
) -> Result<()> {
    if grads.layers.len() != model.layers().len()
        || grads
            .layers
            .iter()
            .zip(model.layers())
            .any(|(g, l)| g.weight.shape() != l.weight.shape() || g.bias.len() != l.bias.len())
    {
        return Err(Error::input(
            "gradient shapes do not mirror model parameters",
        ));
    }
    if !grads.is_finite() {
        let bad = grads
            .layers
            .iter()
            .position(|g| !g.weight.is_finite() || !g.bias.iter().all(|v| v.is_finite()))
            .unwrap_or(0);
        return Err(Error::NonFinite(format!(
            "gradient of layer {bad}; training diverged"
        )));
    }
    let (lr, mu, wd) = (state.learning_rate, state.momentum, state.weight_decay);
    for ((layer, g), v) in model
        .layers_mut()
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut state.velocity.layers)
    {
        for ((w, &gw), vw) in layer
            .weight
            .as_mut_slice()
            .iter_mut()
            .zip(g.weight.as_slice())
            .zip(v.weight.as_mut_slice())
        {
            *vw = mu * *vw + (gw + wd * *w);
            *w -= lr * *vw;
        }
        for ((b, &gb), vb) in layer.bias.iter_mut().zip(&g.bias).zip(&mut v.bias) {
            *vb = mu * *vb + gb;
            *b -= lr * *vb;
        }
    }
    Ok(())
}
