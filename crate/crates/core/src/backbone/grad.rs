//! Loss/gradient contract between the network and loss objectives.

use rand::Rng;

use super::net::{DropoutMode, TinyZoneNet};
use super::params::{Gradients, ParamSet};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Maps a batch of logits to a scalar loss and its gradient with respect to
/// those logits.
pub trait LossEvaluator {
    fn evaluate(&self, logits: &Tensor) -> Result<(f64, Tensor)>;

    fn value(&self, logits: &Tensor) -> Result<f64> {
        self.evaluate(logits).map(|(v, _)| v)
    }
}

#[derive(Debug, Clone)]
pub struct LossAndGrad {
    pub loss: f64,
    pub grads: Gradients,
}

/// Forward, evaluate, backprop. `rng` drives dropout; cloning it before the
/// call reproduces the same masks.
pub fn loss_and_grad(
    net: &TinyZoneNet,
    params: &ParamSet,
    inputs: &Tensor,
    evaluator: &dyn LossEvaluator,
    dropout: DropoutMode,
    rng: &mut impl Rng,
) -> Result<LossAndGrad> {
    let (logits, cache) = net.forward_train(params, inputs, dropout, rng)?;
    let (loss, dlogits) = evaluator.evaluate(&logits)?;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss(format!("loss evaluated to {loss}")));
    }
    if !dlogits.same_shape(&logits) {
        return Err(Error::ShapeMismatch("evaluator gradient shape".into()));
    }
    let grads = net.backward(params, &cache, &dlogits)?;
    Ok(LossAndGrad { loss, grads })
}

/// Loss only, for finite-difference probing.
pub fn loss_only(
    net: &TinyZoneNet,
    params: &ParamSet,
    inputs: &Tensor,
    evaluator: &dyn LossEvaluator,
    dropout: DropoutMode,
    rng: &mut impl Rng,
) -> Result<f64> {
    let logits = net.forward(params, inputs, dropout, rng)?;
    evaluator.value(&logits)
}
