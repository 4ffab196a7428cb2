use super::ModelOutput;
use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

/// Ground-truth waveforms for one clip. Either may be absent for single-task training.
#[derive(Clone, Debug)]
pub struct Targets<'a, S = f32> {
    pub pulse: Option<&'a Tensor<S>>,
    pub resp: Option<&'a Tensor<S>>,
}

/// Loss value with its gradients w.r.t. the predicted waveforms.
#[derive(Clone, Debug)]
pub struct LossGrad<S> {
    pub loss: f64,
    pub pulse: Option<Tensor<S>>,
    pub resp: Option<Tensor<S>>,
}

fn mse_term<S: Scalar>(pred: &Tensor<S>, truth: &Tensor<S>, weight: f64, what: &str) -> Result<(f64, Tensor<S>)> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{what}: prediction has {} samples, truth has {}",
            pred.len(),
            truth.len()
        )));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = Tensor::from_fn(&[pred.len()], |i| {
        let d = pred.data()[i].as_f64() - truth.data()[i].as_f64();
        loss += d * d;
        S::of(2.0 * weight * d / n)
    });
    Ok((weight * loss / n, grad))
}

/// `alpha * mean((p - p')^2) + beta * mean((r - r')^2)` with gradients.
///
/// A term whose prediction or target is absent is dropped, so single-task
/// models reduce to one MSE.
pub fn loss_multitask_grad<S: Scalar>(
    pred: &ModelOutput<S>,
    truth: &Targets<'_, S>,
    alpha: f64,
    beta: f64,
) -> Result<LossGrad<S>> {
    let mut out = LossGrad {
        loss: 0.0,
        pulse: None,
        resp: None,
    };
    if let (Some(p), Some(t)) = (&pred.pulse, truth.pulse) {
        let (l, g) = mse_term(p, t, alpha, "pulse")?;
        out.loss += l;
        out.pulse = Some(g);
    }
    if let (Some(r), Some(t)) = (&pred.resp, truth.resp) {
        let (l, g) = mse_term(r, t, beta, "respiration")?;
        out.loss += l;
        out.resp = Some(g);
    }
    Ok(out)
}

pub fn loss_multitask<S: Scalar>(pred: &ModelOutput<S>, truth: &Targets<'_, S>, alpha: f64, beta: f64) -> Result<f64> {
    Ok(loss_multitask_grad(pred, truth, alpha, beta)?.loss)
}
