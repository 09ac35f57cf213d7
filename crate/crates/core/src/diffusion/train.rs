use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::frame::FloatPlanes;

use super::net::DenoiserParams;
use super::schedule::{forward_diffuse, NoiseSchedule};
use super::Real;

/// One training example: clean frame, its condition, a step and the injected noise.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionExample<R> {
    pub x0: FloatPlanes<R>,
    pub c: FloatPlanes<R>,
    pub t: usize,
    pub eps: FloatPlanes<R>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DiffusionBatch<R> {
    pub examples: Vec<DiffusionExample<R>>,
}

impl<R: Real> DiffusionBatch<R> {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    fn validate(&self, schedule: &NoiseSchedule) -> Result<()> {
        if self.examples.is_empty() {
            return Err(Error::EmptyInput("training batch is empty"));
        }
        for (i, ex) in self.examples.iter().enumerate() {
            if !ex.x0.same_shape(&ex.c) || !ex.x0.same_shape(&ex.eps) {
                return Err(Error::Shape(format!("example {i}: x0, c and eps must share a shape")));
            }
            if ex.t == 0 || ex.t > schedule.steps() {
                return Err(Error::InvalidArgument(format!("example {i}: step {} outside 1..={}", ex.t, schedule.steps())));
            }
        }
        Ok(())
    }
}

/// Batch loss `mean_b ‖ε − ε_θ(x_t, t, c)‖²` and its gradient with respect to θ.
///
/// Per-example work may run in parallel; gradients are summed in batch order and
/// per-example losses are summed in sorted order, so the loss does not depend on
/// how the batch is permuted.
pub fn loss_and_grad<R: Real>(params: &DenoiserParams<R>, batch: &DiffusionBatch<R>, schedule: &NoiseSchedule, exec: Exec) -> Result<(f64, Vec<R>)> {
    batch.validate(schedule)?;
    let scale = R::from_f64(2.0 / batch.len() as f64);
    let per_example = exec.map(&batch.examples, |ex| -> Result<(f64, Vec<R>)> {
        let x_t = forward_diffuse(&ex.x0, ex.t, &ex.eps, schedule)?;
        let (out, tape) = params.forward(&x_t, ex.t, &ex.c, true)?;
        let diff: Vec<R> = out.data.iter().zip(&ex.eps.data).map(|(&o, &e)| o - e).collect();
        let loss = diff.iter().map(|d| d.as_f64() * d.as_f64()).sum::<f64>();
        let d_out: Vec<R> = diff.iter().map(|&d| d * scale).collect();
        let mut grad = vec![R::zero(); params.len()];
        params.backward(&tape.expect("tape requested"), &x_t, &d_out, &mut grad);
        Ok((loss, grad))
    });
    let mut losses = Vec::with_capacity(batch.len());
    let mut total = vec![R::zero(); params.len()];
    for item in per_example {
        let (loss, grad) = item?;
        losses.push(loss);
        total.iter_mut().zip(&grad).for_each(|(t, &g)| *t = *t + g);
    }
    losses.sort_by(f64::total_cmp);
    let loss = losses.iter().sum::<f64>() / batch.len() as f64;
    Ok((loss, total))
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<R> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<R>,
    v: Vec<R>,
    step: u64,
}

impl<R: Real> Adam<R> {
    pub fn new(len: usize, lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![R::zero(); len], v: vec![R::zero(); len], step: 0 }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut [R], grad: &[R]) {
        assert_eq!(params.len(), self.m.len(), "optimizer state does not match parameters");
        self.step += 1;
        let (b1, b2) = (R::from_f64(self.beta1), R::from_f64(self.beta2));
        let c1 = 1.0 / (1.0 - self.beta1.powi(self.step as i32));
        let c2 = 1.0 / (1.0 - self.beta2.powi(self.step as i32));
        let (lr, eps) = (R::from_f64(self.lr), R::from_f64(self.eps));
        let (c1, c2) = (R::from_f64(c1), R::from_f64(c2));
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (R::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (R::one() - b2) * g * g;
            let m_hat = self.m[i] * c1;
            let v_hat = self.v[i] * c2;
            params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Parameters plus optimizer state; `training_step` must be called serially.
#[derive(Clone, Debug)]
pub struct Trainer<R> {
    pub params: DenoiserParams<R>,
    pub optimizer: Adam<R>,
}

impl<R: Real> Trainer<R> {
    pub fn new(params: DenoiserParams<R>, lr: f64) -> Self {
        let optimizer = Adam::new(params.len(), lr);
        Trainer { params, optimizer }
    }

    /// One Adam step on `batch`; returns the loss measured before the update.
    pub fn training_step(&mut self, batch: &DiffusionBatch<R>, schedule: &NoiseSchedule, exec: Exec) -> Result<f64> {
        let (loss, grad) = loss_and_grad(&self.params, batch, schedule, exec)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NumericalDivergence(format!("loss {loss} after {} steps", self.optimizer.steps_taken())));
        }
        self.optimizer.update(self.params.as_mut_slice(), &grad);
        Ok(loss)
    }
}
