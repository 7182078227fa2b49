//! Adam with bias correction. Moment buffers are keyed by store order, so the
//! update is deterministic given a deterministic gradient.

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

use super::tape::{Gradients, ParamId, ParamStore};
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

pub struct Adam<S> {
    cfg: AdamConfig,
    step: u64,
    m: Vec<Option<Tensor<S>>>,
    v: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(cfg: AdamConfig, store: &ParamStore<S>) -> Self {
        Adam {
            cfg,
            step: 0,
            m: (0..store.len()).map(|_| None).collect(),
            v: (0..store.len()).map(|_| None).collect(),
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    pub fn lr(&self) -> f64 {
        self.cfg.lr
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over every trainable entry. A trainable parameter without a
    /// gradient is an error: it means the graph silently detached somewhere.
    pub fn step(&mut self, store: &mut ParamStore<S>, grads: &Gradients<S>) -> Result<()> {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.cfg.beta1.powf(t);
        let bc2 = 1.0 - self.cfg.beta2.powf(t);
        let (b1, b2) = (S::of(self.cfg.beta1), S::of(self.cfg.beta2));
        let (one_m_b1, one_m_b2) = (S::of(1.0 - self.cfg.beta1), S::of(1.0 - self.cfg.beta2));
        let lr1 = S::of(self.cfg.lr / bc1);
        let inv_bc2 = S::of(1.0 / bc2);
        let eps = S::of(self.cfg.eps);

        for i in 0..store.len() {
            let pid = ParamId(i);
            if !store.is_trainable(pid) {
                continue;
            }
            let g = grads.get(pid).ok_or_else(|| {
                CoreError::Invalid(format!(
                    "no gradient for trainable parameter `{}`",
                    store.name(pid)
                ))
            })?;
            let p = store.get_mut(pid);
            if g.shape() != p.shape() {
                return Err(CoreError::Shape {
                    op: "adam_step",
                    detail: format!(
                        "gradient shape {:?} vs parameter shape {:?}",
                        g.shape(),
                        p.shape()
                    ),
                });
            }
            let m = self.m[i].get_or_insert_with(|| Tensor::zeros(p.shape()));
            let v = self.v[i].get_or_insert_with(|| Tensor::zeros(p.shape()));
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = b1 * *mv + one_m_b1 * gv;
                *vv = b2 * *vv + one_m_b2 * gv * gv;
                let vhat = *vv * inv_bc2;
                *pv = *pv - lr1 * *mv / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
