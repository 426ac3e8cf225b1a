use alloc::format;
use alloc::vec::Vec;

use super::{ParamGrads, ParamStore};
use crate::{Error, Real, Result};

/// Adam hyper-parameters and the warm-up schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
    pub warmup_steps: u64,
    pub peak_lr: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.98,
            weight_decay: 1e-9,
            eps: 1e-8,
            warmup_steps: 1000,
            peak_lr: 1e-3,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !open_unit(self.beta1) || !open_unit(self.beta2) {
            return Err(Error::InvalidConfig(format!(
                "betas must lie in (0, 1): {} {}",
                self.beta1, self.beta2
            )));
        }
        if self.warmup_steps == 0 {
            return Err(Error::InvalidConfig(
                "warmup_steps must be at least 1".into(),
            ));
        }
        if !(self.peak_lr > 0.0 && self.eps > 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig(
                "peak_lr and eps must be positive, weight_decay non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Linear warm-up to `peak_lr` over `warmup_steps`, then inverse square-root
/// decay: `peak_lr * min(step / warmup, sqrt(warmup / step))`.
pub fn noam_lr(step: u64, cfg: &OptimizerConfig) -> f64 {
    let s = step.max(1) as f64;
    let w = cfg.warmup_steps as f64;
    cfg.peak_lr * (s / w).min(libm::sqrt(w / s))
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub step: u64,
    pub m: Vec<Vec<F>>,
    pub v: Vec<Vec<F>>,
}

/// Adam with bias correction and L2 weight decay folded into the gradient.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    cfg: OptimizerConfig,
    state: AdamState<F>,
}

impl<F: Real> Adam<F> {
    pub fn new(cfg: OptimizerConfig, store: &ParamStore<F>) -> Result<Self> {
        cfg.validate()?;
        let zeros = || {
            store
                .params()
                .map(|(_, t)| alloc::vec![F::zero(); t.numel()])
                .collect::<Vec<_>>()
        };
        Ok(Self {
            cfg,
            state: AdamState {
                step: 0,
                m: zeros(),
                v: zeros(),
            },
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn state(&self) -> &AdamState<F> {
        &self.state
    }

    /// Learning rate the next [`Adam::step_scheduled`] call will use.
    pub fn next_lr(&self) -> f64 {
        noam_lr(self.state.step + 1, &self.cfg)
    }

    /// One update at the scheduled learning rate; returns the rate used.
    pub fn step_scheduled(
        &mut self,
        store: &mut ParamStore<F>,
        grads: &ParamGrads<F>,
    ) -> Result<f64> {
        let lr = self.next_lr();
        self.step(store, grads, lr)?;
        Ok(lr)
    }

    /// One update at learning rate `lr`. Parameters without a gradient are
    /// left untouched (their moments do not decay either).
    pub fn step(
        &mut self,
        store: &mut ParamStore<F>,
        grads: &ParamGrads<F>,
        lr: f64,
    ) -> Result<()> {
        if grads.len() != store.len() || self.state.m.len() != store.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} parameters, store has {}, gradients {}",
                self.state.m.len(),
                store.len(),
                grads.len()
            )));
        }
        for id in store.ids() {
            if let Some(g) = &grads[id.index()] {
                if g.len() != store.param(id).numel() || self.state.m[id.index()].len() != g.len() {
                    return Err(Error::Shape(format!(
                        "gradient size mismatch for `{}`",
                        store.param_name(id)
                    )));
                }
            }
        }
        self.state.step += 1;
        let t = self.state.step as i32;
        let c = &self.cfg;
        let bc1 = 1.0 - libm::pow(c.beta1, f64::from(t));
        let bc2 = 1.0 - libm::pow(c.beta2, f64::from(t));
        for id in store.ids() {
            let Some(g) = &grads[id.index()] else {
                continue;
            };
            let m = &mut self.state.m[id.index()];
            let v = &mut self.state.v[id.index()];
            let theta = store.param_mut(id).data_mut();
            for i in 0..theta.len() {
                let p = theta[i].as_f64();
                let gi = g[i].as_f64() + c.weight_decay * p;
                let mi = c.beta1 * m[i].as_f64() + (1.0 - c.beta1) * gi;
                let vi = c.beta2 * v[i].as_f64() + (1.0 - c.beta2) * gi * gi;
                m[i] = F::from_f64(mi);
                v[i] = F::from_f64(vi);
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                theta[i] = F::from_f64(p - lr * mhat / (libm::sqrt(vhat) + c.eps));
            }
        }
        Ok(())
    }
}
