//! Adam with bias correction, plus the inverse-square-root warmup schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState<S: Scalar> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor<S>>,
    v: Vec<Tensor<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(store: &ParamStore<S>, config: AdamConfig) -> Self {
        let zeros = || store.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }
}

/// One Adam update of every parameter from its stored gradient. Gradients
/// are consumed: each parameter's `grad` is cleared afterwards.
pub fn adam_step<S: Scalar>(store: &mut ParamStore<S>, state: &mut AdamState<S>) -> Result<()> {
    if let Some(p) = store.iter().find(|p| p.grad.is_none()) {
        return Err(Error::MissingGradient(p.name.clone()));
    }
    if state.m.len() != store.len() {
        return Err(Error::InvalidArgument(format!(
            "optimizer state tracks {} parameters, store has {}",
            state.m.len(),
            store.len()
        )));
    }
    state.step += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    let (b1, b2) = (S::of(beta1), S::of(beta2));
    let step_size = S::of(lr / bc1);
    let bc2_sqrt = S::of(bc2.sqrt());
    let eps = S::of(eps);
    for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
        let p = store.get_mut(id);
        let grad = p.grad.take().expect("checked above");
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (((w, &g), m), v) in p.value.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
            *m = b1 * *m + (S::one() - b1) * g;
            *v = b2 * *v + (S::one() - b2) * g * g;
            *w -= step_size * *m / (v.sqrt() / bc2_sqrt + eps);
        }
    }
    Ok(())
}

/// `factor · d_model^-0.5 · min(step^-0.5, step · warmup^-1.5)`, steps counted from 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarmupSchedule {
    pub d_model: usize,
    pub warmup_steps: usize,
    pub factor: f64,
}

impl WarmupSchedule {
    pub fn lr(&self, step: usize) -> f64 {
        let s = step.max(1) as f64;
        let w = self.warmup_steps.max(1) as f64;
        self.factor * (self.d_model as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(w: f64) -> ParamStore<f64> {
        let mut store = ParamStore::new();
        store.register("w", Tensor::scalar(w)).unwrap();
        store
    }

    fn set_grad(store: &mut ParamStore<f64>, g: f64) {
        let id = store.id("w").unwrap();
        store.get_mut(id).grad = Some(Tensor::scalar(g));
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut store = scalar_store(1.5);
        let mut st = AdamState::new(&store, AdamConfig::default());
        set_grad(&mut store, 0.0);
        adam_step(&mut store, &mut st).unwrap();
        assert_eq!(store.by_name("w").unwrap().value.item(), 1.5);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = g, v̂ = g², so the update is lr · g / (|g| + eps) ≈ lr.
        let mut store = scalar_store(0.0);
        let cfg = AdamConfig { lr: 0.01, ..Default::default() };
        let mut st = AdamState::new(&store, cfg);
        set_grad(&mut store, 1.0);
        adam_step(&mut store, &mut st).unwrap();
        let w = store.by_name("w").unwrap().value.item();
        assert!((w + 0.01).abs() < 1e-9, "w = {w}");
    }

    #[test]
    fn missing_gradient_names_the_parameter() {
        let mut store = scalar_store(0.0);
        let mut st = AdamState::new(&store, AdamConfig::default());
        let err = adam_step(&mut store, &mut st).unwrap_err();
        assert!(err.to_string().contains("`w`"), "{err}");
    }

    #[test]
    fn descends_a_quadratic() {
        // f(w) = (w - 3)^2, f'(w) = 2(w - 3)
        let mut store = scalar_store(0.0);
        let mut st = AdamState::new(&store, AdamConfig { lr: 0.1, ..Default::default() });
        let (mut w, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        let mut dist = Vec::new();
        for t in 1..=50 {
            let cur = store.by_name("w").unwrap().value.item();
            set_grad(&mut store, 2.0 * (cur - 3.0));
            adam_step(&mut store, &mut st).unwrap();
            let got = store.by_name("w").unwrap().value.item();

            let g = 2.0 * (w - 3.0);
            m = 0.9 * m + 0.1 * g;
            v = 0.98 * v + 0.02 * g * g;
            let (mh, vh) = (m / (1.0 - 0.9f64.powi(t)), v / (1.0 - 0.98f64.powi(t)));
            w -= 0.1 * mh / (vh.sqrt() + 1e-9);
            assert!((got - w).abs() < 1e-12, "step {t}: {got} vs {w}");
            dist.push((got - 3.0).abs());
        }
        // momentum overshoots near the optimum, so the per-window envelope is what shrinks
        let envelope: Vec<f64> = dist.chunks(10).map(|c| c.iter().cloned().fold(0.0, f64::max)).collect();
        assert!(envelope.windows(2).all(|p| p[1] < p[0]), "{envelope:?}");
    }

    #[test]
    fn warmup_peaks_at_warmup_step() {
        let s = WarmupSchedule { d_model: 64, warmup_steps: 400, factor: 1.0 };
        assert!(s.lr(399) < s.lr(400));
        assert!(s.lr(401) < s.lr(400));
        assert!((s.lr(400) - 64f64.powf(-0.5) * 400f64.powf(-0.5)).abs() < 1e-12);
    }
}
