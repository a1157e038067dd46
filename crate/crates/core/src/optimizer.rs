//! ADAM with bias correction and the exponential moving average of generator
//! parameters used for evaluation.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::network::ParamStore;
use crate::tensor::{Precision, Tensor};

#[derive(Clone, Debug)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            alpha: 1e-4,
            beta1: 0.0,
            beta2: 0.9,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
    t: u64,
}

impl AdamState {
    /// Zero-moment state covering the trainable parameters of `params`.
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for name in params.trainable_names() {
            let shape = params.get(&name).expect("listed name").shape().to_vec();
            m.insert(name.clone(), Tensor::zeros(shape.clone()));
            v.insert(name, Tensor::zeros(shape));
        }
        AdamState { config, m, v, t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn second_moment(&self, name: &str) -> Option<&Tensor> {
        self.v.get(name)
    }

    /// Moment maps for checkpoint serialization.
    pub fn moments(&self) -> (&BTreeMap<String, Tensor>, &BTreeMap<String, Tensor>) {
        (&self.m, &self.v)
    }

    /// Rebuild from checkpointed moments and step counter.
    pub fn from_parts(
        config: AdamConfig,
        m: BTreeMap<String, Tensor>,
        v: BTreeMap<String, Tensor>,
        t: u64,
    ) -> Self {
        AdamState { config, m, v, t }
    }
}

/// One ADAM step over `params` (descent on the minimized loss; ascent on the
/// discriminator objective is realized upstream by negating its loss).
/// `grads` must cover exactly the trainable parameter set and be finite.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut ParamStore,
    grads: &BTreeMap<String, Tensor>,
    precision: Precision,
) -> Result<()> {
    let expected = params.trainable_names();
    if grads.len() != expected.len() || expected.iter().any(|n| !grads.contains_key(n)) {
        return Err(Error::InvalidArgument(format!(
            "gradient set {:?} does not match parameter set {:?}",
            grads.keys().collect::<Vec<_>>(),
            expected
        )));
    }
    for (name, g) in grads {
        if !g.all_finite() {
            return Err(Error::NonFinite {
                op: "adam_step",
                detail: format!("gradient for {name}"),
            });
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let AdamConfig {
        alpha,
        beta1,
        beta2,
        eps,
    } = state.config;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for name in expected {
        let g = &grads[&name];
        let m = state.m.get_mut(&name).expect("moment present");
        let v = state.v.get_mut(&name).expect("moment present");
        let p = params.get_mut(&name).expect("param present");
        for ((mi, vi), (pi, gi)) in m
            .data_mut()
            .iter_mut()
            .zip(v.data_mut())
            .zip(p.data_mut().iter_mut().zip(g.data()))
        {
            *mi = precision.round(beta1 * *mi + (1.0 - beta1) * gi);
            *vi = precision.round(beta2 * *vi + (1.0 - beta2) * gi * gi);
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *pi = precision.round(*pi - alpha * m_hat / (v_hat.sqrt() + eps));
        }
    }
    Ok(())
}

/// Shadow copy of the generator parameters updated as
/// shadow <- decay * shadow + (1 - decay) * params.
#[derive(Clone, Debug)]
pub struct EmaState {
    pub decay: f64,
    shadow: ParamStore,
}

impl EmaState {
    /// Start the shadow from the current parameters.
    pub fn new(decay: f64, params: &ParamStore) -> Self {
        EmaState {
            decay,
            shadow: params.clone(),
        }
    }

    pub fn shadow(&self) -> &ParamStore {
        &self.shadow
    }

    /// Rebuild from a checkpointed shadow store.
    pub fn from_shadow(decay: f64, shadow: ParamStore) -> Self {
        EmaState { decay, shadow }
    }
}

pub fn ema_update(ema: &mut EmaState, params: &ParamStore, precision: Precision) {
    let decay = ema.decay;
    for (name, shadow) in ema.shadow.iter_mut() {
        let live = params.get(name).expect("shadow shape matches live");
        for (s, p) in shadow.data_mut().iter_mut().zip(live.data()) {
            *s = precision.round(decay * *s + (1.0 - decay) * p);
        }
    }
}
