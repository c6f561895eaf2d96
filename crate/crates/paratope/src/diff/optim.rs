//! Adam with bias correction and global-norm gradient clipping.

use std::collections::BTreeMap;

use super::params::{ParamStore, Tensor};
use super::{DiffError, DiffResult};
use crate::scalar::Scalar;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const DEFAULT_CLIP: f64 = 0.5;

#[derive(Debug, Clone, Default)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: BTreeMap<String, Vec<T>>,
    pub v: BTreeMap<String, Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new() -> Self {
        Self {
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Flatten into named tensors for checkpointing.
    pub fn to_tensors(&self, params: &ParamStore<T>) -> BTreeMap<String, Tensor<T>> {
        let mut out = BTreeMap::new();
        out.insert("__adam.step".to_string(), Tensor::scalar(T::from_f64_c(self.step as f64)));
        for (name, m) in &self.m {
            let t = params.get(name).expect("state for unknown param");
            out.insert(format!("__adam.m.{name}"), Tensor::new(t.rows, t.cols, m.clone()));
        }
        for (name, v) in &self.v {
            let t = params.get(name).expect("state for unknown param");
            out.insert(format!("__adam.v.{name}"), Tensor::new(t.rows, t.cols, v.clone()));
        }
        out
    }

    pub fn from_tensors(state: &BTreeMap<String, Tensor<T>>) -> Self {
        let mut out = Self::new();
        if let Some(s) = state.get("__adam.step") {
            out.step = s.data[0].to_f64_c() as u64;
        }
        for (name, t) in state {
            if let Some(p) = name.strip_prefix("__adam.m.") {
                out.m.insert(p.to_string(), t.data.clone());
            } else if let Some(p) = name.strip_prefix("__adam.v.") {
                out.v.insert(p.to_string(), t.data.clone());
            }
        }
        out
    }
}

/// One Adam update over every parameter present in `grads`.
pub fn adam_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &BTreeMap<String, Vec<T>>,
    state: &mut AdamState<T>,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> DiffResult<()> {
    for (name, g) in grads {
        if g.iter().any(|x| !x.is_finite()) {
            return Err(DiffError::NonFinite(format!("gradient for {name}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::from_f64_c(beta1);
    let b2 = T::from_f64_c(beta2);
    let lr_t = T::from_f64_c(lr);
    let eps_t = T::from_f64_c(eps);
    let bc1 = T::one() - b1.powi(t);
    let bc2 = T::one() - b2.powi(t);
    for (name, g) in grads {
        let tensor = params.get_mut(name)?;
        if tensor.len() != g.len() {
            return Err(DiffError::Shape {
                op: "adam_step",
                detail: format!("{name}: {} values vs {} grads", tensor.len(), g.len()),
            });
        }
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| vec![T::zero(); g.len()]);
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| vec![T::zero(); g.len()]);
        for i in 0..g.len() {
            m[i] = b1 * m[i] + (T::one() - b1) * g[i];
            v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            tensor.data[i] = tensor.data[i] - lr_t * m_hat / (v_hat.sqrt() + eps_t);
        }
    }
    Ok(())
}

/// Scale all gradients so the global L2 norm does not exceed `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm<T: Scalar>(grads: &mut BTreeMap<String, Vec<T>>, max_norm: f64) -> f64 {
    let mut sq = 0.0f64;
    for g in grads.values() {
        for &x in g {
            let v = x.to_f64_c();
            sq += v * v;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = T::from_f64_c(max_norm / norm);
        for g in grads.values_mut() {
            for x in g.iter_mut() {
                *x = *x * scale;
            }
        }
    }
    norm
}
