use std::collections::BTreeMap;

use super::Tensor;
use crate::error::{Error, Result};

/// A trainable tensor with its Adam moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub m: Tensor,
    pub v: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let m = Tensor::zeros(value.shape());
        let v = Tensor::zeros(value.shape());
        Self { value, m, v }
    }
}

/// Named parameters plus the optimiser step counter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Config(format!("parameter {name:?} registered twice")));
        }
        self.params.insert(name, Param::new(value));
        Ok(())
    }

    pub(crate) fn insert_param(&mut self, name: String, param: Param) {
        self.params.insert(name, param);
    }

    /// Moves every parameter of `other` into this store.
    pub fn merge(&mut self, other: ParamStore) -> Result<()> {
        for (name, p) in other.params {
            if self.params.contains_key(&name) {
                return Err(Error::Config(format!("parameter {name:?} registered twice")));
            }
            self.params.insert(name, p);
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::Config(format!("no parameter named {name:?}")))
    }

    pub fn value_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name).map(|p| &mut p.value)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Param> {
        self.params.remove(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    /// Keeps only parameters whose name starts with `prefix`.
    pub fn retain_prefix(&mut self, prefix: &str) {
        self.params.retain(|k, _| k.starts_with(prefix));
    }

    /// Copies the values (not the moments) whose names start with `from`
    /// into a fresh store, renaming the prefix to `to`.
    pub fn renamed(&self, from: &str, to: &str) -> ParamStore {
        let params = self
            .params
            .iter()
            .filter_map(|(k, p)| {
                k.strip_prefix(from)
                    .map(|rest| (format!("{to}{rest}"), Param::new(p.value.clone())))
            })
            .collect();
        ParamStore { params, step: 0 }
    }
}

/// Decoupled-weight-decay Adam.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm bound; `None` disables clipping.
    pub clip: Option<f64>,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            clip: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClipReport {
    pub norm_before: f64,
    pub norm_after: f64,
    pub clipped: bool,
}

/// L2 norm over all gradient entries together.
pub fn global_norm(grads: &BTreeMap<String, Tensor>) -> f64 {
    grads.values().map(Tensor::sq_norm).sum::<f64>().sqrt()
}

/// One AdamW update. Parameters without an entry in `grads` are treated as
/// having zero gradient (their moments still decay and weight decay applies).
pub fn adamw_step(
    store: &mut ParamStore,
    grads: &BTreeMap<String, Tensor>,
    opt: &AdamW,
) -> Result<ClipReport> {
    for (name, g) in grads {
        let p = store
            .params
            .get(name)
            .ok_or_else(|| Error::MissingGradient(format!("gradient for unknown parameter {name:?}")))?;
        if p.value.shape() != g.shape() {
            return Err(Error::shape(
                "adamw",
                format!("{name}: value {:?}, gradient {:?}", p.value.shape(), g.shape()),
            ));
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient(name.clone()));
        }
    }
    let norm_before = global_norm(grads);
    let scale = match opt.clip {
        Some(c) if norm_before > c => c / (norm_before + 1e-6),
        _ => 1.0,
    };

    store.step += 1;
    let t = store.step as i32;
    let bc1 = 1.0 - opt.beta1.powi(t);
    let bc2 = 1.0 - opt.beta2.powi(t);
    for (name, p) in store.params.iter_mut() {
        let g = grads.get(name);
        let Param { value, m, v } = p;
        for i in 0..value.len() {
            let gi = g.map_or(0.0, |g| g.data()[i] * scale);
            let mi = &mut m.data_mut()[i];
            *mi = opt.beta1 * *mi + (1.0 - opt.beta1) * gi;
            let mhat = *mi / bc1;
            let vi = &mut v.data_mut()[i];
            *vi = opt.beta2 * *vi + (1.0 - opt.beta2) * gi * gi;
            let vhat = *vi / bc2;
            let w = &mut value.data_mut()[i];
            *w -= opt.lr * opt.weight_decay * *w;
            *w -= opt.lr * mhat / (vhat.sqrt() + opt.eps);
        }
        if !value.is_finite() {
            return Err(Error::NonFiniteGradient(format!("{name} after update")));
        }
    }
    Ok(ClipReport {
        norm_before,
        norm_after: norm_before * scale,
        clipped: scale < 1.0,
    })
}
