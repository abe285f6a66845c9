//! Named parameter tensors with gradient slots.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::Array2;
use rand::Rng;

use super::NnError;

static NEXT_UID: AtomicU64 = AtomicU64::new(1);

fn fresh_uid() -> u64 {
    NEXT_UID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug)]
pub struct ParamStore {
    uid: u64,
    names: Vec<String>,
    values: Vec<Array2<f64>>,
    grads: Vec<Array2<f64>>,
    index: HashMap<String, usize>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

/// Cloning yields an independent store with its own identity, so a clone
/// (e.g. a target network) never receives gradients recorded for the
/// original.
impl Clone for ParamStore {
    fn clone(&self) -> Self {
        Self {
            uid: fresh_uid(),
            names: self.names.clone(),
            values: self.values.clone(),
            grads: self.grads.clone(),
            index: self.index.clone(),
        }
    }
}

impl PartialEq for ParamStore {
    fn eq(&self, other: &Self) -> bool {
        self.names == other.names && self.values == other.values
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            uid: fresh_uid(),
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn uid(&self) -> u64 {
        self.uid
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn add(&mut self, name: &str, value: Array2<f64>) -> Result<ParamId, NnError> {
        if self.index.contains_key(name) {
            return Err(NnError::DuplicateName(name.to_string()));
        }
        let id = self.values.len();
        self.grads.push(Array2::zeros(value.dim()));
        self.values.push(value);
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    /// Adds a `rows×cols` tensor drawn from `U(−bound, bound)`.
    pub fn add_uniform<R: Rng>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        bound: f64,
        rng: &mut R,
    ) -> Result<ParamId, NnError> {
        let v = Array2::from_shape_fn((rows, cols), |_| {
            if bound > 0.0 {
                rng.gen_range(-bound..bound)
            } else {
                0.0
            }
        });
        self.add(name, v)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Array2<f64> {
        &self.grads[id.0]
    }

    pub fn add_grad(&mut self, id: ParamId, g: &Array2<f64>) {
        self.grads[id.0] += g;
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    fn check_layout(&self, other: &ParamStore) -> Result<(), NnError> {
        if self.names != other.names
            || self
                .values
                .iter()
                .zip(&other.values)
                .any(|(a, b)| a.dim() != b.dim())
        {
            return Err(NnError::ShapeMismatch("parameter stores have different layouts".into()));
        }
        Ok(())
    }

    /// `self ← τ·online + (1 − τ)·self`.
    pub fn polyak_update(&mut self, online: &ParamStore, tau: f64) -> Result<(), NnError> {
        self.check_layout(online)?;
        for (t, o) in self.values.iter_mut().zip(&online.values) {
            t.zip_mut_with(o, |t, &o| *t = tau * o + (1.0 - tau) * *t);
        }
        Ok(())
    }

    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<(), NnError> {
        self.polyak_update(other, 1.0)
    }
}

/// Adam optimizer state for one [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Array2<f64>> = store.values.iter().map(|v| Array2::zeros(v.dim())).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update from the gradients currently held in `store`.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<(), NnError> {
        if self.m.len() != store.values.len()
            || self.m.iter().zip(&store.values).any(|(m, v)| m.dim() != v.dim())
        {
            return Err(NnError::ShapeMismatch("adam state does not match parameters".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for i in 0..store.values.len() {
            let g = &store.grads[i];
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            ndarray::Zip::from(&mut store.values[i])
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let mh = *m / c1;
                    let vh = *v / c2;
                    *p -= lr * mh / (vh.sqrt() + eps);
                });
        }
        Ok(())
    }
}
