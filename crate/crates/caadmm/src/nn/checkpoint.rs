//! Versioned JSON checkpoints of parameter stores and optimizer state.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::params::{Adam, ParamStore};
use super::NnError;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

impl TensorRecord {
    fn new(name: &str, a: &Array2<f64>) -> Self {
        Self {
            name: name.to_string(),
            shape: [a.nrows(), a.ncols()],
            values: a.iter().copied().collect(),
        }
    }

    fn to_array(&self) -> Result<Array2<f64>, NnError> {
        Array2::from_shape_vec((self.shape[0], self.shape[1]), self.values.clone())
            .map_err(|e| NnError::Checkpoint(format!("{}: {e}", self.name)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamRecord {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<TensorRecord>,
    pub v: Vec<TensorRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreRecord {
    pub name: String,
    pub params: Vec<TensorRecord>,
    pub adam: Option<AdamRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub kind: String,
    pub meta: BTreeMap<String, String>,
    pub stores: Vec<StoreRecord>,
    /// Free-form resumable state of whatever produced the checkpoint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<serde_json::Value>,
}

impl Checkpoint {
    pub fn new(kind: &str) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            kind: kind.to_string(),
            meta: BTreeMap::new(),
            stores: Vec::new(),
            state: None,
        }
    }

    pub fn push_store(&mut self, name: &str, store: &ParamStore, adam: Option<&Adam>) {
        let params = store
            .ids()
            .map(|id| TensorRecord::new(store.name(id), store.value(id)))
            .collect();
        let adam = adam.map(|a| AdamRecord {
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            step: a.step,
            m: a.m.iter().enumerate().map(|(i, m)| TensorRecord::new(&i.to_string(), m)).collect(),
            v: a.v.iter().enumerate().map(|(i, v)| TensorRecord::new(&i.to_string(), v)).collect(),
        });
        self.stores.push(StoreRecord {
            name: name.to_string(),
            params,
            adam,
        });
    }

    pub fn store(&self, name: &str) -> Result<&StoreRecord, NnError> {
        self.stores
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| NnError::Checkpoint(format!("missing store {name}")))
    }

    /// Copies the values of store `name` into `store`, whose parameter names
    /// and shapes must match exactly.
    pub fn load_store(&self, name: &str, store: &mut ParamStore, adam: Option<&mut Adam>) -> Result<(), NnError> {
        let rec = self.store(name)?;
        if rec.params.len() != store.len() {
            return Err(NnError::Checkpoint(format!(
                "{name}: {} tensors in checkpoint, {} expected",
                rec.params.len(),
                store.len()
            )));
        }
        let ids: Vec<_> = store.ids().collect();
        for (id, t) in ids.into_iter().zip(&rec.params) {
            let arr = t.to_array()?;
            if t.name != store.name(id) || arr.dim() != store.value(id).dim() {
                return Err(NnError::Checkpoint(format!(
                    "{name}: tensor {} does not match {}",
                    t.name,
                    store.name(id)
                )));
            }
            *store.value_mut(id) = arr;
        }
        if let Some(adam) = adam {
            let a = rec
                .adam
                .as_ref()
                .ok_or_else(|| NnError::Checkpoint(format!("{name}: no optimizer state")))?;
            let load = |ts: &[TensorRecord]| ts.iter().map(|t| t.to_array()).collect::<Result<Vec<_>, _>>();
            let (m, v) = (load(&a.m)?, load(&a.v)?);
            let shapes_ok = m.len() == store.len()
                && v.len() == store.len()
                && store.ids().zip(m.iter().zip(&v)).all(|(id, (m, v))| {
                    m.dim() == store.value(id).dim() && v.dim() == store.value(id).dim()
                });
            if !shapes_ok {
                return Err(NnError::Checkpoint(format!("{name}: optimizer state shape mismatch")));
            }
            *adam = Adam {
                lr: a.lr,
                beta1: a.beta1,
                beta2: a.beta2,
                eps: a.eps,
                step: a.step,
                m,
                v,
            };
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, NnError> {
        let c: Checkpoint = serde_json::from_str(s).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        if c.version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!("unsupported version {}", c.version)));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        std::fs::write(path, self.to_json()).map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let s = std::fs::read_to_string(path).map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_json(&s)
    }
}
