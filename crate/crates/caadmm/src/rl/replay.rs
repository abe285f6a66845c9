//! Fixed-capacity FIFO replay memory with a seeded uniform sampler.

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::RlError;
use crate::graph::{GraphStructure, HeteroGraph};
use crate::nn::hga::EdgeType;
use crate::nn::Topology;
use crate::policy::Observation;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Observation,
    /// Applied `log10 ρ` per dual node.
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Observation,
    /// Terminal by convergence; the target does not bootstrap past it.
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    head: usize,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Result<Self, RlError> {
        if capacity == 0 {
            return Err(RlError::InvalidConfig("buffer capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            items: Vec::new(),
            head: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Inserts `t`, evicting the oldest transition when full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    /// Stored transitions, oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let (a, b) = self.items.split_at(self.head);
        b.iter().chain(a.iter())
    }

    /// `batch` draws with replacement.
    pub fn sample(&mut self, batch: usize) -> Result<Vec<&Transition>, RlError> {
        if self.items.is_empty() {
            return Err(RlError::InvalidConfig("sampling from an empty buffer".into()));
        }
        let idx: Vec<usize> = (0..batch).map(|_| self.rng.gen_range(0..self.items.len())).collect();
        Ok(idx.into_iter().map(|i| &self.items[i]).collect())
    }

    pub fn to_record(&self) -> ReplayRecord {
        let mut interner = Interner::default();
        let items = self
            .items
            .iter()
            .map(|t| TransitionRecord {
                obs: interner.obs(&t.obs),
                action: t.action.clone(),
                reward: t.reward,
                next_obs: interner.obs(&t.next_obs),
                done: t.done,
            })
            .collect();
        ReplayRecord {
            capacity: self.capacity,
            head: self.head,
            rng_seed: self.rng.get_seed(),
            rng_word_pos: self.rng.get_word_pos().to_string(),
            structures: interner.structures,
            graphs: interner.graphs,
            items,
        }
    }

    pub fn from_record(rec: &ReplayRecord) -> Result<Self, RlError> {
        let bad = |what: &str| RlError::Checkpoint(format!("replay record: {what}"));
        let structures = rec
            .structures
            .iter()
            .map(|s| s.build().map(Arc::new))
            .collect::<Result<Vec<_>, _>>()?;
        let graphs = rec
            .graphs
            .iter()
            .map(|g| {
                let structure = structures.get(g.structure).ok_or_else(|| bad("structure index"))?.clone();
                Ok(Arc::new(HeteroGraph {
                    structure,
                    primal: g.primal.to_array()?,
                    dual: g.dual.to_array()?,
                }))
            })
            .collect::<Result<Vec<_>, RlError>>()?;
        let obs = |o: &ObsRecord| -> Result<Observation, RlError> {
            let get = |i: usize| graphs.get(i).cloned().ok_or_else(|| bad("graph index"));
            let current = get(o.current)?;
            Ok(Observation {
                structure: current.structure.clone(),
                history: o.history.iter().map(|&i| get(i)).collect::<Result<_, _>>()?,
                current,
            })
        };
        let items = rec
            .items
            .iter()
            .map(|t| {
                Ok(Transition {
                    obs: obs(&t.obs)?,
                    action: t.action.clone(),
                    reward: t.reward,
                    next_obs: obs(&t.next_obs)?,
                    done: t.done,
                })
            })
            .collect::<Result<Vec<_>, RlError>>()?;
        if rec.capacity == 0 || items.len() > rec.capacity || (rec.head > 0 && rec.head >= items.len()) {
            return Err(bad("capacity"));
        }
        let mut rng = ChaCha8Rng::from_seed(rec.rng_seed);
        rng.set_word_pos(rec.rng_word_pos.parse().map_err(|_| bad("rng position"))?);
        Ok(Self {
            capacity: rec.capacity,
            items,
            head: rec.head,
            rng,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayRecord {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl ArrayRecord {
    pub fn new(a: &Array2<f64>) -> Self {
        Self {
            rows: a.nrows(),
            cols: a.ncols(),
            values: a.iter().copied().collect(),
        }
    }

    pub fn to_array(&self) -> Result<Array2<f64>, RlError> {
        Array2::from_shape_vec((self.rows, self.cols), self.values.clone())
            .map_err(|e| RlError::Checkpoint(format!("array record: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureRecord {
    pub n_primal: usize,
    pub n_dual: usize,
    pub edges: [Vec<(usize, usize)>; 3],
    pub features: [ArrayRecord; 3],
}

impl StructureRecord {
    fn new(s: &GraphStructure) -> Self {
        Self {
            n_primal: s.n_primal(),
            n_dual: s.n_dual(),
            edges: EdgeType::ALL.map(|t| s.edges(t)),
            features: [
                ArrayRecord::new(&s.edge_features[0]),
                ArrayRecord::new(&s.edge_features[1]),
                ArrayRecord::new(&s.edge_features[2]),
            ],
        }
    }

    fn build(&self) -> Result<GraphStructure, RlError> {
        let topology = Topology::new(self.n_primal, self.n_dual, self.edges.clone())?;
        Ok(GraphStructure {
            topology,
            edge_features: [
                self.features[0].to_array()?,
                self.features[1].to_array()?,
                self.features[2].to_array()?,
            ],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphRecord {
    pub structure: usize,
    pub primal: ArrayRecord,
    pub dual: ArrayRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsRecord {
    pub history: Vec<usize>,
    pub current: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub obs: ObsRecord,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: ObsRecord,
    pub done: bool,
}

/// Buffer contents with shared graphs stored once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub capacity: usize,
    pub head: usize,
    pub rng_seed: [u8; 32],
    /// Decimal `u128`.
    pub rng_word_pos: String,
    pub structures: Vec<StructureRecord>,
    pub graphs: Vec<GraphRecord>,
    pub items: Vec<TransitionRecord>,
}

#[derive(Default)]
struct Interner {
    structure_ids: HashMap<*const GraphStructure, usize>,
    graph_ids: HashMap<*const HeteroGraph, usize>,
    structures: Vec<StructureRecord>,
    graphs: Vec<GraphRecord>,
}

impl Interner {
    fn structure(&mut self, s: &Arc<GraphStructure>) -> usize {
        let key = Arc::as_ptr(s);
        if let Some(&i) = self.structure_ids.get(&key) {
            return i;
        }
        self.structures.push(StructureRecord::new(s));
        self.structure_ids.insert(key, self.structures.len() - 1);
        self.structures.len() - 1
    }

    fn graph(&mut self, g: &Arc<HeteroGraph>) -> usize {
        let key = Arc::as_ptr(g);
        if let Some(&i) = self.graph_ids.get(&key) {
            return i;
        }
        let structure = self.structure(&g.structure);
        self.graphs.push(GraphRecord {
            structure,
            primal: ArrayRecord::new(&g.primal),
            dual: ArrayRecord::new(&g.dual),
        });
        self.graph_ids.insert(key, self.graphs.len() - 1);
        self.graphs.len() - 1
    }

    fn obs(&mut self, o: &Observation) -> ObsRecord {
        ObsRecord {
            history: o.history.iter().map(|g| self.graph(g)).collect(),
            current: self.graph(&o.current),
        }
    }
}
