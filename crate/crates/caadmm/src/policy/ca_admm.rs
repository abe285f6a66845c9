//! The learned context-aware policy and its critic.
//!
//! Each of the last `l` observed graphs (with `ρ` on dual nodes) is embedded
//! by a stack of graph-attention layers; a GRU run over these embeddings
//! yields a per-node context `C_t`. The actor concatenates `C_t` to the
//! current graph's features (without `ρ`), applies one more attention layer
//! and a per-dual-node MLP whose ExpTanh output is `log10 ρ`. The critic has
//! the same shape, takes the action as the `ρ` column of the current graph
//! and reads out weighted-sum, min and max over all nodes before its MLP.

use std::collections::VecDeque;
use std::sync::Arc;

use ndarray::{s, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PolicyError, RhoPolicy};
use crate::admm::{AdmmSettings, AdmmState};
use crate::graph::{
    build_graph_with, stack_features, with_rho, BatchStructure, GraphStructure, HeteroGraph, DUAL_DIM,
    DUAL_DIM_RHO, PRIMAL_DIM, RHO_COLUMN,
};
use crate::nn::hga::{HgaDims, EMBED_DIM};
use crate::nn::{Activation, GruCell, HgaLayer, Linear, Mlp, MlpSpec, NnError, ParamStore, Tape, Topology, Var};
use crate::qp::QpProblem;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaAdmmConfig {
    pub history_len: usize,
    pub encoder_layers: usize,
    /// `false` gives the attention-only variant without temporal context.
    pub use_context: bool,
    /// Zero the actor's output layer so the untrained actor emits `ρ = 1`.
    pub zero_init_head: bool,
}

impl Default for CaAdmmConfig {
    fn default() -> Self {
        Self {
            history_len: 3,
            encoder_layers: 2,
            use_context: true,
            zero_init_head: true,
        }
    }
}

/// One MDP observation: the last `l` graphs (with `ρ`) and the current graph
/// (without `ρ`), all sharing one structure.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub structure: Arc<GraphStructure>,
    pub history: Vec<Arc<HeteroGraph>>,
    pub current: Arc<HeteroGraph>,
}

/// Several observations merged into one disjoint-union graph.
#[derive(Debug, Clone)]
pub struct ObservationBatch {
    pub structure: BatchStructure,
    pub history: Vec<(Array2<f64>, Array2<f64>)>,
    pub current: (Array2<f64>, Array2<f64>),
}

impl ObservationBatch {
    pub fn new(obs: &[&Observation]) -> Result<Self, PolicyError> {
        let l = obs[0].history.len();
        if obs.iter().any(|o| o.history.len() != l) {
            return Err(PolicyError::ShapeMismatch("observations with different history lengths".into()));
        }
        let structs: Vec<&GraphStructure> = obs.iter().map(|o| o.structure.as_ref()).collect();
        let structure = BatchStructure::new(&structs)?;
        let history = (0..l)
            .map(|d| {
                let gs: Vec<&HeteroGraph> = obs.iter().map(|o| o.history[d].as_ref()).collect();
                stack_features(&gs)
            })
            .collect();
        let cur: Vec<&HeteroGraph> = obs.iter().map(|o| o.current.as_ref()).collect();
        Ok(Self {
            structure,
            history,
            current: stack_features(&cur),
        })
    }

    pub fn num_dual(&self) -> usize {
        self.structure.topology.n_dual
    }
}

fn edge_constants(tape: &mut Tape, feats: &[Array2<f64>; 3]) -> [Var; 3] {
    [
        tape.constant(feats[0].clone()),
        tape.constant(feats[1].clone()),
        tape.constant(feats[2].clone()),
    ]
}

/// Attention stack applied to each history graph, followed by a GRU over
/// the history.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextEncoder {
    pub layers: Vec<HgaLayer>,
    pub gru: GruCell,
}

impl ContextEncoder {
    pub fn new(store: &mut ParamStore, name: &str, n_layers: usize, rng: &mut ChaCha8Rng) -> Result<Self, NnError> {
        let mut layers = Vec::new();
        for i in 0..n_layers.max(1) {
            let dims = if i == 0 {
                HgaDims {
                    primal_in: PRIMAL_DIM,
                    dual_in: DUAL_DIM_RHO,
                    edge_in: [2, 1, 1],
                }
            } else {
                HgaDims {
                    primal_in: EMBED_DIM,
                    dual_in: EMBED_DIM,
                    edge_in: [EMBED_DIM; 3],
                }
            };
            layers.push(HgaLayer::new(store, &format!("{name}.hga{i}"), dims, rng)?);
        }
        let gru = GruCell::new(store, &format!("{name}.gru"), EMBED_DIM, EMBED_DIM, rng)?;
        Ok(Self { layers, gru })
    }

    /// Node embeddings of one graph.
    pub fn embed(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        topo: &Topology,
        edges: [Var; 3],
        primal: Var,
        dual: Var,
    ) -> Result<(Var, Var), NnError> {
        let (mut p, mut d, mut e) = (primal, dual, edges);
        for layer in &self.layers {
            let out = layer.forward(tape, store, topo, p, d, e)?;
            p = out.primal;
            d = out.dual;
            e = out.edges;
        }
        Ok((p, d))
    }

    /// GRU over per-step embeddings, oldest first, from a zero state.
    pub fn context(&self, tape: &mut Tape, store: &ParamStore, steps: &[(Var, Var)]) -> Result<(Var, Var), NnError> {
        let (np, _) = tape.shape(steps[0].0);
        let (nd, _) = tape.shape(steps[0].1);
        let mut hp = tape.constant(Array2::zeros((np, EMBED_DIM)));
        let mut hd = tape.constant(Array2::zeros((nd, EMBED_DIM)));
        for &(p, d) in steps {
            hp = self.gru.forward(tape, store, p, hp)?;
            hd = self.gru.forward(tape, store, d, hd)?;
        }
        Ok((hp, hd))
    }

    fn batch_context(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        batch: &ObservationBatch,
        edges: [Var; 3],
    ) -> Result<(Var, Var), NnError> {
        let mut steps = Vec::new();
        for (p, d) in &batch.history {
            let p = tape.constant(p.clone());
            let d = tape.constant(d.clone());
            steps.push(self.embed(tape, store, &batch.structure.topology, edges, p, d)?);
        }
        self.context(tape, store, &steps)
    }
}

fn with_context(tape: &mut Tape, x: Var, ctx: Option<Var>) -> Result<Var, NnError> {
    match ctx {
        Some(c) => tape.concat_cols(&[x, c]),
        None => Ok(x),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorNet {
    pub encoder: Option<ContextEncoder>,
    pub hga: HgaLayer,
    pub head: Mlp,
}

impl ActorNet {
    pub fn new(store: &mut ParamStore, config: &CaAdmmConfig, rng: &mut ChaCha8Rng) -> Result<Self, NnError> {
        let encoder = if config.use_context {
            Some(ContextEncoder::new(store, "actor.enc", config.encoder_layers, rng)?)
        } else {
            None
        };
        let ctx = if config.use_context { EMBED_DIM } else { 0 };
        let hga = HgaLayer::new(
            store,
            "actor.hga",
            HgaDims {
                primal_in: PRIMAL_DIM + ctx,
                dual_in: DUAL_DIM + ctx,
                edge_in: [2, 1, 1],
            },
            rng,
        )?;
        let head = Mlp::new(
            store,
            "actor.head",
            MlpSpec::new(EMBED_DIM, &[64, 32], 1, Activation::ExpTanh),
            rng,
        )?;
        if config.zero_init_head {
            head.zero_output_layer(store);
        }
        Ok(Self { encoder, hga, head })
    }

    /// `log10 ρ` per dual node given the current graph and optional context.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_current(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        topo: &Topology,
        edges: [Var; 3],
        primal: Var,
        dual: Var,
        ctx: Option<(Var, Var)>,
    ) -> Result<Var, NnError> {
        let p = with_context(tape, primal, ctx.map(|c| c.0))?;
        let d = with_context(tape, dual, ctx.map(|c| c.1))?;
        let out = self.hga.forward(tape, store, topo, p, d, edges)?;
        self.head.forward(tape, store, out.dual)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, batch: &ObservationBatch) -> Result<Var, NnError> {
        let edges = edge_constants(tape, &batch.structure.edge_features);
        let ctx = match &self.encoder {
            Some(enc) => Some(enc.batch_context(tape, store, batch, edges)?),
            None => None,
        };
        let p = tape.constant(batch.current.0.clone());
        let d = tape.constant(batch.current.1.clone());
        self.forward_current(tape, store, &batch.structure.topology, edges, p, d, ctx)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticNet {
    pub encoder: Option<ContextEncoder>,
    pub hga: HgaLayer,
    pub gate: Linear,
    pub head: Mlp,
}

impl CriticNet {
    pub fn new(store: &mut ParamStore, config: &CaAdmmConfig, rng: &mut ChaCha8Rng) -> Result<Self, NnError> {
        let encoder = if config.use_context {
            Some(ContextEncoder::new(store, "critic.enc", config.encoder_layers, rng)?)
        } else {
            None
        };
        let ctx = if config.use_context { EMBED_DIM } else { 0 };
        let hga = HgaLayer::new(
            store,
            "critic.hga",
            HgaDims {
                primal_in: PRIMAL_DIM + ctx,
                dual_in: DUAL_DIM_RHO + ctx,
                edge_in: [2, 1, 1],
            },
            rng,
        )?;
        let gate = Linear::new(store, "critic.gate", EMBED_DIM, 1, true, rng)?;
        let head = Mlp::new(
            store,
            "critic.head",
            MlpSpec::new(3 * EMBED_DIM, &[64, 32], 1, Activation::Identity),
            rng,
        )?;
        Ok(Self {
            encoder,
            hga,
            gate,
            head,
        })
    }

    /// Temporal context of the critic's encoder, `None` without one.
    pub fn context(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        batch: &ObservationBatch,
    ) -> Result<Option<(Var, Var)>, NnError> {
        let edges = edge_constants(tape, &batch.structure.edge_features);
        match &self.encoder {
            Some(enc) => Ok(Some(enc.batch_context(tape, store, batch, edges)?)),
            None => Ok(None),
        }
    }

    /// Q-value per graph of the batch; `action` holds `log10 ρ` per dual
    /// node (column vector).
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        batch: &ObservationBatch,
        action: Var,
    ) -> Result<Var, NnError> {
        let ctx = self.context(tape, store, batch)?;
        self.forward_with_context(tape, store, batch, action, ctx)
    }

    /// Like [`CriticNet::forward`] with a precomputed context.
    pub fn forward_with_context(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        batch: &ObservationBatch,
        action: Var,
        ctx: Option<(Var, Var)>,
    ) -> Result<Var, NnError> {
        let nd = batch.num_dual();
        if tape.shape(action) != (nd, 1) {
            return Err(NnError::ShapeMismatch(format!(
                "action must be {nd}x1, got {:?}",
                tape.shape(action)
            )));
        }
        let topo = &batch.structure.topology;
        let edges = edge_constants(tape, &batch.structure.edge_features);
        let cur = &batch.current.1;
        let left = tape.constant(cur.slice(s![.., ..RHO_COLUMN]).to_owned());
        let right = tape.constant(cur.slice(s![.., RHO_COLUMN..]).to_owned());
        let dual = tape.concat_cols(&[left, action, right])?;
        let primal = tape.constant(batch.current.0.clone());
        let p = with_context(tape, primal, ctx.map(|c| c.0))?;
        let d = with_context(tape, dual, ctx.map(|c| c.1))?;
        let out = self.hga.forward(tape, store, topo, p, d, edges)?;
        let nodes = tape.concat_rows(&[out.primal, out.dual])?;
        let g = batch.structure.num_graphs;
        let seg = Arc::new(batch.structure.node_graph.clone());
        let gate = self.gate.forward(tape, store, nodes)?;
        let w = tape.segment_softmax(gate, seg.clone(), g)?;
        let weighted = tape.row_scale(nodes, w)?;
        let wsum = tape.scatter_add_rows(weighted, seg.clone(), g)?;
        let mn = tape.segment_min(nodes, &seg, g)?;
        let mx = tape.segment_max(nodes, &seg, g)?;
        let readout = tape.concat_cols(&[wsum, mn, mx])?;
        self.head.forward(tape, store, readout)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaAdmmActor {
    pub config: CaAdmmConfig,
    pub store: ParamStore,
    pub net: ActorNet,
}

impl CaAdmmActor {
    pub fn new(config: CaAdmmConfig, seed: u64) -> Result<Self, PolicyError> {
        if config.history_len == 0 {
            return Err(PolicyError::HistoryTooShort { got: 0, need: 1 });
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = ActorNet::new(&mut store, &config, &mut rng)?;
        Ok(Self { config, store, net })
    }

    /// `log10 ρ` for every dual node of every observation, concatenated.
    pub fn log10_rho(&self, obs: &[&Observation]) -> Result<Vec<f64>, PolicyError> {
        let batch = ObservationBatch::new(obs)?;
        let mut tape = Tape::new();
        let out = self.net.forward(&mut tape, &self.store, &batch)?;
        Ok(tape.value(out).iter().copied().collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaAdmmCritic {
    pub config: CaAdmmConfig,
    pub store: ParamStore,
    pub net: CriticNet,
}

impl CaAdmmCritic {
    pub fn new(config: CaAdmmConfig, seed: u64) -> Result<Self, PolicyError> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = CriticNet::new(&mut store, &config, &mut rng)?;
        Ok(Self { config, store, net })
    }

    /// Q-values of `(obs_i, action_i)` where `actions` concatenates the
    /// per-dual-node `log10 ρ` of each observation.
    pub fn q_values(&self, obs: &[&Observation], actions: &[f64]) -> Result<Vec<f64>, PolicyError> {
        let batch = ObservationBatch::new(obs)?;
        if actions.len() != batch.num_dual() {
            return Err(PolicyError::ShapeMismatch("action length".into()));
        }
        let mut tape = Tape::new();
        let a = tape.constant(Array2::from_shape_vec((actions.len(), 1), actions.to_vec()).expect("column"));
        let q = self.net.forward(&mut tape, &self.store, &batch, a)?;
        Ok(tape.value(q).iter().copied().collect())
    }
}

/// Sliding window of the last `l` (state, ρ) graphs of one solve.
#[derive(Debug, Clone)]
pub struct History {
    len: usize,
    structure: Option<Arc<GraphStructure>>,
    graphs: VecDeque<Arc<HeteroGraph>>,
}

impl History {
    pub fn new(len: usize) -> Self {
        Self {
            len,
            structure: None,
            graphs: VecDeque::new(),
        }
    }

    pub fn clear(&mut self) {
        self.structure = None;
        self.graphs.clear();
    }

    /// Builds the observation for `state`. On the first call the window is
    /// filled with copies of the initial graph carrying the current `ρ`.
    pub fn observe(
        &mut self,
        problem: &QpProblem,
        state: &AdmmState,
        settings: &AdmmSettings,
    ) -> Result<Observation, PolicyError> {
        let structure = match &self.structure {
            Some(s) => s.clone(),
            None => {
                let s = Arc::new(GraphStructure::new(problem)?);
                self.structure = Some(s.clone());
                s
            }
        };
        let current = Arc::new(build_graph_with(structure.clone(), problem, state, settings, false)?);
        if self.graphs.is_empty() {
            let log_rho: Vec<f64> = state.rho.iter().map(|r| r.log10()).collect();
            let first = Arc::new(with_rho(&current, &log_rho)?);
            self.graphs.extend(std::iter::repeat(first).take(self.len));
        }
        Ok(Observation {
            structure,
            history: self.graphs.iter().cloned().collect(),
            current,
        })
    }

    /// Appends the current graph of `obs` tagged with the applied `ρ`.
    pub fn record(&mut self, obs: &Observation, rho: &[f64]) -> Result<(), PolicyError> {
        let log_rho: Vec<f64> = rho.iter().map(|r| r.log10()).collect();
        self.graphs.push_back(Arc::new(with_rho(&obs.current, &log_rho)?));
        while self.graphs.len() > self.len {
            self.graphs.pop_front();
        }
        Ok(())
    }
}

/// Inference wrapper: keeps the history of one solve and caches the
/// encoder output of each history graph.
#[derive(Debug, Clone)]
pub struct CaAdmmPolicy {
    actor: Arc<CaAdmmActor>,
    history: History,
    cache: Vec<(Arc<HeteroGraph>, Array2<f64>, Array2<f64>)>,
}

impl CaAdmmPolicy {
    pub fn new(actor: Arc<CaAdmmActor>) -> Self {
        let l = actor.config.history_len;
        Self {
            actor,
            history: History::new(l),
            cache: Vec::new(),
        }
    }

    pub fn actor(&self) -> &CaAdmmActor {
        &self.actor
    }

    fn embedding(&mut self, enc: &ContextEncoder, g: &Arc<HeteroGraph>) -> Result<(Array2<f64>, Array2<f64>), PolicyError> {
        if let Some((_, p, d)) = self.cache.iter().find(|(k, _, _)| Arc::ptr_eq(k, g)) {
            return Ok((p.clone(), d.clone()));
        }
        let store = &self.actor.store;
        let mut tape = Tape::new();
        let edges = edge_constants(&mut tape, &g.structure.edge_features);
        let p = tape.constant(g.primal.clone());
        let d = tape.constant(g.dual.clone());
        let (pe, de) = enc.embed(&mut tape, store, &g.structure.topology, edges, p, d)?;
        let out = (tape.value(pe).clone(), tape.value(de).clone());
        self.cache.push((g.clone(), out.0.clone(), out.1.clone()));
        Ok(out)
    }

    /// `log10 ρ` for one observation, reusing cached history embeddings.
    pub fn log10_rho(&mut self, obs: &Observation) -> Result<Vec<f64>, PolicyError> {
        let actor = self.actor.clone();
        let mut steps = Vec::new();
        if let Some(enc) = &actor.net.encoder {
            for g in &obs.history {
                steps.push(self.embedding(enc, g)?);
            }
            self.cache.retain(|(k, _, _)| obs.history.iter().any(|g| Arc::ptr_eq(g, k)));
        }
        let mut tape = Tape::new();
        let ctx = match &actor.net.encoder {
            Some(enc) => {
                let vars: Vec<(Var, Var)> = steps
                    .into_iter()
                    .map(|(p, d)| (tape.constant(p), tape.constant(d)))
                    .collect();
                Some(enc.context(&mut tape, &actor.store, &vars)?)
            }
            None => None,
        };
        let edges = edge_constants(&mut tape, &obs.structure.edge_features);
        let p = tape.constant(obs.current.primal.clone());
        let d = tape.constant(obs.current.dual.clone());
        let out = actor
            .net
            .forward_current(&mut tape, &actor.store, &obs.structure.topology, edges, p, d, ctx)?;
        Ok(tape.value(out).iter().copied().collect())
    }
}

impl RhoPolicy for CaAdmmPolicy {
    fn act(&mut self, problem: &QpProblem, state: &AdmmState, settings: &AdmmSettings) -> Result<Vec<f64>, PolicyError> {
        let obs = self.history.observe(problem, state, settings)?;
        let log_rho = self.log10_rho(&obs)?;
        let rho: Vec<f64> = log_rho.iter().map(|&o| settings.clamp_rho(10f64.powf(o))).collect();
        self.history.record(&obs, &rho)?;
        Ok(rho)
    }

    fn reset(&mut self) {
        self.history.clear();
        self.cache.clear();
    }

    fn name(&self) -> String {
        if self.actor.config.use_context {
            "ca-admm".into()
        } else {
            "hga-only".into()
        }
    }
}
