//! Heterogeneous graph view of a QP and its ADMM state.
//!
//! Primal node `n` carries `[log10|r_dual_n|, log10‖r_dual‖∞, 1{|r_dual_n| < ε_dual}]`.
//! Dual node `m` carries
//! `[log10|r_primal_m|, log10‖r_primal‖∞, 1{|r_primal_m| < ε_primal}, y_m, (log10 ρ_m), slack_m, 1_eq, 1_ineq]`
//! where the `ρ` column is present only when requested and
//! `slack_m = min(z_m − l_m, u_m − z_m)`.
//!
//! Edges: primal→primal for every nonzero `P_ij` with feature `[P_ij, q_i]`,
//! primal→dual and dual→primal for every nonzero `A_ji` with feature `A_ji`.

use std::sync::Arc;

use ndarray::{s, Array2};
use serde_json::{json, Value};
use thiserror::Error;

use crate::admm::{AdmmSettings, AdmmState};
use crate::nn::{EdgeType, NnError, Topology};
use crate::qp::QpProblem;

pub const LOG_FLOOR: f64 = 1e-10;
pub const SLACK_CAP: f64 = 1e6;
pub const PRIMAL_DIM: usize = 3;
pub const DUAL_DIM: usize = 7;
pub const DUAL_DIM_RHO: usize = 8;
/// Column of the `ρ` feature in dual nodes that carry it.
pub const RHO_COLUMN: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("residuals are stale: state at iteration {iteration}, residuals from {residuals_at:?}")]
    StaleResiduals {
        iteration: usize,
        residuals_at: Option<usize>,
    },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Problem-dependent part of the graph: topology and edge features.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphStructure {
    pub topology: Topology,
    pub edge_features: [Array2<f64>; 3],
}

impl GraphStructure {
    pub fn new(problem: &QpProblem) -> Result<Self, GraphError> {
        let mut p2p = Vec::new();
        let mut p2p_feat = Vec::new();
        for &(i, j, v) in problem.p.entries() {
            p2p.push((i, j));
            p2p_feat.extend([v, problem.q[i]]);
        }
        let mut p2d = Vec::new();
        let mut d2p = Vec::new();
        let mut a_feat = Vec::new();
        for &(row, col, v) in problem.a.entries() {
            p2d.push((col, row));
            d2p.push((row, col));
            a_feat.push(v);
        }
        let ne = p2p.len();
        let na = a_feat.len();
        let edge_features = [
            Array2::from_shape_vec((ne, 2), p2p_feat).expect("two features per edge"),
            Array2::from_shape_vec((na, 1), a_feat.clone()).expect("one feature per edge"),
            Array2::from_shape_vec((na, 1), a_feat).expect("one feature per edge"),
        ];
        Ok(Self {
            topology: Topology::new(problem.n, problem.m, [p2p, p2d, d2p])?,
            edge_features,
        })
    }

    pub fn n_primal(&self) -> usize {
        self.topology.n_primal
    }

    pub fn n_dual(&self) -> usize {
        self.topology.n_dual
    }

    /// `(src, dst)` pairs of one edge type.
    pub fn edges(&self, t: EdgeType) -> Vec<(usize, usize)> {
        let k = t.index();
        self.topology.src[k]
            .iter()
            .zip(self.topology.dst[k].iter())
            .map(|(&a, &b)| (a, b))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeteroGraph {
    pub structure: Arc<GraphStructure>,
    pub primal: Array2<f64>,
    pub dual: Array2<f64>,
}

fn log_abs(v: f64) -> f64 {
    v.abs().max(LOG_FLOOR).log10()
}

fn slack(z: f64, l: f64, u: f64) -> f64 {
    let lo = if l.is_finite() { Some(z - l) } else { None };
    let hi = if u.is_finite() { Some(u - z) } else { None };
    let s = match (lo, hi) {
        (Some(a), Some(b)) => a.min(b),
        (Some(a), None) => a,
        (None, Some(b)) => b,
        (None, None) => SLACK_CAP,
    };
    s.clamp(-SLACK_CAP, SLACK_CAP)
}

/// Node features for `(problem, state)`. `problem` must be the preprocessed
/// problem the state belongs to.
pub fn node_features(
    problem: &QpProblem,
    state: &AdmmState,
    settings: &AdmmSettings,
    include_rho: bool,
) -> Result<(Array2<f64>, Array2<f64>), GraphError> {
    if state.residuals_at != Some(state.iteration) {
        return Err(GraphError::StaleResiduals {
            iteration: state.iteration,
            residuals_at: state.residuals_at,
        });
    }
    if state.r_dual.len() != problem.n || state.r_primal.len() != problem.m || state.rho.len() != problem.m {
        return Err(GraphError::Dimension("state does not match problem".into()));
    }
    let nd = log_abs(state.norm_r_dual());
    let mut primal = Array2::zeros((problem.n, PRIMAL_DIM));
    for (i, &r) in state.r_dual.iter().enumerate() {
        primal[[i, 0]] = log_abs(r);
        primal[[i, 1]] = nd;
        primal[[i, 2]] = if r.abs() < settings.eps_dual { 1.0 } else { 0.0 };
    }
    let np = log_abs(state.norm_r_primal());
    let width = if include_rho { DUAL_DIM_RHO } else { DUAL_DIM };
    let mut dual = Array2::zeros((problem.m, width));
    for (m, &r) in state.r_primal.iter().enumerate() {
        let mut row = vec![
            log_abs(r),
            np,
            if r.abs() < settings.eps_primal { 1.0 } else { 0.0 },
            state.y[m],
        ];
        if include_rho {
            row.push(state.rho[m].log10());
        }
        let eq = problem.is_equality(m);
        row.extend([
            slack(state.z[m], problem.l[m], problem.u[m]),
            if eq { 1.0 } else { 0.0 },
            if eq { 0.0 } else { 1.0 },
        ]);
        for (c, v) in row.into_iter().enumerate() {
            dual[[m, c]] = v;
        }
    }
    Ok((primal, dual))
}

pub fn build_graph(
    problem: &QpProblem,
    state: &AdmmState,
    settings: &AdmmSettings,
    include_rho: bool,
) -> Result<HeteroGraph, GraphError> {
    let structure = Arc::new(GraphStructure::new(problem)?);
    build_graph_with(structure, problem, state, settings, include_rho)
}

/// As [`build_graph`], reusing an existing structure for the same problem.
pub fn build_graph_with(
    structure: Arc<GraphStructure>,
    problem: &QpProblem,
    state: &AdmmState,
    settings: &AdmmSettings,
    include_rho: bool,
) -> Result<HeteroGraph, GraphError> {
    let (primal, dual) = node_features(problem, state, settings, include_rho)?;
    Ok(HeteroGraph {
        structure,
        primal,
        dual,
    })
}

/// Inserts `log10 ρ` as the `ρ` column of a graph built without it.
pub fn with_rho(graph: &HeteroGraph, log10_rho: &[f64]) -> Result<HeteroGraph, GraphError> {
    if graph.dual.ncols() != DUAL_DIM || log10_rho.len() != graph.dual.nrows() {
        return Err(GraphError::Dimension("with_rho expects a graph without rho".into()));
    }
    let mut dual = Array2::zeros((graph.dual.nrows(), DUAL_DIM_RHO));
    dual.slice_mut(s![.., ..RHO_COLUMN]).assign(&graph.dual.slice(s![.., ..RHO_COLUMN]));
    dual.slice_mut(s![.., RHO_COLUMN + 1..]).assign(&graph.dual.slice(s![.., RHO_COLUMN..]));
    for (m, &r) in log10_rho.iter().enumerate() {
        dual[[m, RHO_COLUMN]] = r;
    }
    Ok(HeteroGraph {
        structure: graph.structure.clone(),
        primal: graph.primal.clone(),
        dual,
    })
}

fn check_perm(p: &[usize], n: usize) -> Result<(), GraphError> {
    let mut seen = vec![false; n];
    if p.len() != n {
        return Err(GraphError::Dimension("permutation length".into()));
    }
    for &i in p {
        if i >= n || seen[i] {
            return Err(GraphError::Dimension("not a permutation".into()));
        }
        seen[i] = true;
    }
    Ok(())
}

fn permute_rows(a: &Array2<f64>, perm: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros(a.dim());
    for (old, &new) in perm.iter().enumerate() {
        out.row_mut(new).assign(&a.row(old));
    }
    out
}

/// Relabels node `i` as `primal_perm[i]` (resp. `dual_perm[i]`) and moves
/// edge endpoints accordingly. Edge order is preserved.
pub fn permute(graph: &HeteroGraph, primal_perm: &[usize], dual_perm: &[usize]) -> Result<HeteroGraph, GraphError> {
    let s = &graph.structure;
    check_perm(primal_perm, s.n_primal())?;
    check_perm(dual_perm, s.n_dual())?;
    let map = |primal: bool, i: usize| if primal { primal_perm[i] } else { dual_perm[i] };
    let edges = EdgeType::ALL.map(|t| {
        s.edges(t)
            .into_iter()
            .map(|(a, b)| (map(t.src_is_primal(), a), map(t.dst_is_primal(), b)))
            .collect::<Vec<_>>()
    });
    let structure = GraphStructure {
        topology: Topology::new(s.n_primal(), s.n_dual(), edges)?,
        edge_features: s.edge_features.clone(),
    };
    Ok(HeteroGraph {
        structure: Arc::new(structure),
        primal: permute_rows(&graph.primal, primal_perm),
        dual: permute_rows(&graph.dual, dual_perm),
    })
}

pub fn graph_to_json(graph: &HeteroGraph) -> Value {
    let rows = |a: &Array2<f64>| -> Vec<Vec<f64>> { a.rows().into_iter().map(|r| r.to_vec()).collect() };
    let edges = |t: EdgeType| -> Vec<Value> {
        let f = &graph.structure.edge_features[t.index()];
        graph
            .structure
            .edges(t)
            .into_iter()
            .enumerate()
            .map(|(e, (i, j))| {
                let mut v = vec![json!(i), json!(j)];
                v.extend(f.row(e).iter().map(|x| json!(x)));
                Value::Array(v)
            })
            .collect()
    };
    json!({
        "primal_features": rows(&graph.primal),
        "dual_features": rows(&graph.dual),
        "p2p": edges(EdgeType::P2p),
        "p2d": edges(EdgeType::P2d),
        "d2p": edges(EdgeType::D2p),
    })
}

/// Disjoint union of several graph structures.
#[derive(Debug, Clone)]
pub struct BatchStructure {
    pub topology: Topology,
    pub edge_features: [Array2<f64>; 3],
    pub primal_offsets: Vec<usize>,
    pub dual_offsets: Vec<usize>,
    /// Graph index of every node, primal nodes first then dual nodes.
    pub node_graph: Vec<usize>,
    pub num_graphs: usize,
}

impl BatchStructure {
    pub fn new(parts: &[&GraphStructure]) -> Result<Self, GraphError> {
        let mut primal_offsets = vec![0];
        let mut dual_offsets = vec![0];
        for p in parts {
            primal_offsets.push(primal_offsets.last().unwrap() + p.n_primal());
            dual_offsets.push(dual_offsets.last().unwrap() + p.n_dual());
        }
        let edges = EdgeType::ALL.map(|t| {
            let mut out = Vec::new();
            for (g, p) in parts.iter().enumerate() {
                let off = |primal: bool| if primal { primal_offsets[g] } else { dual_offsets[g] };
                let (os, od) = (off(t.src_is_primal()), off(t.dst_is_primal()));
                out.extend(p.edges(t).into_iter().map(|(a, b)| (a + os, b + od)));
            }
            out
        });
        let feats = [0, 1, 2].map(|k| {
            let views: Vec<_> = parts.iter().map(|p| p.edge_features[k].view()).collect();
            ndarray::concatenate(ndarray::Axis(0), &views).expect("edge feature widths agree")
        });
        let mut node_graph = Vec::new();
        for (g, p) in parts.iter().enumerate() {
            node_graph.extend(std::iter::repeat(g).take(p.n_primal()));
        }
        for (g, p) in parts.iter().enumerate() {
            node_graph.extend(std::iter::repeat(g).take(p.n_dual()));
        }
        let np = *primal_offsets.last().unwrap();
        let nd = *dual_offsets.last().unwrap();
        Ok(Self {
            topology: Topology::new(np, nd, edges)?,
            edge_features: feats,
            primal_offsets,
            dual_offsets,
            node_graph,
            num_graphs: parts.len(),
        })
    }

    pub fn single(structure: &GraphStructure) -> Result<Self, GraphError> {
        Self::new(&[structure])
    }
}

/// Row-stacks the node features of graphs that share the layout of a
/// [`BatchStructure`] built from their structures in the same order.
pub fn stack_features(graphs: &[&HeteroGraph]) -> (Array2<f64>, Array2<f64>) {
    let p: Vec<_> = graphs.iter().map(|g| g.primal.view()).collect();
    let d: Vec<_> = graphs.iter().map(|g| g.dual.view()).collect();
    (
        ndarray::concatenate(ndarray::Axis(0), &p).expect("primal widths agree"),
        ndarray::concatenate(ndarray::Axis(0), &d).expect("dual widths agree"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qp::SparseMatrix;

    fn sm(d: &[&[f64]]) -> SparseMatrix {
        SparseMatrix::from_dense(&d.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn toy(l: f64, u: f64) -> QpProblem {
        QpProblem::new(sm(&[&[2.0, 1.0], &[1.0, 2.0]]), vec![1.0, -1.0], sm(&[&[1.0, 0.0]]), vec![l], vec![u]).unwrap()
    }

    #[test]
    fn edge_counts_follow_nonzeros() {
        let p = toy(0.0, 1.0);
        let st = AdmmState::initial(&p, 0.1);
        let g = build_graph(&p, &st, &AdmmSettings::default(), true).unwrap();
        assert_eq!(g.primal.dim(), (2, 3));
        assert_eq!(g.dual.dim(), (1, 8));
        assert_eq!(g.structure.edges(EdgeType::P2p).len(), 4);
        assert_eq!(g.structure.edges(EdgeType::P2d), vec![(0, 0)]);
        assert_eq!(g.structure.edges(EdgeType::D2p), vec![(0, 0)]);
        assert_eq!(g.structure.edge_features[0].row(1).to_vec(), vec![1.0, 1.0]);
    }

    #[test]
    fn equality_row_indicators_and_slack() {
        let p = toy(1.0, 1.0);
        let mut st = AdmmState::initial(&p, 0.1);
        st.z = vec![0.25];
        st.update_residuals(&p);
        let g = build_graph(&p, &st, &AdmmSettings::default(), false).unwrap();
        let row = g.dual.row(0).to_vec();
        assert_eq!(&row[5..], &[1.0, 0.0]);
        assert_eq!(row[4], 0.25 - 1.0);
    }

    #[test]
    fn zero_residual_hits_log_floor() {
        let p = toy(f64::NEG_INFINITY, f64::INFINITY);
        let mut st = AdmmState::initial(&p, 0.1);
        // x solving Px + q = 0: x = [-1, 1]
        st.x = vec![-1.0, 1.0];
        st.update_residuals(&p);
        let g = build_graph(&p, &st, &AdmmSettings::default(), true).unwrap();
        assert_eq!(g.primal[[0, 0]], -10.0);
        assert_eq!(g.primal[[0, 2]], 1.0);
        assert_eq!(g.dual[[0, 5]], SLACK_CAP);
    }

    #[test]
    fn stale_residuals_rejected() {
        let p = toy(0.0, 1.0);
        let mut st = AdmmState::initial(&p, 0.1);
        st.iteration = 3;
        assert!(matches!(
            build_graph(&p, &st, &AdmmSettings::default(), true),
            Err(GraphError::StaleResiduals { .. })
        ));
    }

    #[test]
    fn with_rho_matches_direct_build() {
        let p = toy(-1.0, 2.0);
        let mut st = AdmmState::initial(&p, 0.3);
        st.x = vec![0.2, 0.4];
        st.update_residuals(&p);
        let s = AdmmSettings::default();
        let g7 = build_graph(&p, &st, &s, false).unwrap();
        let g8 = build_graph(&p, &st, &s, true).unwrap();
        assert_eq!(with_rho(&g7, &[0.3f64.log10()]).unwrap().dual, g8.dual);
    }

    #[test]
    fn swap_twice_is_identity() {
        let p = toy(0.0, 1.0);
        let st = AdmmState::initial(&p, 0.1);
        let g = build_graph(&p, &st, &AdmmSettings::default(), true).unwrap();
        let once = permute(&g, &[1, 0], &[0]).unwrap();
        let twice = permute(&once, &[1, 0], &[0]).unwrap();
        assert_eq!(twice, g);
        assert_eq!(permute(&g, &[0, 1], &[0]).unwrap(), g);
    }
}
