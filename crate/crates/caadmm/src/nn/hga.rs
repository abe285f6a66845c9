//! Heterogeneous graph attention over primal and dual nodes.
//!
//! For every edge type `k` (source `i`, destination `j`):
//!
//! ```text
//! h'_ij   = E_k([h_i, h_j, h_ij])
//! z_ij    = A_k([h_i, h_j, h_ij])          scalar logit
//! α_ij    = softmax of z over the in-edges of j of type k
//! m_j^k   = Σ_i α_ij h'_ij
//! 𝔥_j^k   = V_k([h_j, m_j^k])
//! β_j^k   = softmax over the types k reaching j of N(𝔥_j^k)
//! h'_j    = Σ_k β_j^k 𝔥_j^k
//! ```
//!
//! A node with no incoming edges at all is mapped by a bias-free linear map
//! when its input width differs from the output width, and passed through
//! unchanged otherwise.

use std::sync::Arc;

use rand::Rng;

use super::mlp::{Activation, Linear, Mlp, MlpSpec};
use super::params::ParamStore;
use super::tape::{Tape, Var};
use super::NnError;

pub const EMBED_DIM: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeType {
    P2p,
    P2d,
    D2p,
}

impl EdgeType {
    pub const ALL: [EdgeType; 3] = [EdgeType::P2p, EdgeType::P2d, EdgeType::D2p];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            EdgeType::P2p => "p2p",
            EdgeType::P2d => "p2d",
            EdgeType::D2p => "d2p",
        }
    }

    pub fn src_is_primal(self) -> bool {
        !matches!(self, EdgeType::D2p)
    }

    pub fn dst_is_primal(self) -> bool {
        !matches!(self, EdgeType::P2d)
    }
}

/// Edge lists plus the bookkeeping the attention layer needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub n_primal: usize,
    pub n_dual: usize,
    pub src: [Arc<Vec<usize>>; 3],
    pub dst: [Arc<Vec<usize>>; 3],
    receivers: [Arc<Vec<usize>>; 3],
    primal_seg: Arc<Vec<usize>>,
    dual_seg: Arc<Vec<usize>>,
    primal_iso: Arc<Vec<usize>>,
    dual_iso: Arc<Vec<usize>>,
}

impl Topology {
    /// `edges[k]` lists `(src, dst)` pairs of edge type `EdgeType::ALL[k]`.
    pub fn new(n_primal: usize, n_dual: usize, edges: [Vec<(usize, usize)>; 3]) -> Result<Self, NnError> {
        let count = |primal: bool| if primal { n_primal } else { n_dual };
        let mut src: [Vec<usize>; 3] = Default::default();
        let mut dst: [Vec<usize>; 3] = Default::default();
        let mut receivers: [Vec<usize>; 3] = Default::default();
        let mut has_in_p = vec![false; n_primal];
        let mut has_in_d = vec![false; n_dual];
        for t in EdgeType::ALL {
            let k = t.index();
            let (ns, nd) = (count(t.src_is_primal()), count(t.dst_is_primal()));
            let mut indeg = vec![0usize; nd];
            for &(i, j) in &edges[k] {
                if i >= ns || j >= nd {
                    return Err(NnError::ShapeMismatch(format!("{} edge ({i}, {j}) out of range", t.name())));
                }
                src[k].push(i);
                dst[k].push(j);
                indeg[j] += 1;
            }
            receivers[k] = (0..nd).filter(|&j| indeg[j] > 0).collect();
            let flags = if t.dst_is_primal() { &mut has_in_p } else { &mut has_in_d };
            for &j in &receivers[k] {
                flags[j] = true;
            }
        }
        let seg = |primal: bool| -> Vec<usize> {
            EdgeType::ALL
                .iter()
                .filter(|t| t.dst_is_primal() == primal)
                .flat_map(|t| receivers[t.index()].iter().copied())
                .collect()
        };
        let primal_seg = seg(true);
        let dual_seg = seg(false);
        let iso = |flags: &[bool]| -> Vec<usize> { (0..flags.len()).filter(|&j| !flags[j]).collect() };
        Ok(Self {
            n_primal,
            n_dual,
            primal_iso: Arc::new(iso(&has_in_p)),
            dual_iso: Arc::new(iso(&has_in_d)),
            src: src.map(Arc::new),
            dst: dst.map(Arc::new),
            receivers: receivers.map(Arc::new),
            primal_seg: Arc::new(primal_seg),
            dual_seg: Arc::new(dual_seg),
        })
    }

    pub fn num_edges(&self, t: EdgeType) -> usize {
        self.src[t.index()].len()
    }

    fn nodes(&self, primal: bool) -> usize {
        if primal {
            self.n_primal
        } else {
            self.n_dual
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HgaDims {
    pub primal_in: usize,
    pub dual_in: usize,
    pub edge_in: [usize; 3],
}

impl HgaDims {
    fn node_in(&self, primal: bool) -> usize {
        if primal {
            self.primal_in
        } else {
            self.dual_in
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HgaLayer {
    pub dims: HgaDims,
    pub edge_mlp: [Mlp; 3],
    pub attn_mlp: [Mlp; 3],
    pub node_mlp: [Mlp; 3],
    pub type_mlp: Mlp,
    pub iso_primal: Option<Linear>,
    pub iso_dual: Option<Linear>,
}

/// Layer outputs. The attention weights are exposed for inspection.
#[derive(Debug, Clone, Copy)]
pub struct HgaOutput {
    pub primal: Var,
    pub dual: Var,
    pub edges: [Var; 3],
    pub alpha: [Var; 3],
    pub beta_primal: Option<Var>,
    pub beta_dual: Option<Var>,
}

impl HgaLayer {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dims: HgaDims, rng: &mut R) -> Result<Self, NnError> {
        let mk = |store: &mut ParamStore, rng: &mut R, t: EdgeType| -> Result<(Mlp, Mlp, Mlp), NnError> {
            let k = t.index();
            let x_in = dims.node_in(t.src_is_primal()) + dims.node_in(t.dst_is_primal()) + dims.edge_in[k];
            let e = Mlp::new(
                store,
                &format!("{name}.{}.E", t.name()),
                MlpSpec::new(x_in, &[64, 16], EMBED_DIM, Activation::LeakyRelu),
                rng,
            )?;
            let a = Mlp::new(
                store,
                &format!("{name}.{}.A", t.name()),
                MlpSpec::new(x_in, &[64, 16], 1, Activation::LeakyRelu),
                rng,
            )?;
            let v = Mlp::new(
                store,
                &format!("{name}.{}.V", t.name()),
                MlpSpec::new(dims.node_in(t.dst_is_primal()) + EMBED_DIM, &[64, 16], EMBED_DIM, Activation::LeakyRelu),
                rng,
            )?;
            Ok((e, a, v))
        };
        let (e0, a0, v0) = mk(store, rng, EdgeType::P2p)?;
        let (e1, a1, v1) = mk(store, rng, EdgeType::P2d)?;
        let (e2, a2, v2) = mk(store, rng, EdgeType::D2p)?;
        let type_mlp = Mlp::new(
            store,
            &format!("{name}.N"),
            MlpSpec::new(EMBED_DIM, &[64, 32], 1, Activation::LeakyRelu),
            rng,
        )?;
        let iso = |store: &mut ParamStore, rng: &mut R, input: usize, tag: &str| -> Result<Option<Linear>, NnError> {
            if input == EMBED_DIM {
                Ok(None)
            } else {
                Linear::new(store, &format!("{name}.iso_{tag}"), input, EMBED_DIM, false, rng).map(Some)
            }
        };
        let iso_primal = iso(store, rng, dims.primal_in, "primal")?;
        let iso_dual = iso(store, rng, dims.dual_in, "dual")?;
        Ok(Self {
            dims,
            edge_mlp: [e0, e1, e2],
            attn_mlp: [a0, a1, a2],
            node_mlp: [v0, v1, v2],
            type_mlp,
            iso_primal,
            iso_dual,
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        topo: &Topology,
        primal: Var,
        dual: Var,
        edges: [Var; 3],
    ) -> Result<HgaOutput, NnError> {
        expect(tape, primal, topo.n_primal, self.dims.primal_in, "primal features")?;
        expect(tape, dual, topo.n_dual, self.dims.dual_in, "dual features")?;
        let node = |primal_side: bool| if primal_side { primal } else { dual };

        let mut edge_out = [primal; 3];
        let mut alpha = [primal; 3];
        let mut updated = [primal; 3];
        let mut logits = [primal; 3];
        for t in EdgeType::ALL {
            let k = t.index();
            expect(tape, edges[k], topo.num_edges(t), self.dims.edge_in[k], t.name())?;
            let n_dst = topo.nodes(t.dst_is_primal());
            let hs = tape.gather_rows(node(t.src_is_primal()), topo.src[k].clone())?;
            let hd = tape.gather_rows(node(t.dst_is_primal()), topo.dst[k].clone())?;
            let x = tape.concat_cols(&[hs, hd, edges[k]])?;
            let e = self.edge_mlp[k].forward(tape, store, x)?;
            let z = self.attn_mlp[k].forward(tape, store, x)?;
            let a = tape.segment_softmax(z, topo.dst[k].clone(), n_dst)?;
            let weighted = tape.row_scale(e, a)?;
            let msg = tape.scatter_add_rows(weighted, topo.dst[k].clone(), n_dst)?;
            let vin = tape.concat_cols(&[node(t.dst_is_primal()), msg])?;
            let hk = self.node_mlp[k].forward(tape, store, vin)?;
            let d = self.type_mlp.forward(tape, store, hk)?;
            edge_out[k] = e;
            alpha[k] = a;
            updated[k] = hk;
            logits[k] = d;
        }

        let mut combine = |primal_side: bool| -> Result<(Var, Option<Var>), NnError> {
            let n = topo.nodes(primal_side);
            let types: Vec<EdgeType> = EdgeType::ALL
                .iter()
                .copied()
                .filter(|t| t.dst_is_primal() == primal_side)
                .collect();
            let (seg, iso, iso_map) = if primal_side {
                (&topo.primal_seg, &topo.primal_iso, &self.iso_primal)
            } else {
                (&topo.dual_seg, &topo.dual_iso, &self.iso_dual)
            };
            let mut parts: Vec<Var> = Vec::new();
            let mut beta = None;
            if !seg.is_empty() {
                let mut ls = Vec::new();
                let mut hs = Vec::new();
                for t in &types {
                    let rec = topo.receivers[t.index()].clone();
                    if rec.is_empty() {
                        continue;
                    }
                    ls.push(tape.gather_rows(logits[t.index()], rec.clone())?);
                    hs.push(tape.gather_rows(updated[t.index()], rec)?);
                }
                let l = tape.concat_rows(&ls)?;
                let h = tape.concat_rows(&hs)?;
                let b = tape.segment_softmax(l, seg.clone(), n)?;
                let w = tape.row_scale(h, b)?;
                parts.push(tape.scatter_add_rows(w, seg.clone(), n)?);
                beta = Some(b);
            }
            if !iso.is_empty() {
                let h_iso = tape.gather_rows(node(primal_side), iso.clone())?;
                let mapped = match iso_map {
                    Some(lin) => lin.forward(tape, store, h_iso)?,
                    None => h_iso,
                };
                parts.push(tape.scatter_add_rows(mapped, iso.clone(), n)?);
            }
            let mut out = parts[0];
            for &p in &parts[1..] {
                out = tape.add(out, p)?;
            }
            Ok((out, beta))
        };
        let (primal_out, beta_primal) = combine(true)?;
        let (dual_out, beta_dual) = combine(false)?;
        Ok(HgaOutput {
            primal: primal_out,
            dual: dual_out,
            edges: edge_out,
            alpha,
            beta_primal,
            beta_dual,
        })
    }
}

fn expect(tape: &Tape, v: Var, rows: usize, cols: usize, what: &str) -> Result<(), NnError> {
    if tape.shape(v) != (rows, cols) {
        return Err(NnError::ShapeMismatch(format!(
            "{what}: expected {rows}x{cols}, got {:?}",
            tape.shape(v)
        )));
    }
    Ok(())
}
