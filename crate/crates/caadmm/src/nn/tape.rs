//! Reverse-mode autodiff over dense 2-D arrays.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters enter
//! through [`Tape::param`], constants through [`Tape::constant`]. After
//! [`Tape::backward`] on a 1×1 loss, parameter gradients are added into their
//! [`ParamStore`] with [`Tape::accumulate`].

use std::sync::Arc;

use ndarray::{s, Array2, Axis, Zip};

use super::params::{ParamId, ParamStore};
use super::NnError;

pub type Mat = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    ExpTanh(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    GatherRows(Var, Arc<Vec<usize>>),
    ScatterAddRows(Var, Arc<Vec<usize>>),
    SegmentSoftmax(Var, Arc<Vec<usize>>),
    RowScale(Var, Var),
    SegmentArg(Var, Vec<usize>),
    Mean(Var),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Mat,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(u64, ParamId, Var)>,
}

/// Gradients of one scalar with respect to every recorded node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    /// Gradient for the leaf `v` (parameter or constant), or `None` if `v`
    /// does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

pub const LEAKY_SLOPE: f64 = 0.01;

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Mat) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(Op::Leaf, value)
    }

    /// Leaf holding a parameter's current value. Repeated calls for the same
    /// parameter return the same variable.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let uid = store.uid();
        if let Some(&(_, _, v)) = self.params.iter().find(|(u, p, _)| *u == uid && *p == id) {
            return v;
        }
        let v = self.push(Op::Leaf, store.value(id).clone());
        self.params.push((uid, id, v));
        v
    }

    fn check(&self, cond: bool, what: &str) -> Result<(), NnError> {
        if cond {
            Ok(())
        } else {
            Err(NnError::ShapeMismatch(what.to_string()))
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        self.check(ca == rb, &format!("matmul {ra}x{ca} by {rb}x{cb}"))?;
        let v = self.value(a).dot(self.value(b));
        Ok(self.push(Op::MatMul(a, b), v))
    }

    /// `a + b` with `b` a 1×k row broadcast over the rows of `a`.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (_, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        self.check(rb == 1 && cb == ca, "add_bias")?;
        let v = self.value(a) + self.value(b);
        Ok(self.push(Op::AddBias(a, b), v))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<(), NnError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        self.check(sa == sb, &format!("{what}: {sa:?} vs {sb:?}"))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_shape(a, b, "add")?;
        let v = self.value(a) + self.value(b);
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_shape(a, b, "sub")?;
        let v = self.value(a) - self.value(b);
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_shape(a, b, "mul")?;
        let v = self.value(a) * self.value(b);
        Ok(self.push(Op::Mul(a, b), v))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(Op::Scale(a, c), v)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) + c;
        self.push(Op::AddConst(a), v)
    }

    pub fn leaky_relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| if x > 0.0 { x } else { LEAKY_SLOPE * x });
        self.push(Op::LeakyRelu(a, LEAKY_SLOPE), v)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(Op::Tanh(a), v)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(Op::Sigmoid(a), v)
    }

    pub fn exptanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(super::exptanh);
        self.push(Op::ExpTanh(a), v)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let rows = self.shape(parts[0]).0;
        self.check(parts.iter().all(|&p| self.shape(p).0 == rows), "concat_cols rows")?;
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("row counts checked");
        Ok(self.push(Op::ConcatCols(parts.to_vec()), v))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let cols = self.shape(parts[0]).1;
        self.check(parts.iter().all(|&p| self.shape(p).1 == cols), "concat_rows cols")?;
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("column counts checked");
        Ok(self.push(Op::ConcatRows(parts.to_vec()), v))
    }

    /// Rows `start..start + len` of `a`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NnError> {
        self.check(start + len <= self.shape(a).0, "slice_rows range")?;
        let v = self.value(a).slice(s![start..start + len, ..]).to_owned();
        Ok(self.push(Op::SliceRows(a, start), v))
    }

    /// `out[k] = a[idx[k]]`.
    pub fn gather_rows(&mut self, a: Var, idx: Arc<Vec<usize>>) -> Result<Var, NnError> {
        let (rows, cols) = self.shape(a);
        self.check(idx.iter().all(|&i| i < rows), "gather_rows index")?;
        let src = self.value(a);
        let mut v = Mat::zeros((idx.len(), cols));
        for (k, &i) in idx.iter().enumerate() {
            v.row_mut(k).assign(&src.row(i));
        }
        Ok(self.push(Op::GatherRows(a, idx), v))
    }

    /// `out[idx[k]] += a[k]` into an `out_rows`-row result.
    pub fn scatter_add_rows(&mut self, a: Var, idx: Arc<Vec<usize>>, out_rows: usize) -> Result<Var, NnError> {
        let (rows, cols) = self.shape(a);
        self.check(idx.len() == rows && idx.iter().all(|&i| i < out_rows), "scatter_add_rows")?;
        let src = self.value(a);
        let mut v = Mat::zeros((out_rows, cols));
        for (k, &i) in idx.iter().enumerate() {
            let mut r = v.row_mut(i);
            r += &src.row(k);
        }
        Ok(self.push(Op::ScatterAddRows(a, idx), v))
    }

    /// Softmax of the single column `a` within groups given by `seg`.
    pub fn segment_softmax(&mut self, a: Var, seg: Arc<Vec<usize>>, n_seg: usize) -> Result<Var, NnError> {
        let (rows, cols) = self.shape(a);
        self.check(cols == 1 && seg.len() == rows, "segment_softmax")?;
        let x = self.value(a);
        let mut mx = vec![f64::NEG_INFINITY; n_seg];
        for (k, &g) in seg.iter().enumerate() {
            mx[g] = mx[g].max(x[[k, 0]]);
        }
        let mut e = Mat::zeros((rows, 1));
        let mut den = vec![0.0; n_seg];
        for (k, &g) in seg.iter().enumerate() {
            let v = (x[[k, 0]] - mx[g]).exp();
            e[[k, 0]] = v;
            den[g] += v;
        }
        for (k, &g) in seg.iter().enumerate() {
            e[[k, 0]] /= den[g];
        }
        Ok(self.push(Op::SegmentSoftmax(a, seg), e))
    }

    /// Multiplies row `k` of `a` by the scalar `s[k]` (`s` is a column).
    pub fn row_scale(&mut self, a: Var, s: Var) -> Result<Var, NnError> {
        let (ra, _) = self.shape(a);
        self.check(self.shape(s) == (ra, 1), "row_scale")?;
        let v = self.value(a) * self.value(s);
        Ok(self.push(Op::RowScale(a, s), v))
    }

    fn segment_extreme(&mut self, a: Var, seg: &[usize], n_seg: usize, take_max: bool) -> Result<Var, NnError> {
        let (rows, cols) = self.shape(a);
        self.check(seg.len() == rows, "segment reduction")?;
        let x = self.value(a);
        let mut arg = vec![usize::MAX; n_seg * cols];
        let mut out = Mat::zeros((n_seg, cols));
        for (k, &g) in seg.iter().enumerate() {
            for c in 0..cols {
                let slot = g * cols + c;
                let v = x[[k, c]];
                let better = arg[slot] == usize::MAX || if take_max { v > out[[g, c]] } else { v < out[[g, c]] };
                if better {
                    arg[slot] = k;
                    out[[g, c]] = v;
                }
            }
        }
        self.check(arg.iter().all(|&a| a != usize::MAX), "empty segment in reduction")?;
        Ok(self.push(Op::SegmentArg(a, arg), out))
    }

    pub fn segment_max(&mut self, a: Var, seg: &[usize], n_seg: usize) -> Result<Var, NnError> {
        self.segment_extreme(a, seg, n_seg, true)
    }

    pub fn segment_min(&mut self, a: Var, seg: &[usize], n_seg: usize) -> Result<Var, NnError> {
        self.segment_extreme(a, seg, n_seg, false)
    }

    /// Mean of all entries, as a 1×1 array.
    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a).mean().unwrap_or(0.0);
        self.push(Op::Mean(a), Mat::from_elem((1, 1), v))
    }

    /// Reverse sweep from the 1×1 node `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NnError> {
        if loss.0 >= self.nodes.len() {
            return Err(NnError::NoRecordedForward);
        }
        if self.shape(loss) != (1, 1) {
            return Err(NnError::ShapeMismatch("loss must be 1x1".into()));
        }
        let mut grads: Vec<Option<Mat>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Mat::from_elem((1, 1), 1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => grads[idx] = Some(g),
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::AddBias(a, b) => {
                    acc(&mut grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads, *a, g);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, -&g);
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    acc(&mut grads, *a, &g * self.value(*b));
                    acc(&mut grads, *b, g * self.value(*a));
                }
                Op::Scale(a, c) => acc(&mut grads, *a, g * *c),
                Op::AddConst(a) => acc(&mut grads, *a, g),
                Op::LeakyRelu(a, slope) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(self.value(*a))
                        .for_each(|g, &x| {
                            if x <= 0.0 {
                                *g *= slope
                            }
                        });
                    acc(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(&node.value).for_each(|g, &y| *g *= 1.0 - y * y);
                    acc(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(&node.value).for_each(|g, &y| *g *= y * (1.0 - y));
                    acc(&mut grads, *a, ga);
                }
                Op::ExpTanh(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(self.value(*a)).for_each(|g, &x| {
                        let t = x.tanh();
                        *g *= 3.0 * (1.0 - t * t)
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut c0 = 0;
                    for &p in parts {
                        let w = self.shape(p).1;
                        acc(&mut grads, p, g.slice(s![.., c0..c0 + w]).to_owned());
                        c0 += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut r0 = 0;
                    for &p in parts {
                        let h = self.shape(p).0;
                        acc(&mut grads, p, g.slice(s![r0..r0 + h, ..]).to_owned());
                        r0 += h;
                    }
                }
                Op::SliceRows(a, start) => {
                    let mut ga = Mat::zeros(self.shape(*a));
                    let h = g.nrows();
                    ga.slice_mut(s![*start..*start + h, ..]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::GatherRows(a, ix) => {
                    let mut ga = Mat::zeros(self.shape(*a));
                    for (k, &i) in ix.iter().enumerate() {
                        let mut r = ga.row_mut(i);
                        r += &g.row(k);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::ScatterAddRows(a, ix) => {
                    let mut ga = Mat::zeros(self.shape(*a));
                    for (k, &i) in ix.iter().enumerate() {
                        ga.row_mut(k).assign(&g.row(i));
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SegmentSoftmax(a, seg) => {
                    let y = &node.value;
                    let n_seg = seg.iter().max().map_or(0, |m| m + 1);
                    let mut dot = vec![0.0; n_seg];
                    for (k, &s) in seg.iter().enumerate() {
                        dot[s] += g[[k, 0]] * y[[k, 0]];
                    }
                    let mut ga = Mat::zeros(y.dim());
                    for (k, &s) in seg.iter().enumerate() {
                        ga[[k, 0]] = y[[k, 0]] * (g[[k, 0]] - dot[s]);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::RowScale(a, sv) => {
                    let av = self.value(*a);
                    let gs = (&g * av).sum_axis(Axis(1)).insert_axis(Axis(1));
                    acc(&mut grads, *a, g * self.value(*sv));
                    acc(&mut grads, *sv, gs);
                }
                Op::SegmentArg(a, arg) => {
                    let cols = g.ncols();
                    let mut ga = Mat::zeros(self.shape(*a));
                    for (slot, &k) in arg.iter().enumerate() {
                        let (grp, c) = (slot / cols, slot % cols);
                        ga[[k, c]] += g[[grp, c]];
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Mean(a) => {
                    let shape = self.shape(*a);
                    let n = (shape.0 * shape.1).max(1) as f64;
                    acc(&mut grads, *a, Mat::from_elem(shape, g[[0, 0]] / n));
                }
            }
        }
        Ok(Gradients { grads })
    }

    /// Adds the gradients of every parameter of `store` used on this tape
    /// into the store's gradient slots.
    pub fn accumulate(&self, grads: &Gradients, store: &mut ParamStore) {
        let uid = store.uid();
        for &(u, id, v) in &self.params {
            if u == uid {
                if let Some(g) = grads.get(v) {
                    store.add_grad(id, g);
                }
            }
        }
    }
}

fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot => *slot = Some(g),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
