//! GRU cell:
//!
//! ```text
//! z  = σ(W_z [x, h] + b_z)
//! r  = σ(W_r [x, h] + b_r)
//! ñ  = tanh(W_n [x, r ⊙ h] + b_n)
//! h' = (1 − z) ⊙ ñ + z ⊙ h
//! ```

use rand::Rng;

use super::mlp::Linear;
use super::params::ParamStore;
use super::tape::{Tape, Var};
use super::NnError;

#[derive(Debug, Clone, PartialEq)]
pub struct GruCell {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub z: Linear,
    pub r: Linear,
    pub n: Linear,
}

impl GruCell {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let d = input_dim + hidden_dim;
        Ok(Self {
            input_dim,
            hidden_dim,
            z: Linear::new(store, &format!("{name}.z"), d, hidden_dim, true, rng)?,
            r: Linear::new(store, &format!("{name}.r"), d, hidden_dim, true, rng)?,
            n: Linear::new(store, &format!("{name}.n"), d, hidden_dim, true, rng)?,
        })
    }

    /// Row-wise step: `x` is rows×input_dim, `h` rows×hidden_dim.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, h: Var) -> Result<Var, NnError> {
        if tape.shape(x).1 != self.input_dim || tape.shape(h).1 != self.hidden_dim {
            return Err(NnError::ShapeMismatch("gru input or hidden width".into()));
        }
        let xh = tape.concat_cols(&[x, h])?;
        let z = self.z.forward(tape, store, xh)?;
        let z = tape.sigmoid(z);
        let r = self.r.forward(tape, store, xh)?;
        let r = tape.sigmoid(r);
        let rh = tape.mul(r, h)?;
        let xrh = tape.concat_cols(&[x, rh])?;
        let n = self.n.forward(tape, store, xrh)?;
        let n = tape.tanh(n);
        // (1 − z)⊙ñ + z⊙h = ñ + z⊙(h − ñ)
        let diff = tape.sub(h, n)?;
        let zd = tape.mul(z, diff)?;
        tape.add(n, zd)
    }
}
