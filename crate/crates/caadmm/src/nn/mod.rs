//! Small dense neural-network stack with reverse-mode gradients: MLPs, a
//! heterogeneous graph-attention layer, a GRU cell, Adam and checkpoints.

pub mod checkpoint;
pub mod gru;
pub mod hga;
pub mod mlp;
pub mod params;
pub mod tape;

use thiserror::Error;

pub use checkpoint::Checkpoint;
pub use gru::GruCell;
pub use hga::{EdgeType, HgaLayer, Topology};
pub use mlp::{Activation, Linear, Mlp, MlpSpec};
pub use params::{Adam, ParamId, ParamStore};
pub use tape::{Gradients, Mat, Tape, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("backward called without a recorded forward pass")]
    NoRecordedForward,
    #[error("duplicate parameter name {0}")]
    DuplicateName(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// `(tanh(x) + 1)·3 − 3`, i.e. `3·tanh(x)`, with range (−3, 3).
pub fn exptanh(x: f64) -> f64 {
    (x.tanh() + 1.0) * 3.0 - 3.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exptanh_values() {
        assert_eq!(exptanh(0.0), 0.0);
        assert!((exptanh(1.0) - 3.0 * 1f64.tanh()).abs() < 1e-15);
        assert!((exptanh(1.0) - 2.28478).abs() < 1e-5);
        assert!(exptanh(50.0) <= 3.0 && exptanh(-50.0) >= -3.0);
    }
}
