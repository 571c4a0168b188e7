//! Weighted automata in the log semiring: CTC topology, alignment lattices,
//! denominator graphs and the frame-synchronous forward–backward pass.

mod compose;
mod ctc;
mod fb;
mod fsa;

pub use compose::compose_denominator;
pub use ctc::{build_ctc_topology, build_numerator, collapse, min_frames};
pub use fb::{forward_backward, ForwardBackward};
pub use fsa::{Arc, FsaInfo, Sym, WeightedFsa};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("no accepting path of length {frames}")]
    NoPath { frames: usize },
    #[error("vocabulary mismatch: graph has {expected} labels, other side has {found}")]
    VocabMismatch { expected: usize, found: usize },
    #[error("composition produced an empty graph")]
    Degenerate,
    #[error("invalid graph: {0}")]
    Invalid(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}
