use super::fsa::WeightedFsa;
use super::GraphError;
use crate::logmath::{log_add, NEG_INF};
use crate::loss::LogProbMatrix;

/// Result of a forward–backward pass over an epsilon-free graph.
#[derive(Debug, Clone)]
pub struct ForwardBackward {
    /// Total log path mass from the forward recursion.
    pub log_z: f64,
    /// The same quantity from the backward recursion.
    pub log_z_backward: f64,
    /// T×(V+1) posterior that frame t is occupied by symbol k.
    pub occupancy: Vec<f64>,
    pub frames: usize,
    pub cols: usize,
}

impl ForwardBackward {
    pub fn occupancy_row(&self, t: usize) -> &[f64] {
        &self.occupancy[t * self.cols..(t + 1) * self.cols]
    }
}

struct FlatArc {
    src: usize,
    dst: usize,
    col: usize,
    weight: f64,
}

fn flatten(fsa: &WeightedFsa) -> Result<Vec<FlatArc>, GraphError> {
    let v = fsa.vocab_size();
    let mut arcs = Vec::with_capacity(fsa.num_arcs());
    for s in 0..fsa.num_states() {
        for a in fsa.arcs(s) {
            let col = a
                .ilabel
                .column(v)
                .ok_or_else(|| GraphError::Invalid(format!("epsilon arc leaving state {s}")))?;
            arcs.push(FlatArc {
                src: s,
                dst: a.next,
                col,
                weight: a.weight,
            });
        }
    }
    Ok(arcs)
}

/// Sums `exp(path weight + Σ_t scores[t, π_t])` over all accepting length-T
/// paths and returns the per-frame symbol posteriors.
pub fn forward_backward(fsa: &WeightedFsa, scores: &LogProbMatrix) -> Result<ForwardBackward, GraphError> {
    let cols = scores.cols();
    if fsa.vocab_size() + 1 != cols {
        return Err(GraphError::VocabMismatch {
            expected: fsa.vocab_size(),
            found: cols - 1,
        });
    }
    let arcs = flatten(fsa)?;
    let n = fsa.num_states();
    let t_len = scores.frames();

    let mut alpha = vec![NEG_INF; (t_len + 1) * n];
    alpha[fsa.start()] = 0.0;
    for t in 0..t_len {
        let row = scores.row(t);
        let (prev, next) = alpha.split_at_mut((t + 1) * n);
        let prev = &prev[t * n..];
        let next = &mut next[..n];
        for a in &arcs {
            let p = prev[a.src];
            if p == NEG_INF {
                continue;
            }
            next[a.dst] = log_add(next[a.dst], p + a.weight + row[a.col]);
        }
    }

    let mut beta = vec![NEG_INF; (t_len + 1) * n];
    for s in 0..n {
        if let Some(f) = fsa.final_weight(s) {
            beta[t_len * n + s] = f;
        }
    }
    for t in (0..t_len).rev() {
        let row = scores.row(t);
        let (cur, later) = beta.split_at_mut((t + 1) * n);
        let cur = &mut cur[t * n..];
        let later = &later[..n];
        for a in &arcs {
            let b = later[a.dst];
            if b == NEG_INF {
                continue;
            }
            cur[a.src] = log_add(cur[a.src], a.weight + row[a.col] + b);
        }
    }

    let log_z = (0..n)
        .filter_map(|s| fsa.final_weight(s).map(|f| alpha[t_len * n + s] + f))
        .fold(NEG_INF, log_add);
    let log_z_backward = beta[fsa.start()];
    if log_z == NEG_INF {
        return Err(GraphError::NoPath { frames: t_len });
    }

    let mut occupancy = vec![0.0; t_len * cols];
    for t in 0..t_len {
        let row = scores.row(t);
        let occ = &mut occupancy[t * cols..(t + 1) * cols];
        for a in &arcs {
            let lp = alpha[t * n + a.src] + a.weight + row[a.col] + beta[(t + 1) * n + a.dst];
            if lp == NEG_INF {
                continue;
            }
            occ[a.col] += (lp - log_z).exp();
        }
    }
    Ok(ForwardBackward {
        log_z,
        log_z_backward,
        occupancy,
        frames: t_len,
        cols,
    })
}
