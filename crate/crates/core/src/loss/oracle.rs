//! Exhaustive-enumeration references for the sequence losses. These walk all
//! `(V+1)^T` frame paths directly and share no code with the graph-based path.

use super::{LogProbMatrix, LossError};
use crate::labellm::NGramLabelLm;
use crate::logmath::{log_sum_exp, NEG_INF};

const MAX_PATHS: f64 = 1e6;

fn collapse_columns(path: &[usize], blank: usize) -> Vec<u32> {
    let mut out = Vec::new();
    for (i, &c) in path.iter().enumerate() {
        if c != blank && (i == 0 || path[i - 1] != c) {
            out.push(c as u32);
        }
    }
    out
}

/// Calls `f(path, node_potential)` for every frame path.
fn for_each_path(scores: &LogProbMatrix, mut f: impl FnMut(&[usize], f64)) -> Result<(), LossError> {
    let (t, cols) = (scores.frames(), scores.cols());
    let count = (cols as f64).powi(t as i32);
    if count > MAX_PATHS {
        return Err(LossError::TooLarge(count));
    }
    let mut path = vec![0usize; t];
    loop {
        let node: f64 = path.iter().enumerate().map(|(i, &c)| scores.get(i, c)).sum();
        f(&path, node);
        let mut i = 0;
        loop {
            if i == t {
                return Ok(());
            }
            path[i] += 1;
            if path[i] < cols {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}

pub fn brute_force_ctc(scores: &LogProbMatrix, labels: &[u32]) -> Result<f64, LossError> {
    let blank = scores.vocab_size();
    let mut terms = Vec::new();
    for_each_path(scores, |p, node| {
        if collapse_columns(p, blank) == labels {
            terms.push(node);
        }
    })?;
    Ok(-log_sum_exp(&terms))
}

/// Direct evaluation of the CTC-CRF loss: numerator over `B⁻¹(l)`,
/// denominator over every path, each path weighted by `p(B(π))`.
pub fn brute_force_crf(scores: &LogProbMatrix, labels: &[u32], lm: &NGramLabelLm) -> Result<f64, LossError> {
    let blank = scores.vocab_size();
    let mut num = Vec::new();
    let mut den = Vec::new();
    let mut err = None;
    for_each_path(scores, |p, node| {
        let l = collapse_columns(p, blank);
        match lm.score_sequence(&l) {
            Ok(edge) => {
                let phi = node + edge;
                if l == labels {
                    num.push(phi);
                }
                den.push(phi);
            }
            Err(e) => err = Some(e),
        }
    })?;
    if let Some(e) = err {
        return Err(e.into());
    }
    let num = log_sum_exp(&num);
    if num == NEG_INF {
        return Err(LossError::NoPath {
            frames: scores.frames(),
            labels: labels.len(),
            min_frames: crate::graphs::min_frames(labels),
        });
    }
    Ok(-num + log_sum_exp(&den))
}
