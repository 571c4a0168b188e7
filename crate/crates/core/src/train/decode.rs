use super::TrainError;
use crate::graphs::{collapse, Sym};
use crate::loss::LogProbMatrix;

/// Collapse of the framewise argmax path. Ties go to the lowest column.
pub fn greedy_path(scores: &LogProbMatrix) -> Vec<u32> {
    let v = scores.vocab_size();
    let path: Vec<Sym> = (0..scores.frames())
        .map(|t| {
            let row = scores.row(t);
            let best = (0..row.len()).fold(0, |b, k| if row[k] > row[b] { k } else { b });
            Sym::from_column(best, v)
        })
        .collect();
    collapse(&path)
}

pub fn edit_distance<T: PartialEq>(hyp: &[T], reference: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=reference.len()).collect();
    let mut cur = vec![0; reference.len() + 1];
    for (i, h) in hyp.iter().enumerate() {
        cur[0] = i + 1;
        for (j, r) in reference.iter().enumerate() {
            let sub = prev[j] + usize::from(h != r);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[reference.len()]
}

/// `100 · (S + D + I) / Σ|ref|`.
pub fn token_error_rate<T: PartialEq>(hyps: &[Vec<T>], refs: &[Vec<T>]) -> Result<f64, TrainError> {
    if hyps.len() != refs.len() {
        return Err(TrainError::Score(format!(
            "{} hypotheses for {} references",
            hyps.len(),
            refs.len()
        )));
    }
    let total: usize = refs.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(TrainError::Score("references contain no tokens".into()));
    }
    let errors: usize = hyps.iter().zip(refs).map(|(h, r)| edit_distance(h, r)).sum();
    Ok(100.0 * errors as f64 / total as f64)
}
