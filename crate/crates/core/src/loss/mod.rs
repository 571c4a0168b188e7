//! CTC and CTC-CRF sequence losses with exact gradients with respect to the
//! per-frame log-probabilities.

pub mod oracle;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graphs::{build_numerator, forward_backward, min_frames, GraphError, WeightedFsa};
use crate::labellm::{LmError, NGramLabelLm};
use crate::logmath::log_sum_exp;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("{frames} frames cannot align {labels} labels (need at least {min_frames})")]
    NoPath {
        frames: usize,
        labels: usize,
        min_frames: usize,
    },
    #[error("vocabulary mismatch: log-probabilities cover {logprobs} labels + blank but {what} has {other}")]
    VocabMismatch {
        logprobs: usize,
        what: &'static str,
        other: usize,
    },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("instance too large for enumeration: {0} paths")]
    TooLarge(f64),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Lm(#[from] LmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Ctc,
    CtcCrf,
}

/// T×(V+1) per-frame scores; column `V` is blank.
#[derive(Debug, Clone, PartialEq)]
pub struct LogProbMatrix {
    frames: usize,
    cols: usize,
    data: Vec<f64>,
}

impl LogProbMatrix {
    /// Log-softmax output: every row must log-sum-exp to 0 within 1e-6.
    pub fn new(frames: usize, cols: usize, data: Vec<f64>) -> Result<Self, LossError> {
        let m = Self::from_potentials(frames, cols, data)?;
        for t in 0..frames {
            let z = log_sum_exp(m.row(t));
            if z.abs() > 1e-6 {
                return Err(LossError::Invalid(format!(
                    "row {t} is not log-normalized (log-sum-exp {z:.3e})"
                )));
            }
        }
        Ok(m)
    }

    /// Arbitrary finite node potentials (rows need not be normalized).
    pub fn from_potentials(frames: usize, cols: usize, data: Vec<f64>) -> Result<Self, LossError> {
        if frames == 0 || cols < 2 {
            return Err(LossError::Invalid(format!("shape {frames}x{cols} needs T >= 1 and at least one label plus blank")));
        }
        if data.len() != frames * cols {
            return Err(LossError::Invalid(format!("{} values for shape {frames}x{cols}", data.len())));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(LossError::Invalid(format!(
                "non-finite score at frame {}, column {}",
                i / cols,
                i % cols
            )));
        }
        Ok(Self { frames, cols, data })
    }

    /// Applies a row-wise log-softmax to raw logits.
    pub fn from_logits(frames: usize, cols: usize, logits: &[f64]) -> Result<Self, LossError> {
        let mut data = logits.to_vec();
        for row in data.chunks_mut(cols.max(1)) {
            let z = log_sum_exp(row);
            row.iter_mut().for_each(|v| *v -= z);
        }
        Self::from_potentials(frames, cols, data)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Number of non-blank labels.
    pub fn vocab_size(&self) -> usize {
        self.cols - 1
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.cols..(t + 1) * self.cols]
    }

    pub fn get(&self, t: usize, k: usize) -> f64 {
        self.data[t * self.cols + k]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub loss: f64,
    /// ∂loss/∂scores, T×(V+1) row-major.
    pub grad: Vec<f64>,
    pub frames: usize,
    pub cols: usize,
}

impl LossResult {
    pub fn grad_row(&self, t: usize) -> &[f64] {
        &self.grad[t * self.cols..(t + 1) * self.cols]
    }
}

fn check_labels(scores: &LogProbMatrix, labels: &[u32]) -> Result<(), LossError> {
    let v = scores.vocab_size();
    if let Some(&l) = labels.iter().find(|&&l| l as usize >= v) {
        return Err(LossError::Invalid(format!("label {l} outside vocabulary of size {v}")));
    }
    let need = min_frames(labels);
    if scores.frames() < need {
        return Err(LossError::NoPath {
            frames: scores.frames(),
            labels: labels.len(),
            min_frames: need,
        });
    }
    Ok(())
}

/// `−ln Σ_{π ∈ B⁻¹(l)} Π_t p(π_t | x)`; gradient is minus the alignment occupancy.
pub fn ctc_loss(scores: &LogProbMatrix, labels: &[u32]) -> Result<LossResult, LossError> {
    check_labels(scores, labels)?;
    let num = build_numerator(labels, scores.vocab_size())?;
    let fb = forward_backward(&num, scores)?;
    Ok(LossResult {
        loss: -fb.log_z,
        grad: fb.occupancy.iter().map(|o| -o).collect(),
        frames: scores.frames(),
        cols: scores.cols(),
    })
}

/// CTC-CRF loss `−[log Z_num + log p(l)] + log Z_den` with gradient
/// `occupancy_den − occupancy_num`.
pub fn crf_loss(
    scores: &LogProbMatrix,
    labels: &[u32],
    den: &WeightedFsa,
    lm: &NGramLabelLm,
) -> Result<LossResult, LossError> {
    if lm.vocab_size() != scores.vocab_size() {
        return Err(LossError::VocabMismatch {
            logprobs: scores.vocab_size(),
            what: "label LM",
            other: lm.vocab_size(),
        });
    }
    check_labels(scores, labels)?;
    let lm_term = lm.score_sequence(labels)?;
    crf_loss_with_lm_term(scores, labels, den, lm_term)
}

/// As [`crf_loss`], with the numerator edge potential `log p(l)` supplied.
pub fn crf_loss_with_lm_term(
    scores: &LogProbMatrix,
    labels: &[u32],
    den: &WeightedFsa,
    lm_term: f64,
) -> Result<LossResult, LossError> {
    if den.vocab_size() != scores.vocab_size() {
        return Err(LossError::VocabMismatch {
            logprobs: scores.vocab_size(),
            what: "denominator graph",
            other: den.vocab_size(),
        });
    }
    check_labels(scores, labels)?;
    let num = build_numerator(labels, scores.vocab_size())?;
    let fb_num = forward_backward(&num, scores)?;
    let fb_den = forward_backward(den, scores)?;
    let grad = fb_den
        .occupancy
        .iter()
        .zip(&fb_num.occupancy)
        .map(|(d, n)| d - n)
        .collect();
    Ok(LossResult {
        loss: -(fb_num.log_z + lm_term) + fb_den.log_z,
        grad,
        frames: scores.frames(),
        cols: scores.cols(),
    })
}

/// Shared context for computing either loss over a batch.
#[derive(Debug, Clone, Copy)]
pub enum Criterion<'a> {
    Ctc,
    CtcCrf { den: &'a WeightedFsa, lm: &'a NGramLabelLm },
}

impl Criterion<'_> {
    pub fn compute(&self, scores: &LogProbMatrix, labels: &[u32]) -> Result<LossResult, LossError> {
        match self {
            Criterion::Ctc => ctc_loss(scores, labels),
            Criterion::CtcCrf { den, lm } => crf_loss(scores, labels, den, lm),
        }
    }
}

/// Per-utterance results computed in parallel, returned in input order,
/// plus the mean loss accumulated sequentially.
pub fn batch_loss(
    criterion: Criterion<'_>,
    items: &[(LogProbMatrix, Vec<u32>)],
) -> Result<(f64, Vec<LossResult>), LossError> {
    let results: Vec<LossResult> = items
        .par_iter()
        .map(|(s, l)| criterion.compute(s, l))
        .collect::<Result<_, _>>()?;
    let mean = results.iter().map(|r| r.loss).sum::<f64>() / results.len().max(1) as f64;
    Ok((mean, results))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::{build_ctc_topology, compose_denominator};
    use crate::labellm::lm_to_fsa;

    fn uniform(t: usize, cols: usize) -> LogProbMatrix {
        LogProbMatrix::new(t, cols, vec![-(cols as f64).ln(); t * cols]).unwrap()
    }

    /// p(()) = 0.4, p((a)) = 0.6, nothing longer.
    pub(crate) fn worked_example_lm() -> NGramLabelLm {
        let (p_empty, p_a) = (0.4f64.log10(), 0.6f64.log10());
        let text = format!(
            "\\data\\\nngram 1=3\nngram 2=3\n\n\\1-grams:\n-0.30103\t0\t-99\n-0.30103\t</s>\n-99\t<s>\t0\n\n\\2-grams:\n{p_a}\t<s> 0\n{p_empty}\t<s> </s>\n0\t0 </s>\n\n\\end\\\n"
        );
        NGramLabelLm::import_arpa(&text).unwrap()
    }

    #[test]
    fn ctc_three_alignments() {
        let r = ctc_loss(&uniform(2, 2), &[0]).unwrap();
        assert!((r.loss - (-(0.75f64).ln())).abs() < 1e-12);
        assert!((r.loss - 0.287682).abs() < 1e-6);
        for t in 0..2 {
            assert!((r.grad_row(t).iter().sum::<f64>() + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ctc_single_frame() {
        let lp = LogProbMatrix::from_logits(1, 3, &[0.3, -1.0, 0.2]).unwrap();
        let r = ctc_loss(&lp, &[1]).unwrap();
        assert!((r.loss + lp.get(0, 1)).abs() < 1e-12);
    }

    #[test]
    fn ctc_too_short_is_no_path() {
        let err = ctc_loss(&uniform(2, 2), &[0, 0]).unwrap_err();
        assert!(matches!(err, LossError::NoPath { frames: 2, min_frames: 3, .. }));
    }

    #[test]
    fn rejects_unnormalized_and_nonfinite() {
        assert!(LogProbMatrix::new(1, 2, vec![0.0, 0.0]).is_err());
        assert!(LogProbMatrix::new(1, 2, vec![0.0, f64::NEG_INFINITY]).is_err());
        assert!(LogProbMatrix::from_potentials(1, 2, vec![0.0, 0.0]).is_ok());
    }

    #[test]
    fn crf_worked_example() {
        let lm = worked_example_lm();
        let den = compose_denominator(&build_ctc_topology(1).unwrap(), &lm_to_fsa(&lm)).unwrap();
        let r = crf_loss(&uniform(2, 2), &[0], &den, &lm).unwrap();
        assert!((r.loss - (11.0f64 / 9.0).ln()).abs() < 1e-12, "{}", r.loss);
        for t in 0..2 {
            assert!(r.grad_row(t).iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn crf_support_equality_gives_zero_loss() {
        // all LM mass on (a); T = 1 so only (a) and (blank) exist
        let text = "\\data\\\nngram 1=3\nngram 2=3\n\n\\1-grams:\n-0.3\t0\t-99\n-0.3\t</s>\n-99\t<s>\t0\n\n\\2-grams:\n0\t<s> 0\n-99\t<s> </s>\n0\t0 </s>\n\n\\end\\\n";
        let lm = NGramLabelLm::import_arpa(text).unwrap();
        let den = compose_denominator(&build_ctc_topology(1).unwrap(), &lm_to_fsa(&lm)).unwrap();
        let lp = LogProbMatrix::from_logits(1, 2, &[5.0, -5.0]).unwrap();
        let r = crf_loss(&lp, &[0], &den, &lm).unwrap();
        assert!(r.loss.abs() < 1e-12);
    }

    #[test]
    fn crf_vocab_mismatch() {
        let lm = worked_example_lm();
        let den = compose_denominator(&build_ctc_topology(1).unwrap(), &lm_to_fsa(&lm)).unwrap();
        let err = crf_loss(&uniform(3, 3), &[0], &den, &lm).unwrap_err();
        assert!(matches!(err, LossError::VocabMismatch { logprobs: 2, other: 1, .. }));
    }

    #[test]
    fn batch_matches_sequential() {
        let items: Vec<(LogProbMatrix, Vec<u32>)> = (0..6)
            .map(|i| {
                let logits: Vec<f64> = (0..12).map(|j| ((i * 7 + j * 3) % 5) as f64 * 0.3).collect();
                (LogProbMatrix::from_logits(4, 3, &logits).unwrap(), vec![(i % 2) as u32])
            })
            .collect();
        let (mean, res) = batch_loss(Criterion::Ctc, &items).unwrap();
        let seq: Vec<f64> = items.iter().map(|(s, l)| ctc_loss(s, l).unwrap().loss).collect();
        for (r, s) in res.iter().zip(&seq) {
            assert_eq!(r.loss, *s);
        }
        assert_eq!(mean, seq.iter().sum::<f64>() / 6.0);
    }
}
