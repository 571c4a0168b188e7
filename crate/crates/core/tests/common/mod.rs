#![allow(dead_code)]

use ctccrf::labellm::{estimate_ngram, NGramLabelLm};
use ctccrf::loss::LogProbMatrix;
use rand::Rng;

pub fn random_sequences<R: Rng>(rng: &mut R, count: usize, vocab: usize, max_len: usize) -> Vec<Vec<u32>> {
    (0..count)
        .map(|_| {
            let len = rng.random_range(0..=max_len);
            (0..len).map(|_| rng.random_range(0..vocab as u32)).collect()
        })
        .collect()
}

pub fn random_lm<R: Rng>(rng: &mut R, vocab: usize, order: usize) -> NGramLabelLm {
    let corpus = random_sequences(rng, 20, vocab, 5);
    estimate_ngram(&corpus, order, vocab).unwrap()
}

/// Row-normalized random log-probabilities.
pub fn random_logprobs<R: Rng>(rng: &mut R, frames: usize, cols: usize) -> LogProbMatrix {
    let logits: Vec<f64> = (0..frames * cols).map(|_| rng.random_range(-3.0..3.0)).collect();
    LogProbMatrix::from_logits(frames, cols, &logits).unwrap()
}

pub fn random_labels<R: Rng>(rng: &mut R, vocab: usize, max_len: usize, frames: usize) -> Vec<u32> {
    loop {
        let len = rng.random_range(0..=max_len);
        let l: Vec<u32> = (0..len).map(|_| rng.random_range(0..vocab as u32)).collect();
        if ctccrf::graphs::min_frames(&l) <= frames {
            return l;
        }
    }
}

/// Bigram LM over one label with p(()) = 0.4 and p((a)) = 0.6.
pub fn worked_example_lm() -> NGramLabelLm {
    let (p_empty, p_a) = (0.4f64.log10(), 0.6f64.log10());
    let text = format!(
        "\\data\\\nngram 1=3\nngram 2=3\n\n\\1-grams:\n-0.30103\t0\t-99\n-0.30103\t</s>\n-99\t<s>\t0\n\n\\2-grams:\n{p_a}\t<s> 0\n{p_empty}\t<s> </s>\n0\t0 </s>\n\n\\end\\\n"
    );
    NGramLabelLm::import_arpa(&text).unwrap()
}

pub fn all_state_sequences(vocab: usize, len: usize) -> Vec<Vec<usize>> {
    let cols = vocab + 1;
    let total = cols.pow(len as u32);
    (0..total)
        .map(|mut code| {
            (0..len)
                .map(|_| {
                    let c = code % cols;
                    code /= cols;
                    c
                })
                .collect()
        })
        .collect()
}
