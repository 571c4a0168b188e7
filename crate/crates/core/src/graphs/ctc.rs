use super::fsa::{Sym, WeightedFsa};
use super::GraphError;

/// Collapse map: merge consecutive repeats, then drop blanks.
pub fn collapse(path: &[Sym]) -> Vec<u32> {
    let mut out = Vec::new();
    let mut prev = None;
    for &s in path {
        if prev != Some(s) {
            if let Sym::Tok(k) = s {
                out.push(k);
            }
        }
        prev = Some(s);
    }
    out
}

/// CTC topology with `V + 1` states: state 0 follows a blank (and is the
/// start), state `k + 1` follows token `k`. Input labels are frame symbols;
/// output labels carry the collapsed label, or epsilon for blanks and repeats.
/// All weights are zero and every state is final.
pub fn build_ctc_topology(vocab_size: usize) -> Result<WeightedFsa, GraphError> {
    if vocab_size == 0 {
        return Err(GraphError::Invalid("vocabulary must contain at least one label".into()));
    }
    let mut fsa = WeightedFsa::new(vocab_size);
    for _ in 0..vocab_size {
        fsa.add_state();
    }
    for s in 0..=vocab_size {
        fsa.add_arc(s, Sym::Blank, Sym::Eps, 0.0, 0);
        for k in 0..vocab_size {
            let dst = k + 1;
            let out = if s == dst { Sym::Eps } else { Sym::Tok(k as u32) };
            fsa.add_arc(s, Sym::Tok(k as u32), out, 0.0, dst);
        }
        fsa.set_final(s, 0.0);
    }
    Ok(fsa)
}

/// Alignment lattice of `labels`: an initial state followed by one state per
/// position of the blank-interleaved sequence `(∅ l1 ∅ l2 … lU ∅)`, so
/// `2U + 2` states in total. Length-T paths are exactly the frame sequences
/// that collapse to `labels`.
pub fn build_numerator(labels: &[u32], vocab_size: usize) -> Result<WeightedFsa, GraphError> {
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= vocab_size) {
        return Err(GraphError::Invalid(format!(
            "label {bad} outside vocabulary of size {vocab_size}"
        )));
    }
    let ext: Vec<Sym> = std::iter::once(Sym::Blank)
        .chain(labels.iter().flat_map(|&l| [Sym::Tok(l), Sym::Blank]))
        .collect();
    let mut fsa = WeightedFsa::new(vocab_size);
    for _ in 0..ext.len() {
        fsa.add_state();
    }
    let state = |j: usize| j + 1;
    fsa.add_label_arc(0, ext[0], 0.0, state(0));
    if ext.len() > 1 {
        fsa.add_label_arc(0, ext[1], 0.0, state(1));
    }
    for j in 0..ext.len() {
        fsa.add_label_arc(state(j), ext[j], 0.0, state(j));
        if j + 1 < ext.len() {
            fsa.add_label_arc(state(j), ext[j + 1], 0.0, state(j + 1));
        }
        if j + 2 < ext.len() && ext[j + 2] != Sym::Blank && ext[j + 2] != ext[j] {
            fsa.add_label_arc(state(j), ext[j + 2], 0.0, state(j + 2));
        }
    }
    let last = ext.len() - 1;
    fsa.set_final(state(last), 0.0);
    if last >= 1 {
        fsa.set_final(state(last - 1), 0.0);
    }
    Ok(fsa)
}

/// Fewest frames any alignment of `labels` needs (one extra per adjacent repeat).
pub fn min_frames(labels: &[u32]) -> usize {
    labels.len() + labels.windows(2).filter(|w| w[0] == w[1]).count()
}
