use std::collections::{HashMap, VecDeque};

use super::fsa::{Sym, WeightedFsa};
use super::GraphError;

/// Composes the CTC topology (frame symbol → label) with a label acceptor.
///
/// The label acceptor's epsilon arcs are backoff arcs and are resolved as
/// failure transitions: for a label emitted by the topology, an explicit arc
/// is taken when one exists, otherwise backoff arcs are followed (adding
/// their weights) until one does. The result is an epsilon-free, trimmed
/// acceptor over frame symbols in which every length-T path π carries the
/// weight `log p(B(π))`.
pub fn compose_denominator(topology: &WeightedFsa, lm: &WeightedFsa) -> Result<WeightedFsa, GraphError> {
    if topology.vocab_size() != lm.vocab_size() {
        return Err(GraphError::VocabMismatch {
            expected: topology.vocab_size(),
            found: lm.vocab_size(),
        });
    }
    if !topology.is_epsilon_free() {
        return Err(GraphError::Invalid("topology must consume a frame symbol on every arc".into()));
    }
    for s in 0..lm.num_states() {
        if lm.arcs(s).iter().filter(|a| a.ilabel == Sym::Eps).count() > 1 {
            return Err(GraphError::Invalid(format!("label acceptor state {s} has several backoff arcs")));
        }
    }

    let mut out = WeightedFsa::new(topology.vocab_size());
    let mut ids: HashMap<(usize, usize), usize> = HashMap::from([((0, 0), 0)]);
    let mut queue = VecDeque::from([(0usize, 0usize)]);
    // Memoized failure-resolved label transitions of the acceptor.
    let mut step_cache: HashMap<(usize, u32), Option<(usize, f64)>> = HashMap::new();

    while let Some((ts, ls)) = queue.pop_front() {
        let src = ids[&(ts, ls)];
        if let (Some(tf), Some(lf)) = (topology.final_weight(ts), lm.failure_final(ls)) {
            out.set_final(src, tf + lf);
        }
        for arc in topology.arcs(ts) {
            let (lnext, lw) = match arc.olabel {
                Sym::Eps => (ls, 0.0),
                Sym::Tok(k) => {
                    match *step_cache
                        .entry((ls, k))
                        .or_insert_with(|| lm.failure_step(ls, Sym::Tok(k)))
                    {
                        Some(t) => t,
                        None => continue,
                    }
                }
                Sym::Blank => {
                    return Err(GraphError::Invalid("topology emits blank on its output side".into()));
                }
            };
            let key = (arc.next, lnext);
            let dst = match ids.get(&key) {
                Some(&d) => d,
                None => {
                    let d = out.add_state();
                    ids.insert(key, d);
                    queue.push_back(key);
                    d
                }
            };
            out.add_label_arc(src, arc.ilabel, arc.weight + lw, dst);
        }
    }
    out.trim().ok_or(GraphError::Degenerate)
}
