use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use super::GraphError;
use crate::logmath::{log_add, NEG_INF};

/// Arc symbol. Frame symbols are `Blank` and `Tok`; `Eps` consumes nothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sym {
    Eps,
    Blank,
    Tok(u32),
}

impl Sym {
    /// Column in a T×(V+1) score matrix; blank is the last column.
    pub fn column(self, vocab_size: usize) -> Option<usize> {
        match self {
            Sym::Eps => None,
            Sym::Blank => Some(vocab_size),
            Sym::Tok(k) => Some(k as usize),
        }
    }

    pub fn from_column(col: usize, vocab_size: usize) -> Sym {
        if col == vocab_size {
            Sym::Blank
        } else {
            Sym::Tok(col as u32)
        }
    }
}

impl fmt::Display for Sym {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sym::Eps => f.write_str("<eps>"),
            Sym::Blank => f.write_str("<blk>"),
            Sym::Tok(k) => write!(f, "{k}"),
        }
    }
}

impl FromStr for Sym {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "<eps>" => Ok(Sym::Eps),
            "<blk>" => Ok(Sym::Blank),
            _ => s
                .parse::<u32>()
                .map(Sym::Tok)
                .map_err(|_| format!("bad symbol {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arc {
    pub ilabel: Sym,
    pub olabel: Sym,
    pub weight: f64,
    pub next: usize,
}

/// Weighted automaton in the log semiring. Weights are log-probabilities:
/// path weight is the sum of arc weights plus the final weight, and
/// alternative paths combine by log-sum-exp. State 0 is the start state.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedFsa {
    arcs: Vec<Vec<Arc>>,
    finals: Vec<Option<f64>>,
    vocab_size: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FsaInfo {
    pub vocab_size: usize,
    pub num_states: usize,
    pub num_arcs: usize,
    pub num_finals: usize,
    pub num_eps_arcs: usize,
    pub acceptor: bool,
}

impl fmt::Display for FsaInfo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "vocab_size\t{}\nstates\t{}\narcs\t{}\nfinals\t{}\neps_arcs\t{}\nacceptor\t{}",
            self.vocab_size, self.num_states, self.num_arcs, self.num_finals, self.num_eps_arcs, self.acceptor
        )
    }
}

impl WeightedFsa {
    /// An automaton with only the start state.
    pub fn new(vocab_size: usize) -> Self {
        Self {
            arcs: vec![Vec::new()],
            finals: vec![None],
            vocab_size,
        }
    }

    pub fn start(&self) -> usize {
        0
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn add_state(&mut self) -> usize {
        self.arcs.push(Vec::new());
        self.finals.push(None);
        self.arcs.len() - 1
    }

    pub fn num_states(&self) -> usize {
        self.arcs.len()
    }

    pub fn num_arcs(&self) -> usize {
        self.arcs.iter().map(Vec::len).sum()
    }

    pub fn arcs(&self, state: usize) -> &[Arc] {
        &self.arcs[state]
    }

    pub fn final_weight(&self, state: usize) -> Option<f64> {
        self.finals[state]
    }

    pub fn set_final(&mut self, state: usize, weight: f64) {
        self.finals[state] = Some(weight);
    }

    pub fn add_arc(&mut self, src: usize, ilabel: Sym, olabel: Sym, weight: f64, next: usize) {
        self.arcs[src].push(Arc {
            ilabel,
            olabel,
            weight,
            next,
        });
    }

    /// Adds an acceptor arc (input label = output label).
    pub fn add_label_arc(&mut self, src: usize, label: Sym, weight: f64, next: usize) {
        self.add_arc(src, label, label, weight, next);
    }

    pub fn is_acceptor(&self) -> bool {
        self.arcs.iter().flatten().all(|a| a.ilabel == a.olabel)
    }

    pub fn is_epsilon_free(&self) -> bool {
        self.arcs.iter().flatten().all(|a| a.ilabel != Sym::Eps)
    }

    pub fn info(&self) -> FsaInfo {
        FsaInfo {
            vocab_size: self.vocab_size,
            num_states: self.num_states(),
            num_arcs: self.num_arcs(),
            num_finals: self.finals.iter().filter(|f| f.is_some()).count(),
            num_eps_arcs: self.arcs.iter().flatten().filter(|a| a.ilabel == Sym::Eps).count(),
            acceptor: self.is_acceptor(),
        }
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        for (s, arcs) in self.arcs.iter().enumerate() {
            for a in arcs {
                if a.next >= self.num_states() {
                    return Err(GraphError::Invalid(format!("arc {s} -> {} leaves the state set", a.next)));
                }
                if !a.weight.is_finite() {
                    return Err(GraphError::Invalid(format!("non-finite weight on arc from {s}")));
                }
                for l in [a.ilabel, a.olabel] {
                    if let Sym::Tok(k) = l {
                        if k as usize >= self.vocab_size {
                            return Err(GraphError::Invalid(format!(
                                "label {k} outside vocabulary of size {}",
                                self.vocab_size
                            )));
                        }
                    }
                }
            }
        }
        if let Some(s) = self.finals.iter().position(|f| f.is_some_and(|w| !w.is_finite())) {
            return Err(GraphError::Invalid(format!("non-finite final weight on state {s}")));
        }
        Ok(())
    }

    /// States reachable from the start and co-reachable to a final state.
    pub fn connected_states(&self) -> Vec<bool> {
        let n = self.num_states();
        let mut fwd = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        fwd[0] = true;
        while let Some(s) = queue.pop_front() {
            for a in &self.arcs[s] {
                if !fwd[a.next] {
                    fwd[a.next] = true;
                    queue.push_back(a.next);
                }
            }
        }
        let mut rev: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (s, arcs) in self.arcs.iter().enumerate() {
            for a in arcs {
                rev[a.next].push(s);
            }
        }
        let mut bwd = vec![false; n];
        for s in 0..n {
            if self.finals[s].is_some() {
                bwd[s] = true;
                queue.push_back(s);
            }
        }
        while let Some(s) = queue.pop_front() {
            for &p in &rev[s] {
                if !bwd[p] {
                    bwd[p] = true;
                    queue.push_back(p);
                }
            }
        }
        fwd.iter().zip(&bwd).map(|(a, b)| *a && *b).collect()
    }

    /// Removes dead states. Returns `None` when the start state is dead.
    pub fn trim(&self) -> Option<WeightedFsa> {
        let keep = self.connected_states();
        if !keep[0] {
            return None;
        }
        let mut map = vec![usize::MAX; self.num_states()];
        let mut next_id = 0;
        for (s, &k) in keep.iter().enumerate() {
            if k {
                map[s] = next_id;
                next_id += 1;
            }
        }
        let mut out = WeightedFsa {
            arcs: vec![Vec::new(); next_id],
            finals: vec![None; next_id],
            vocab_size: self.vocab_size,
        };
        for (s, &k) in keep.iter().enumerate() {
            if !k {
                continue;
            }
            out.finals[map[s]] = self.finals[s];
            out.arcs[map[s]] = self.arcs[s]
                .iter()
                .filter(|a| keep[a.next])
                .map(|a| Arc { next: map[a.next], ..*a })
                .collect();
        }
        Some(out)
    }

    /// Log-sum of weights over accepting paths whose input string is `seq`.
    /// Requires an epsilon-free automaton.
    pub fn path_log_sum(&self, seq: &[Sym]) -> f64 {
        debug_assert!(self.is_epsilon_free());
        let mut cur: HashMap<usize, f64> = HashMap::from([(0, 0.0)]);
        for &sym in seq {
            let mut next: HashMap<usize, f64> = HashMap::new();
            for (&s, &w) in &cur {
                for a in self.arcs[s].iter().filter(|a| a.ilabel == sym) {
                    let e = next.entry(a.next).or_insert(NEG_INF);
                    *e = log_add(*e, w + a.weight);
                }
            }
            cur = next;
        }
        cur.iter()
            .filter_map(|(&s, &w)| self.finals[s].map(|f| w + f))
            .fold(NEG_INF, log_add)
    }

    /// Maximum path weight for `seq`, with epsilon arcs taken freely
    /// (Viterbi / best-path semantics). Epsilon cycles must be non-positive.
    pub fn best_path_weight(&self, seq: &[Sym]) -> f64 {
        let n = self.num_states();
        let mut cur = vec![NEG_INF; n];
        cur[0] = 0.0;
        self.relax_epsilons(&mut cur);
        for &sym in seq {
            let mut next = vec![NEG_INF; n];
            for s in 0..n {
                if cur[s] == NEG_INF {
                    continue;
                }
                for a in self.arcs[s].iter().filter(|a| a.ilabel == sym) {
                    next[a.next] = next[a.next].max(cur[s] + a.weight);
                }
            }
            self.relax_epsilons(&mut next);
            cur = next;
        }
        (0..n)
            .filter_map(|s| self.finals[s].map(|f| cur[s] + f))
            .fold(NEG_INF, f64::max)
    }

    fn relax_epsilons(&self, dist: &mut [f64]) {
        for _ in 0..self.num_states() {
            let mut changed = false;
            for s in 0..self.num_states() {
                if dist[s] == NEG_INF {
                    continue;
                }
                for a in self.arcs[s].iter().filter(|a| a.ilabel == Sym::Eps) {
                    let w = dist[s] + a.weight;
                    if w > dist[a.next] {
                        dist[a.next] = w;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
    }

    /// Path weight for `seq` when epsilon arcs are failure (backoff)
    /// transitions: an epsilon arc is followed only when the current state has
    /// no arc for the next symbol (or no final weight at the end).
    pub fn failure_path_weight(&self, seq: &[Sym]) -> Option<f64> {
        let mut state = 0;
        let mut total = 0.0;
        for &sym in seq {
            let (next, w) = self.failure_step(state, sym)?;
            state = next;
            total += w;
        }
        Some(total + self.failure_final(state)?)
    }

    /// Consumes `sym` from `state`, following backoff arcs as needed.
    pub fn failure_step(&self, mut state: usize, sym: Sym) -> Option<(usize, f64)> {
        let mut acc = 0.0;
        for _ in 0..=self.num_states() {
            if let Some(a) = self.arcs[state].iter().find(|a| a.ilabel == sym) {
                return Some((a.next, acc + a.weight));
            }
            let b = self.arcs[state].iter().find(|a| a.ilabel == Sym::Eps)?;
            acc += b.weight;
            state = b.next;
        }
        None
    }

    pub fn failure_final(&self, mut state: usize) -> Option<f64> {
        let mut acc = 0.0;
        for _ in 0..=self.num_states() {
            if let Some(f) = self.finals[state] {
                return Some(acc + f);
            }
            let b = self.arcs[state].iter().find(|a| a.ilabel == Sym::Eps)?;
            acc += b.weight;
            state = b.next;
        }
        None
    }

    /// Every accepting path of exactly `len` arcs as (inputs, outputs, weight).
    /// Epsilon-free automata only; intended for small exhaustive checks.
    pub fn enumerate_paths(&self, len: usize) -> Vec<(Vec<Sym>, Vec<Sym>, f64)> {
        let mut out = Vec::new();
        let mut ins = Vec::with_capacity(len);
        let mut outs = Vec::with_capacity(len);
        self.enumerate_from(0, len, 0.0, &mut ins, &mut outs, &mut out);
        out
    }

    fn enumerate_from(
        &self,
        state: usize,
        left: usize,
        weight: f64,
        ins: &mut Vec<Sym>,
        outs: &mut Vec<Sym>,
        out: &mut Vec<(Vec<Sym>, Vec<Sym>, f64)>,
    ) {
        if left == 0 {
            if let Some(f) = self.finals[state] {
                out.push((ins.clone(), outs.clone(), weight + f));
            }
            return;
        }
        for a in &self.arcs[state] {
            ins.push(a.ilabel);
            outs.push(a.olabel);
            self.enumerate_from(a.next, left - 1, weight + a.weight, ins, outs, out);
            ins.pop();
            outs.pop();
        }
    }

    /// Text form: `# vocab_size V`, then one arc per line
    /// (`src dst label weight`, or `src dst ilabel olabel weight` for
    /// transducer arcs), then final lines `state weight`. Start state is 0.
    pub fn to_text(&self) -> String {
        let mut s = format!("# vocab_size {}\n", self.vocab_size);
        for (src, arcs) in self.arcs.iter().enumerate() {
            for a in arcs {
                if a.ilabel == a.olabel {
                    s.push_str(&format!("{src} {} {} {}\n", a.next, a.ilabel, a.weight));
                } else {
                    s.push_str(&format!("{src} {} {} {} {}\n", a.next, a.ilabel, a.olabel, a.weight));
                }
            }
        }
        for (st, f) in self.finals.iter().enumerate() {
            if let Some(w) = f {
                s.push_str(&format!("{st} {w}\n"));
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, GraphError> {
        let mut vocab_size: Option<usize> = None;
        let mut arcs: Vec<(usize, usize, Sym, Sym, f64)> = Vec::new();
        let mut finals: Vec<(usize, f64)> = Vec::new();
        let err = |line: usize, msg: String| GraphError::Parse { line, msg };
        for (i, raw) in text.lines().enumerate() {
            let ln = i + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                if parts.first() == Some(&"vocab_size") {
                    let v = parts
                        .get(1)
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| err(ln, "bad vocab_size header".into()))?;
                    vocab_size = Some(v);
                }
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let state = |s: &str| s.parse::<usize>().map_err(|_| err(ln, format!("bad state {s:?}")));
            let weight = |s: &str| {
                s.parse::<f64>()
                    .ok()
                    .filter(|w| w.is_finite())
                    .ok_or_else(|| err(ln, format!("bad weight {s:?}")))
            };
            let sym = |s: &str| s.parse::<Sym>().map_err(|m| err(ln, m));
            match f.len() {
                1 => finals.push((state(f[0])?, 0.0)),
                2 => finals.push((state(f[0])?, weight(f[1])?)),
                4 => {
                    let l = sym(f[2])?;
                    arcs.push((state(f[0])?, state(f[1])?, l, l, weight(f[3])?));
                }
                5 => arcs.push((state(f[0])?, state(f[1])?, sym(f[2])?, sym(f[3])?, weight(f[4])?)),
                n => return Err(err(ln, format!("expected 1, 2, 4 or 5 fields, found {n}"))),
            }
        }
        let max_state = arcs
            .iter()
            .flat_map(|a| [a.0, a.1])
            .chain(finals.iter().map(|f| f.0))
            .max()
            .unwrap_or(0);
        let inferred = arcs
            .iter()
            .flat_map(|a| [a.2, a.3])
            .filter_map(|s| match s {
                Sym::Tok(k) => Some(k as usize + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0);
        let mut fsa = WeightedFsa::new(vocab_size.unwrap_or(inferred));
        while fsa.num_states() <= max_state {
            fsa.add_state();
        }
        for (s, d, i, o, w) in arcs {
            fsa.add_arc(s, i, o, w, d);
        }
        for (s, w) in finals {
            fsa.set_final(s, w);
        }
        fsa.validate()?;
        Ok(fsa)
    }
}
