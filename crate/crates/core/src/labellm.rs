//! Backoff n-gram LM over label sequences (the denominator LM).
//!
//! Estimation uses interpolated Witten–Bell smoothing whose unigram level is
//! interpolated with a uniform distribution over all labels plus `</s>`, so
//! every label keeps non-zero probability. The model is stored in ARPA
//! backoff form (natural-log internally, log10 in ARPA text).

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

use crate::graphs::{Sym, WeightedFsa};

const LN_10: f64 = std::f64::consts::LN_10;
/// ARPA sentinel for "never predicted" (the `<s>` unigram).
const ARPA_NEVER: f64 = -99.0;

#[derive(Debug, Error)]
pub enum LmError {
    #[error("empty training corpus")]
    EmptyCorpus,
    #[error("n-gram order {0} outside supported range 1..=4")]
    BadOrder(usize),
    #[error("label {label} outside vocabulary of size {vocab_size}")]
    UnknownLabel { label: u32, vocab_size: usize },
    #[error("ARPA line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    logp: f64,
    backoff: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NGramLabelLm {
    order: usize,
    vocab_size: usize,
    /// `tables[k - 1]` holds the k-grams.
    tables: Vec<HashMap<Vec<u32>, Entry>>,
}

impl NGramLabelLm {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Internal id of `</s>`.
    pub fn eos(&self) -> u32 {
        self.vocab_size as u32
    }

    /// Internal id of `<s>`.
    pub fn bos(&self) -> u32 {
        self.vocab_size as u32 + 1
    }

    pub fn num_ngrams(&self, k: usize) -> usize {
        self.tables.get(k - 1).map_or(0, HashMap::len)
    }

    /// `ln p(word | history)` with backoff. `word` may be `eos()`.
    /// Only the last `order - 1` history items are used.
    pub fn cond_logprob(&self, history: &[u32], word: u32) -> f64 {
        let keep = (self.order - 1).min(history.len());
        let h = &history[history.len() - keep..];
        let mut acc = 0.0;
        for start in 0..=h.len() {
            let ctx = &h[start..];
            let mut gram = ctx.to_vec();
            gram.push(word);
            if let Some(e) = self.tables[gram.len() - 1].get(&gram) {
                return acc + e.logp;
            }
            if !ctx.is_empty() {
                acc += self.tables[ctx.len() - 1].get(ctx).map_or(0.0, |e| e.backoff);
            }
        }
        f64::NEG_INFINITY
    }

    /// `ln p(l)` including the end-of-sequence term.
    pub fn score_sequence(&self, labels: &[u32]) -> Result<f64, LmError> {
        self.check_labels(labels)?;
        let mut hist = vec![self.bos()];
        let mut total = 0.0;
        for &l in labels {
            total += self.cond_logprob(&hist, l);
            hist.push(l);
        }
        Ok(total + self.cond_logprob(&hist, self.eos()))
    }

    fn check_labels(&self, labels: &[u32]) -> Result<(), LmError> {
        match labels.iter().find(|&&l| l as usize >= self.vocab_size) {
            Some(&label) => Err(LmError::UnknownLabel {
                label,
                vocab_size: self.vocab_size,
            }),
            None => Ok(()),
        }
    }

    /// Every history the model conditions on: the empty history plus each
    /// stored n-gram below the top order that can precede another label.
    pub fn contexts(&self) -> Vec<Vec<u32>> {
        let mut out = vec![Vec::new()];
        for k in 1..self.order {
            let mut grams: Vec<Vec<u32>> = self.tables[k - 1]
                .keys()
                .filter(|g| *g.last().unwrap() != self.eos())
                .cloned()
                .collect();
            grams.sort();
            out.extend(grams);
        }
        out
    }

    /// `Σ_w p(w | history)` over all labels and `</s>`.
    pub fn context_mass(&self, history: &[u32]) -> f64 {
        (0..=self.eos())
            .map(|w| self.cond_logprob(history, w).exp())
            .sum()
    }

    fn word_name(&self, w: u32) -> String {
        if w == self.eos() {
            "</s>".into()
        } else if w == self.bos() {
            "<s>".into()
        } else {
            w.to_string()
        }
    }

    pub fn export_arpa(&self) -> String {
        let mut s = String::from("\\data\\\n");
        for k in 1..=self.order {
            let _ = writeln!(s, "ngram {k}={}", self.tables[k - 1].len());
        }
        for k in 1..=self.order {
            let _ = write!(s, "\n\\{k}-grams:\n");
            let mut grams: Vec<(&Vec<u32>, &Entry)> = self.tables[k - 1].iter().collect();
            grams.sort_by(|a, b| a.0.cmp(b.0));
            for (g, e) in grams {
                let logp = if e.logp == f64::NEG_INFINITY {
                    ARPA_NEVER
                } else {
                    e.logp / LN_10
                };
                let words: Vec<String> = g.iter().map(|&w| self.word_name(w)).collect();
                let _ = write!(s, "{logp}\t{}", words.join(" "));
                if k < self.order && *g.last().unwrap() != self.eos() {
                    let _ = write!(s, "\t{}", e.backoff / LN_10);
                }
                s.push('\n');
            }
        }
        s.push_str("\n\\end\\\n");
        s
    }

    pub fn import_arpa(text: &str) -> Result<Self, LmError> {
        let err = |line: usize, msg: &str| LmError::Parse {
            line,
            msg: msg.to_string(),
        };
        let lines: Vec<(usize, &str)> = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty())
            .collect();
        let mut it = lines.iter().peekable();
        match it.next() {
            Some((_, "\\data\\")) => {}
            Some((n, _)) => return Err(err(*n, "expected \\data\\ header")),
            None => return Err(err(0, "empty input")),
        }
        let mut declared: BTreeMap<usize, usize> = BTreeMap::new();
        while let Some((n, l)) = it.peek() {
            let Some(rest) = l.strip_prefix("ngram ") else { break };
            let (k, c) = rest
                .split_once('=')
                .ok_or_else(|| err(*n, "malformed ngram count line"))?;
            let k: usize = k.trim().parse().map_err(|_| err(*n, "bad n-gram order"))?;
            let c: usize = c.trim().parse().map_err(|_| err(*n, "bad n-gram count"))?;
            if k != declared.len() + 1 {
                return Err(err(*n, "n-gram orders must be declared consecutively from 1"));
            }
            declared.insert(k, c);
            it.next();
        }
        let order = declared.len();
        if order == 0 {
            let line = it.peek().map_or(lines.len(), |(n, _)| *n);
            return Err(err(line, "\\data\\ section declares no n-grams"));
        }
        if order > 4 {
            return Err(LmError::BadOrder(order));
        }

        // Raw entries keyed by word strings; resolved to ids once the
        // vocabulary is known.
        let mut raw: Vec<Vec<(Vec<String>, f64, f64)>> = vec![Vec::new(); order];
        for k in 1..=order {
            let header = format!("\\{k}-grams:");
            match it.next() {
                Some((_, l)) if *l == header => {}
                Some((n, _)) => return Err(err(*n, &format!("expected {header}"))),
                None => return Err(err(lines.len(), &format!("missing {header}"))),
            }
            while let Some((n, l)) = it.peek() {
                if l.starts_with('\\') {
                    break;
                }
                let f: Vec<&str> = l.split_whitespace().collect();
                let (logp, words, bo) = if f.len() == k + 1 {
                    (f[0], &f[1..], None)
                } else if f.len() == k + 2 {
                    (f[0], &f[1..k + 1], Some(f[k + 1]))
                } else {
                    return Err(err(*n, &format!("expected {} or {} fields", k + 1, k + 2)));
                };
                let logp: f64 = logp.parse().map_err(|_| err(*n, "bad log-probability"))?;
                let bo: f64 = match bo {
                    Some(b) => b.parse().map_err(|_| err(*n, "bad backoff weight"))?,
                    None => 0.0,
                };
                raw[k - 1].push((words.iter().map(|w| w.to_string()).collect(), logp, bo));
                it.next();
            }
            if raw[k - 1].len() != declared[&k] {
                let line = it.peek().map_or(lines.len(), |(n, _)| *n);
                return Err(err(
                    line,
                    &format!(
                        "{k}-gram section has {} entries but \\data\\ declares {}",
                        raw[k - 1].len(),
                        declared[&k]
                    ),
                ));
            }
        }
        match it.next() {
            Some((_, "\\end\\")) => {}
            Some((n, _)) => return Err(err(*n, "expected \\end\\")),
            None => return Err(err(lines.len(), "missing \\end\\")),
        }

        let mut vocab_size = 0usize;
        for (words, _, _) in &raw[0] {
            let w = &words[0];
            if w != "<s>" && w != "</s>" {
                let id: u32 = w
                    .parse()
                    .map_err(|_| err(0, &format!("label {w:?} is not a numeric id")))?;
                vocab_size = vocab_size.max(id as usize + 1);
            }
        }
        let eos = vocab_size as u32;
        let bos = eos + 1;
        let resolve = |w: &str| -> Result<u32, LmError> {
            match w {
                "<s>" => Ok(bos),
                "</s>" => Ok(eos),
                _ => w
                    .parse::<u32>()
                    .ok()
                    .filter(|&id| id < eos)
                    .ok_or_else(|| err(0, &format!("unknown word {w:?}"))),
            }
        };
        let mut tables = vec![HashMap::new(); order];
        for (k, entries) in raw.into_iter().enumerate() {
            for (words, logp, bo) in entries {
                let gram = words.iter().map(|w| resolve(w)).collect::<Result<Vec<_>, _>>()?;
                let logp = if gram == [bos] && logp <= ARPA_NEVER {
                    f64::NEG_INFINITY
                } else {
                    logp * LN_10
                };
                tables[k].insert(
                    gram,
                    Entry {
                        logp,
                        backoff: bo * LN_10,
                    },
                );
            }
        }
        Ok(Self {
            order,
            vocab_size,
            tables,
        })
    }
}

/// Witten–Bell estimation from label sequences over `0..vocab_size`.
pub fn estimate_ngram(sequences: &[Vec<u32>], order: usize, vocab_size: usize) -> Result<NGramLabelLm, LmError> {
    if !(1..=4).contains(&order) {
        return Err(LmError::BadOrder(order));
    }
    if sequences.is_empty() || vocab_size == 0 {
        return Err(LmError::EmptyCorpus);
    }
    let eos = vocab_size as u32;
    let bos = eos + 1;
    for seq in sequences {
        if let Some(&label) = seq.iter().find(|&&l| l >= eos) {
            return Err(LmError::UnknownLabel { label, vocab_size });
        }
    }

    // counts[k-1][history] -> (word -> count)
    let mut counts: Vec<HashMap<Vec<u32>, BTreeMap<u32, f64>>> = vec![HashMap::new(); order];
    for seq in sequences {
        let padded: Vec<u32> = std::iter::once(bos).chain(seq.iter().copied()).chain([eos]).collect();
        for i in 1..padded.len() {
            for k in 1..=order.min(i + 1) {
                let hist = padded[i + 1 - k..i].to_vec();
                *counts[k - 1].entry(hist).or_default().entry(padded[i]).or_default() += 1.0;
            }
        }
    }

    let mut lm = NGramLabelLm {
        order,
        vocab_size,
        tables: vec![HashMap::new(); order],
    };

    // Unigrams: interpolate with the uniform distribution over labels + </s>.
    let uni = &counts[0][&Vec::new()];
    let total: f64 = uni.values().sum();
    let types = uni.len() as f64;
    let uniform = 1.0 / (vocab_size + 1) as f64;
    for w in 0..=eos {
        let c = uni.get(&w).copied().unwrap_or(0.0);
        let p = (c + types * uniform) / (total + types);
        lm.tables[0].insert(vec![w], Entry { logp: p.ln(), backoff: 0.0 });
    }
    lm.tables[0].insert(
        vec![bos],
        Entry {
            logp: f64::NEG_INFINITY,
            backoff: 0.0,
        },
    );

    for k in 2..=order {
        let mut hists: Vec<&Vec<u32>> = counts[k - 1].keys().collect();
        hists.sort();
        for hist in hists {
            let next = &counts[k - 1][hist];
            let c_h: f64 = next.values().sum();
            let n1 = next.len() as f64;
            let mut new_entries = Vec::with_capacity(next.len());
            for (&w, &c) in next {
                let lower = lm.cond_logprob(&hist[1..], w).exp();
                let p = (c + n1 * lower) / (c_h + n1);
                let mut gram = hist.clone();
                gram.push(w);
                new_entries.push((gram, p.ln()));
            }
            for (gram, logp) in new_entries {
                lm.tables[k - 1].insert(gram, Entry { logp, backoff: 0.0 });
            }
            let alpha = n1 / (c_h + n1);
            lm.tables[k - 2]
                .get_mut(hist)
                .expect("every history is itself a stored n-gram")
                .backoff = alpha.ln();
        }
    }
    Ok(lm)
}

/// Compiles the LM into a label acceptor. State 0 is the start context; each
/// context state has explicit arcs for its stored continuations, a final
/// weight when `</s>` is stored, and one epsilon backoff arc (weighted by the
/// backoff log-weight) to its shortened context. Read with failure semantics
/// (or best-path semantics) a label sequence's weight equals its LM score.
pub fn lm_to_fsa(lm: &NGramLabelLm) -> WeightedFsa {
    let mut fsa = WeightedFsa::new(lm.vocab_size);
    let start_ctx: Vec<u32> = if lm.order >= 2 { vec![lm.bos()] } else { Vec::new() };
    let mut ids: HashMap<Vec<u32>, usize> = HashMap::from([(start_ctx.clone(), 0)]);
    for ctx in lm.contexts() {
        ids.entry(ctx).or_insert_with(|| fsa.add_state());
    }
    let state_for_suffix = |gram: &[u32]| -> usize {
        let max_len = (lm.order - 1).min(gram.len());
        (0..=max_len)
            .rev()
            .find_map(|len| ids.get(&gram[gram.len() - len..]).copied())
            .expect("empty context is always a state")
    };

    let mut ctxs: Vec<(&Vec<u32>, usize)> = ids.iter().map(|(c, &s)| (c, s)).collect();
    ctxs.sort_by_key(|&(_, s)| s);
    for (ctx, s) in ctxs {
        let k = ctx.len() + 1;
        let mut conts: Vec<(u32, f64)> = lm.tables[k - 1]
            .iter()
            .filter(|(g, _)| g[..g.len() - 1] == ctx[..])
            .map(|(g, e)| (*g.last().unwrap(), e.logp))
            .collect();
        conts.sort_by_key(|c| c.0);
        for (w, logp) in conts {
            if w == lm.eos() {
                fsa.set_final(s, logp);
            } else if w != lm.bos() {
                let mut gram = ctx.clone();
                gram.push(w);
                fsa.add_label_arc(s, Sym::Tok(w), logp, state_for_suffix(&gram));
            }
        }
        if !ctx.is_empty() {
            let backoff = lm.tables[ctx.len() - 1][ctx].backoff;
            fsa.add_label_arc(s, Sym::Eps, backoff, state_for_suffix(&ctx[1..]));
        }
    }
    fsa
}
