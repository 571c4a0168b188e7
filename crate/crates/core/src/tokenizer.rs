//! Unigram wordpiece and character tokenization.
//!
//! Words are NFKC-normalized and lowercased. In unigram mode every word is
//! prefixed with [`WORD_BOUNDARY`] so word-initial pieces carry the marker
//! and decoding can restore spaces. Character mode has no marker: a word maps
//! to one id per character.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::logmath::{log_sum_exp, NEG_INF};

pub const WORD_BOUNDARY: char = '\u{2581}';
pub const UNK_PIECE: &str = "<unk>";
/// Text emitted by [`TokenizerModel::decode_ids`] for the unknown piece.
pub const UNK_MARKER: &str = "<unk>";
pub const BOUNDARY_SYMBOLS: [&str; 2] = ["<s>", "</s>"];
const FILE_MAGIC: &str = "#ctccrf-tokenizer";

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("target size {target} cannot hold {chars} characters plus {reserved} reserved symbols")]
    InfeasibleSize {
        target: usize,
        chars: usize,
        reserved: usize,
    },
    #[error("corpus yields only {available} candidate pieces, fewer than the {wanted} requested")]
    NotEnoughCandidates { available: usize, wanted: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("reserved symbols must include {UNK_PIECE}")]
    MissingUnk,
    #[error("piece id {id} out of range for vocabulary of {size}")]
    BadId { id: u32, size: usize },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenizerMode {
    Unigram,
    Char,
}

impl std::str::FromStr for TokenizerMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unigram" => Ok(Self::Unigram),
            "char" => Ok(Self::Char),
            _ => Err(format!("unknown tokenizer mode {s:?}")),
        }
    }
}

impl std::fmt::Display for TokenizerMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Unigram => "unigram",
            Self::Char => "char",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PieceKind {
    Normal,
    Unk,
    /// Reserved symbol kept in the vocabulary but never produced by encoding.
    Control,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    pub text: String,
    pub logp: f64,
    pub kind: PieceKind,
}

pub fn normalize(word: &str) -> String {
    word.nfkc().collect::<String>().to_lowercase()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenizerModel {
    pieces: Vec<Piece>,
    mode: TokenizerMode,
    unk_id: u32,
    index: HashMap<String, u32>,
    max_piece_chars: usize,
}

impl TokenizerModel {
    pub fn from_pieces(pieces: Vec<Piece>, mode: TokenizerMode) -> Result<Self, TokenizerError> {
        let unk_id = pieces
            .iter()
            .position(|p| p.kind == PieceKind::Unk)
            .ok_or(TokenizerError::MissingUnk)? as u32;
        let mut index = HashMap::new();
        for (i, p) in pieces.iter().enumerate() {
            if p.text.is_empty() || index.insert(p.text.clone(), i as u32).is_some() {
                return Err(TokenizerError::Parse {
                    line: i + 2,
                    msg: format!("empty or duplicate piece {:?}", p.text),
                });
            }
        }
        let max_piece_chars = pieces
            .iter()
            .filter(|p| p.kind == PieceKind::Normal)
            .map(|p| p.text.chars().count())
            .max()
            .unwrap_or(1);
        Ok(Self {
            pieces,
            mode,
            unk_id,
            index,
            max_piece_chars,
        })
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn mode(&self) -> TokenizerMode {
        self.mode
    }

    pub fn unk_id(&self) -> u32 {
        self.unk_id
    }

    pub fn vocab_size(&self) -> usize {
        self.pieces.len()
    }

    pub fn piece_id(&self, text: &str) -> Option<u32> {
        self.index.get(text).copied()
    }

    fn normal_id(&self, text: &str) -> Option<u32> {
        self.index
            .get(text)
            .copied()
            .filter(|&i| self.pieces[i as usize].kind == PieceKind::Normal)
    }

    /// The symbol string a word is segmented over.
    fn word_chars(&self, word: &str) -> Result<Vec<char>, TokenizerError> {
        let norm = normalize(word);
        if norm.trim().is_empty() {
            return Err(TokenizerError::EmptyInput);
        }
        Ok(match self.mode {
            TokenizerMode::Unigram => std::iter::once(WORD_BOUNDARY).chain(norm.chars()).collect(),
            TokenizerMode::Char => norm.chars().collect(),
        })
    }

    pub fn encode_word(&self, word: &str) -> Result<Vec<u32>, TokenizerError> {
        Ok(self.encode_with_score(word)?.0)
    }

    /// Viterbi segmentation; also returns its total piece log-probability.
    /// Characters missing from the vocabulary become `unk_id`.
    pub fn encode_with_score(&self, word: &str) -> Result<(Vec<u32>, f64), TokenizerError> {
        let chars = self.word_chars(word)?;
        if self.mode == TokenizerMode::Char {
            let mut score = 0.0;
            let ids = chars
                .iter()
                .map(|c| {
                    let id = self.normal_id(&c.to_string()).unwrap_or(self.unk_id);
                    score += self.pieces[id as usize].logp;
                    id
                })
                .collect();
            return Ok((ids, score));
        }
        let n = chars.len();
        let mut best = vec![NEG_INF; n + 1];
        let mut back: Vec<(usize, u32)> = vec![(0, 0); n + 1];
        best[0] = 0.0;
        let unk_logp = self.pieces[self.unk_id as usize].logp;
        for end in 1..=n {
            let lo = end.saturating_sub(self.max_piece_chars);
            for start in lo..end {
                if best[start] == NEG_INF {
                    continue;
                }
                let s: String = chars[start..end].iter().collect();
                if let Some(id) = self.normal_id(&s) {
                    let cand = best[start] + self.pieces[id as usize].logp;
                    if cand > best[end] {
                        best[end] = cand;
                        back[end] = (start, id);
                    }
                }
            }
            if best[end] == NEG_INF {
                best[end] = best[end - 1] + unk_logp;
                back[end] = (end - 1, self.unk_id);
            }
        }
        let mut ids = Vec::new();
        let mut pos = n;
        while pos > 0 {
            let (start, id) = back[pos];
            ids.push(id);
            pos = start;
        }
        ids.reverse();
        Ok((ids, best[n]))
    }

    pub fn decode_ids(&self, ids: &[u32]) -> Result<String, TokenizerError> {
        let mut out = String::new();
        for &id in ids {
            let p = self.pieces.get(id as usize).ok_or(TokenizerError::BadId {
                id,
                size: self.pieces.len(),
            })?;
            match p.kind {
                PieceKind::Normal => out.extend(p.text.chars().map(|c| if c == WORD_BOUNDARY { ' ' } else { c })),
                PieceKind::Unk => out.push_str(UNK_MARKER),
                PieceKind::Control => {}
            }
        }
        Ok(out.strip_prefix(' ').map(str::to_string).unwrap_or(out))
    }

    pub fn to_tsv(&self) -> String {
        let mut s = format!("{FILE_MAGIC}\tversion=1\tmode={}\n", self.mode);
        for p in &self.pieces {
            let flag = match p.kind {
                PieceKind::Normal => "normal",
                PieceKind::Unk => "unk",
                PieceKind::Control => "control",
            };
            let _ = writeln!(s, "{}\t{}\t{flag}", p.text, p.logp);
        }
        s
    }

    pub fn from_tsv(text: &str) -> Result<Self, TokenizerError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(TokenizerError::Parse {
            line: 1,
            msg: "missing header".into(),
        })?;
        let fields: Vec<&str> = header.split('\t').collect();
        if fields.first() != Some(&FILE_MAGIC) || fields.get(1) != Some(&"version=1") {
            return Err(TokenizerError::Parse {
                line: 1,
                msg: format!("bad header {header:?}"),
            });
        }
        let mode = fields
            .get(2)
            .and_then(|m| m.strip_prefix("mode="))
            .ok_or_else(|| TokenizerError::Parse {
                line: 1,
                msg: "header lacks mode".into(),
            })?
            .parse()
            .map_err(|msg| TokenizerError::Parse { line: 1, msg })?;
        let mut pieces = Vec::new();
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| TokenizerError::Parse { line: i + 1, msg };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(err(format!("expected 3 tab-separated fields, found {}", f.len())));
            }
            let logp: f64 = f[1].parse().map_err(|_| err(format!("bad log-prob {:?}", f[1])))?;
            let kind = match f[2] {
                "normal" => PieceKind::Normal,
                "unk" => PieceKind::Unk,
                "control" => PieceKind::Control,
                other => return Err(err(format!("bad flag {other:?}"))),
            };
            pieces.push(Piece {
                text: f[0].to_string(),
                logp,
                kind,
            });
        }
        Self::from_pieces(pieces, mode)
    }
}

/// Word → piece-id table collected over the training word list.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WordMap {
    pub entries: BTreeMap<String, Vec<u32>>,
}

impl WordMap {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[u32]> {
        self.entries.get(&normalize(word)).map(Vec::as_slice)
    }

    /// Id sequence → word, for reverting model output at decode time.
    pub fn inverse(&self) -> HashMap<Vec<u32>, String> {
        self.entries.iter().map(|(w, ids)| (ids.clone(), w.clone())).collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for (w, ids) in &self.entries {
            let ids: Vec<String> = ids.iter().map(u32::to_string).collect();
            let _ = writeln!(s, "{w}\t{}", ids.join(" "));
        }
        s
    }

    pub fn from_tsv(text: &str) -> Result<Self, TokenizerError> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
            let err = |msg: &str| TokenizerError::Parse {
                line: i + 1,
                msg: msg.to_string(),
            };
            let (w, ids) = line.split_once('\t').ok_or_else(|| err("expected word<TAB>ids"))?;
            let ids = ids
                .split_whitespace()
                .map(|t| t.parse::<u32>().map_err(|_| err("bad id")))
                .collect::<Result<Vec<_>, _>>()?;
            entries.insert(w.to_string(), ids);
        }
        Ok(Self { entries })
    }
}

pub fn build_word_map<S: AsRef<str>>(model: &TokenizerModel, words: &[S]) -> Result<WordMap, TokenizerError> {
    if words.is_empty() {
        return Err(TokenizerError::EmptyInput);
    }
    let mut entries = BTreeMap::new();
    for w in words {
        let key = normalize(w.as_ref());
        if let std::collections::btree_map::Entry::Vacant(e) = entries.entry(key) {
            let ids = model.encode_word(e.key())?;
            e.insert(ids);
        }
    }
    Ok(WordMap { entries })
}

/// Counts whitespace-separated words in `text`.
pub fn count_words(text: &str) -> Vec<(String, u64)> {
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for w in text.split_whitespace() {
        *counts.entry(w.to_string()).or_default() += 1;
    }
    counts.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnigramTrainer {
    pub target_size: usize,
    pub reserved: Vec<String>,
    pub max_piece_chars: usize,
    pub min_seed_freq: u64,
    /// Fraction of prunable pieces removed per pruning round.
    pub prune_fraction: f64,
    pub em_iters_per_round: usize,
    pub final_em_iters: usize,
}

impl UnigramTrainer {
    pub fn new(target_size: usize) -> Self {
        Self {
            target_size,
            reserved: vec![UNK_PIECE.into(), "<s>".into(), "</s>".into()],
            max_piece_chars: 8,
            min_seed_freq: 2,
            prune_fraction: 0.2,
            em_iters_per_round: 2,
            final_em_iters: 20,
        }
    }
}

/// Corpus log-likelihood after each EM iteration, with the number of
/// candidate pieces it was computed over.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub steps: Vec<(usize, f64)>,
}

struct Lattice<'a> {
    words: &'a [(Vec<char>, f64)],
    index: HashMap<String, usize>,
    max_len: usize,
}

impl<'a> Lattice<'a> {
    fn new(words: &'a [(Vec<char>, f64)], pieces: &[(String, f64)], max_len: usize) -> Self {
        let index = pieces.iter().enumerate().map(|(i, p)| (p.0.clone(), i)).collect();
        Self { words, index, max_len }
    }

    /// Expected piece counts and corpus log-likelihood.
    fn expectations(&self, logp: &[f64]) -> (Vec<f64>, f64) {
        let mut counts = vec![0.0; logp.len()];
        let mut ll = 0.0;
        for (chars, weight) in self.words {
            let n = chars.len();
            let mut edges: Vec<(usize, usize, usize)> = Vec::new();
            for end in 1..=n {
                for start in end.saturating_sub(self.max_len)..end {
                    let s: String = chars[start..end].iter().collect();
                    if let Some(&id) = self.index.get(&s) {
                        edges.push((start, end, id));
                    }
                }
            }
            let mut alpha = vec![NEG_INF; n + 1];
            alpha[0] = 0.0;
            for end in 1..=n {
                let terms: Vec<f64> = edges
                    .iter()
                    .filter(|e| e.1 == end)
                    .map(|e| alpha[e.0] + logp[e.2])
                    .collect();
                alpha[end] = log_sum_exp(&terms);
            }
            let mut beta = vec![NEG_INF; n + 1];
            beta[n] = 0.0;
            for start in (0..n).rev() {
                let terms: Vec<f64> = edges
                    .iter()
                    .filter(|e| e.0 == start)
                    .map(|e| beta[e.1] + logp[e.2])
                    .collect();
                beta[start] = log_sum_exp(&terms);
            }
            let z = alpha[n];
            ll += weight * z;
            for &(s, e, id) in &edges {
                counts[id] += weight * (alpha[s] + logp[id] + beta[e] - z).exp();
            }
        }
        (counts, ll)
    }

    /// Viterbi piece frequencies over the corpus.
    fn viterbi_counts(&self, logp: &[f64]) -> Vec<f64> {
        let mut counts = vec![0.0; logp.len()];
        for (chars, weight) in self.words {
            for id in self.viterbi(chars, logp, None).1 {
                counts[id] += weight;
            }
        }
        counts
    }

    /// Best segmentation, optionally forbidding one piece.
    fn viterbi(&self, chars: &[char], logp: &[f64], forbid: Option<usize>) -> (f64, Vec<usize>) {
        let n = chars.len();
        let mut best = vec![NEG_INF; n + 1];
        let mut back = vec![(0usize, usize::MAX); n + 1];
        best[0] = 0.0;
        for end in 1..=n {
            for start in end.saturating_sub(self.max_len)..end {
                let s: String = chars[start..end].iter().collect();
                if let Some(&id) = self.index.get(&s) {
                    if Some(id) == forbid || best[start] == NEG_INF {
                        continue;
                    }
                    let c = best[start] + logp[id];
                    if c > best[end] {
                        best[end] = c;
                        back[end] = (start, id);
                    }
                }
            }
        }
        let mut ids = Vec::new();
        let mut pos = n;
        while pos > 0 && best[n] > NEG_INF {
            ids.push(back[pos].1);
            pos = back[pos].0;
        }
        ids.reverse();
        (best[n], ids)
    }
}

fn m_step(counts: &[f64]) -> Vec<f64> {
    let total: f64 = counts.iter().sum();
    counts.iter().map(|&c| if c > 0.0 { (c / total).ln() } else { NEG_INF }).collect()
}

/// Trains a unigram wordpiece model from `(word, count)` pairs.
///
/// The returned vocabulary has `target_size − |excluded boundary symbols|`
/// entries: the reserved `<unk>` (id 0), any other non-boundary reserved
/// symbols, and `target_size − |reserved|` learned pieces that always include
/// every training character.
pub fn train_unigram(
    corpus: &[(String, u64)],
    trainer: &UnigramTrainer,
) -> Result<(TokenizerModel, TrainTrace), TokenizerError> {
    let (words, chars) = prepare_corpus(corpus, TokenizerMode::Unigram)?;
    let reserved = reserved_pieces(&trainer.reserved)?;
    let learned = trainer
        .target_size
        .checked_sub(trainer.reserved.len())
        .filter(|&n| n >= chars.len())
        .ok_or(TokenizerError::InfeasibleSize {
            target: trainer.target_size,
            chars: chars.len(),
            reserved: trainer.reserved.len(),
        })?;

    // Seed: all single characters plus frequent substrings.
    let mut freq: HashMap<String, f64> = HashMap::new();
    for (w, c) in &words {
        for start in 0..w.len() {
            for end in start + 1..=(start + trainer.max_piece_chars).min(w.len()) {
                *freq.entry(w[start..end].iter().collect()).or_default() += c;
            }
        }
    }
    let char_set: BTreeSet<String> = chars.iter().map(|c| c.to_string()).collect();
    let mut pieces: Vec<(String, f64)> = freq
        .into_iter()
        .filter(|(s, f)| char_set.contains(s) || *f >= trainer.min_seed_freq as f64)
        .collect();
    pieces.sort_by(|a, b| a.0.cmp(&b.0));
    if pieces.len() < learned {
        return Err(TokenizerError::NotEnoughCandidates {
            available: pieces.len(),
            wanted: learned,
        });
    }
    let total: f64 = pieces.iter().map(|p| p.1).sum();
    for p in pieces.iter_mut() {
        p.1 = (p.1 / total).ln();
    }

    let mut trace = TrainTrace::default();
    loop {
        let lattice = Lattice::new(&words, &pieces, trainer.max_piece_chars);
        let mut logp: Vec<f64> = pieces.iter().map(|p| p.1).collect();
        let done = pieces.len() == learned;
        let iters = if done { trainer.final_em_iters } else { trainer.em_iters_per_round };
        let mut prev_ll = NEG_INF;
        for _ in 0..iters {
            let (counts, ll) = lattice.expectations(&logp);
            trace.steps.push((pieces.len(), ll));
            logp = m_step(&counts);
            if done && (ll - prev_ll).abs() < 1e-10 * ll.abs().max(1.0) {
                break;
            }
            prev_ll = ll;
        }
        for (p, &l) in pieces.iter_mut().zip(&logp) {
            p.1 = l;
        }
        if done {
            break;
        }

        // Drop pieces EM gave no mass, then prune by likelihood contribution.
        let viterbi = lattice.viterbi_counts(&logp);
        let mut scored: Vec<(f64, usize)> = Vec::new();
        for (i, (text, lp)) in pieces.iter().enumerate() {
            if char_set.contains(text) {
                continue;
            }
            let contribution = if *lp == NEG_INF || viterbi[i] == 0.0 {
                NEG_INF
            } else {
                let chars: Vec<char> = text.chars().collect();
                let (alt, _) = lattice.viterbi(&chars, &logp, Some(i));
                viterbi[i] * (lp - alt)
            };
            scored.push((contribution, i));
        }
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(pieces[a.1].0.cmp(&pieces[b.1].0)));
        let excess = pieces.len() - learned;
        let quota = ((scored.len() as f64 * trainer.prune_fraction).ceil() as usize).max(1);
        let remove: BTreeSet<usize> = scored.iter().take(quota.min(excess)).map(|s| s.1).collect();
        pieces = pieces
            .into_iter()
            .enumerate()
            .filter(|(i, _)| !remove.contains(i))
            .map(|(_, p)| p)
            .collect();
        // Renormalize the survivors; characters never lose all mass.
        let floor = pieces.iter().map(|p| p.1).filter(|l| l.is_finite()).fold(0.0, f64::min) - 10.0;
        let raw: Vec<f64> = pieces.iter().map(|p| if p.1.is_finite() { p.1 } else { floor }).collect();
        let z = log_sum_exp(&raw);
        for (p, r) in pieces.iter_mut().zip(raw) {
            p.1 = r - z;
        }
    }

    let min_logp = pieces.iter().map(|p| p.1).filter(|l| l.is_finite()).fold(0.0, f64::min);
    let mut learned_pieces: Vec<Piece> = pieces
        .into_iter()
        .map(|(text, logp)| Piece {
            text,
            logp,
            kind: PieceKind::Normal,
        })
        .collect();
    learned_pieces.sort_by(|a, b| b.logp.total_cmp(&a.logp).then(a.text.cmp(&b.text)));
    let model = assemble(reserved, learned_pieces, min_logp - 10.0, TokenizerMode::Unigram)?;
    Ok((model, trace))
}

/// Character-mode model: the vocabulary is exactly the training character
/// inventory plus the non-boundary reserved symbols.
pub fn train_char(corpus: &[(String, u64)], reserved: &[String]) -> Result<TokenizerModel, TokenizerError> {
    let (words, chars) = prepare_corpus(corpus, TokenizerMode::Char)?;
    let reserved = reserved_pieces(reserved)?;
    let mut freq: BTreeMap<char, f64> = chars.iter().map(|&c| (c, 0.0)).collect();
    for (w, c) in &words {
        for ch in w {
            *freq.get_mut(ch).unwrap() += c;
        }
    }
    let total: f64 = freq.values().sum();
    let pieces: Vec<Piece> = freq
        .into_iter()
        .map(|(c, f)| Piece {
            text: c.to_string(),
            logp: (f / total).ln(),
            kind: PieceKind::Normal,
        })
        .collect();
    let min_logp = pieces.iter().map(|p| p.logp).fold(0.0, f64::min);
    assemble(reserved, pieces, min_logp - 10.0, TokenizerMode::Char)
}

fn prepare_corpus(
    corpus: &[(String, u64)],
    mode: TokenizerMode,
) -> Result<(Vec<(Vec<char>, f64)>, BTreeSet<char>), TokenizerError> {
    let mut merged: BTreeMap<Vec<char>, f64> = BTreeMap::new();
    for (w, c) in corpus {
        let norm = normalize(w);
        if norm.trim().is_empty() || *c == 0 {
            continue;
        }
        let chars: Vec<char> = match mode {
            TokenizerMode::Unigram => std::iter::once(WORD_BOUNDARY).chain(norm.chars()).collect(),
            TokenizerMode::Char => norm.chars().collect(),
        };
        *merged.entry(chars).or_default() += *c as f64;
    }
    if merged.is_empty() {
        return Err(TokenizerError::EmptyInput);
    }
    let chars = merged.keys().flatten().copied().collect();
    Ok((merged.into_iter().collect(), chars))
}

fn reserved_pieces(reserved: &[String]) -> Result<Vec<Piece>, TokenizerError> {
    if !reserved.iter().any(|r| r == UNK_PIECE) {
        return Err(TokenizerError::MissingUnk);
    }
    let mut out = Vec::new();
    // <unk> always takes id 0.
    for r in std::iter::once(UNK_PIECE).chain(reserved.iter().map(String::as_str).filter(|r| *r != UNK_PIECE)) {
        if BOUNDARY_SYMBOLS.contains(&r) {
            continue;
        }
        out.push(Piece {
            text: r.to_string(),
            logp: 0.0,
            kind: if r == UNK_PIECE { PieceKind::Unk } else { PieceKind::Control },
        });
    }
    Ok(out)
}

fn assemble(
    mut reserved: Vec<Piece>,
    learned: Vec<Piece>,
    floor_logp: f64,
    mode: TokenizerMode,
) -> Result<TokenizerModel, TokenizerError> {
    for p in reserved.iter_mut() {
        p.logp = floor_logp;
    }
    reserved.extend(learned);
    for p in reserved.iter_mut().filter(|p| !p.logp.is_finite()) {
        p.logp = floor_logp;
    }
    let z = log_sum_exp(&reserved.iter().map(|p| p.logp).collect::<Vec<_>>());
    for p in reserved.iter_mut() {
        p.logp -= z;
    }
    TokenizerModel::from_pieces(reserved, mode)
}
