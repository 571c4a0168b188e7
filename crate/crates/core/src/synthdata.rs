//! Synthetic (features, labels) corpora drawn from a known Markov grammar.
//!
//! Each label emits a run of frames equal to its mean vector plus isotropic
//! Gaussian noise. The chain starts in its stationary distribution, so every
//! position is marginally stationary.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::distr::{Distribution, weighted::WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureError, FeatureMatrix};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid grammar: {0}")]
    Grammar(String),
    #[error("corpus file {file}: {msg}")]
    Corpus { file: String, msg: String },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("grammar json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticGrammar {
    pub vocab_size: usize,
    /// Row-stochastic `V × V` label transition matrix.
    pub transitions: Vec<Vec<f64>>,
    /// `V × dim` emission means.
    pub means: Vec<Vec<f64>>,
    pub sigma: f64,
    pub min_duration: usize,
    pub max_duration: usize,
    pub min_labels: usize,
    pub max_labels: usize,
}

impl Default for SyntheticGrammar {
    /// Five labels, 20-dim features, σ = 0.3, 4–8 frames per label, 2–8
    /// labels per utterance. Self-transitions are disallowed so every label
    /// sequence stays alignable after 4× subsampling.
    fn default() -> Self {
        Self::random(5, 20, 0.3, 0)
    }
}

impl SyntheticGrammar {
    /// Random means in `[−1, 1]` and random transitions with an empty diagonal.
    pub fn random(vocab_size: usize, dim: usize, sigma: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let means = (0..vocab_size)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let transitions = (0..vocab_size)
            .map(|i| {
                let mut row: Vec<f64> = (0..vocab_size)
                    .map(|j| if i == j && vocab_size > 1 { 0.0 } else { rng.random_range(0.2..1.0) })
                    .collect();
                let z: f64 = row.iter().sum();
                row.iter_mut().for_each(|p| *p /= z);
                row
            })
            .collect();
        Self {
            vocab_size,
            transitions,
            means,
            sigma,
            min_duration: 4,
            max_duration: 8,
            min_labels: 2,
            max_labels: 8,
        }
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Grammar(m));
        let v = self.vocab_size;
        if v == 0 || self.transitions.len() != v || self.means.len() != v {
            return bad(format!("expected {v} transition rows and {v} means"));
        }
        for (i, row) in self.transitions.iter().enumerate() {
            let s: f64 = row.iter().sum();
            if row.len() != v || row.iter().any(|p| !(0.0..=1.0).contains(p)) || (s - 1.0).abs() > 1e-9 {
                return bad(format!("transition row {i} is not a distribution over {v} labels"));
            }
        }
        let d = self.dim();
        if d == 0 || self.means.iter().any(|m| m.len() != d || m.iter().any(|x| !x.is_finite())) {
            return bad("means must be non-empty finite vectors of equal length".into());
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma {}", self.sigma));
        }
        if self.min_duration == 0 || self.min_duration > self.max_duration {
            return bad(format!("durations {}..={}", self.min_duration, self.max_duration));
        }
        if self.min_labels == 0 || self.min_labels > self.max_labels {
            return bad(format!("label counts {}..={}", self.min_labels, self.max_labels));
        }
        Ok(())
    }

    /// Stationary distribution by power iteration.
    pub fn stationary(&self) -> Vec<f64> {
        let v = self.vocab_size;
        let mut pi = vec![1.0 / v as f64; v];
        for _ in 0..10_000 {
            let mut next = vec![0.0; v];
            for (i, row) in self.transitions.iter().enumerate() {
                for (j, p) in row.iter().enumerate() {
                    next[j] += pi[i] * p;
                }
            }
            // Averaging keeps periodic chains from oscillating.
            let next: Vec<f64> = next.iter().zip(&pi).map(|(a, b)| 0.5 * (a + b)).collect();
            let delta: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
            pi = next;
            if delta < 1e-15 {
                break;
            }
        }
        pi
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub features: FeatureMatrix,
    pub labels: Vec<u32>,
}

/// Utterance `i` draws from its own stream of the seeded generator, so the
/// corpus does not depend on scheduling.
pub fn generate(grammar: &SyntheticGrammar, num_utts: usize, seed: u64) -> Result<Vec<Utterance>, SynthError> {
    grammar.validate()?;
    let stationary = grammar.stationary();
    let start = WeightedIndex::new(&stationary).map_err(|e| SynthError::Grammar(e.to_string()))?;
    let rows = grammar
        .transitions
        .iter()
        .map(|r| WeightedIndex::new(r).map_err(|e| SynthError::Grammar(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    let noise = Normal::new(0.0, grammar.sigma).map_err(|e| SynthError::Grammar(e.to_string()))?;
    (0..num_utts)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let len = rng.random_range(grammar.min_labels..=grammar.max_labels);
            let mut labels = Vec::with_capacity(len);
            let mut cur = start.sample(&mut rng);
            for _ in 0..len {
                labels.push(cur as u32);
                cur = rows[cur].sample(&mut rng);
            }
            let dim = grammar.dim();
            let mut data = Vec::new();
            for &l in &labels {
                let dur = rng.random_range(grammar.min_duration..=grammar.max_duration);
                for _ in 0..dur {
                    data.extend(grammar.means[l as usize].iter().map(|m| m + noise.sample(&mut rng)));
                }
            }
            let frames = data.len() / dim;
            Ok(Utterance {
                id: format!("utt{i:06}"),
                features: FeatureMatrix::new(frames, dim, data)?,
                labels,
            })
        })
        .collect()
}

pub const LABELS_FILE: &str = "labels.txt";

/// Writes `<id>.cctf` feature files and a `labels.txt` of `id l1 l2 …` lines.
pub fn save_corpus(dir: impl AsRef<Path>, utts: &[Utterance]) -> Result<(), SynthError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut labels = String::new();
    for u in utts {
        u.features.save(dir.join(format!("{}.cctf", u.id)))?;
        labels.push_str(&u.id);
        for l in &u.labels {
            labels.push(' ');
            labels.push_str(&l.to_string());
        }
        labels.push('\n');
    }
    fs::File::create(dir.join(LABELS_FILE))?.write_all(labels.as_bytes())?;
    Ok(())
}

pub fn load_corpus(dir: impl AsRef<Path>) -> Result<Vec<Utterance>, SynthError> {
    let dir = dir.as_ref();
    let path = dir.join(LABELS_FILE);
    let text = fs::read_to_string(&path)?;
    let file = path.display().to_string();
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let mut fields = line.split_whitespace();
        let id = fields.next().unwrap_or_default().to_string();
        let labels = fields
            .map(|t| t.parse::<u32>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| SynthError::Corpus {
                file: file.clone(),
                msg: format!("line {}: {e}", n + 1),
            })?;
        let features = FeatureMatrix::load(dir.join(format!("{id}.cctf")))?;
        out.push(Utterance { id, features, labels });
    }
    Ok(out)
}

/// Size and grammar parameters of a train/test corpus pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub vocab_size: usize,
    pub dim: usize,
    pub sigma: f64,
    pub grammar_seed: u64,
    pub num_train: usize,
    pub num_test: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            vocab_size: 5,
            dim: 20,
            sigma: 0.3,
            grammar_seed: 0,
            num_train: 2000,
            num_test: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub grammar: SyntheticGrammar,
    pub train: Vec<Utterance>,
    pub test: Vec<Utterance>,
}

/// Draws `num_train + num_test` utterances in one pass and splits them, so
/// the two sets share a grammar but never an utterance id.
pub fn build_corpus(spec: &CorpusSpec, seed: u64) -> Result<SyntheticCorpus, SynthError> {
    let grammar = SyntheticGrammar::random(spec.vocab_size, spec.dim, spec.sigma, spec.grammar_seed);
    let mut train = generate(&grammar, spec.num_train + spec.num_test, seed)?;
    let test = train.split_off(spec.num_train);
    Ok(SyntheticCorpus { grammar, train, test })
}
