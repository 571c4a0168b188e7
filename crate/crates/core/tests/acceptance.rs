//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits non-zero if any criterion fails.

mod common;

use std::collections::{BTreeMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{all_state_sequences, random_labels, random_lm, random_logprobs, random_sequences, worked_example_lm};
use ctccrf::augment::{spec_augment, spec_augment_traced, SpecAugPolicy};
use ctccrf::features::FeatureMatrix;
use ctccrf::graphs::{build_ctc_topology, build_numerator, compose_denominator, forward_backward, Sym, WeightedFsa};
use ctccrf::labellm::{estimate_ngram, lm_to_fsa, NGramLabelLm};
use ctccrf::loss::{crf_loss, ctc_loss, LogProbMatrix, LossKind};
use ctccrf::nn::{param_count, ConformerConfig, ConformerModel};
use ctccrf::schedule::{Scheduler, SchedulerConfig};
use ctccrf::synthdata::{build_corpus, CorpusSpec};
use ctccrf::tokenizer::{train_unigram, PieceKind, TokenizerModel, UnigramTrainer, WORD_BOUNDARY};
use ctccrf::train::{evaluate_ter, split_validation, train_loop, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn log_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Merge repeats, then drop blanks (column `blank`).
fn collapse_cols(path: &[usize], blank: usize) -> Vec<u32> {
    let mut out = Vec::new();
    let mut prev = None;
    for &s in path {
        if Some(s) != prev && s != blank {
            out.push(s as u32);
        }
        prev = Some(s);
    }
    out
}

fn path_score(scores: &LogProbMatrix, path: &[usize]) -> f64 {
    path.iter().enumerate().map(|(t, &k)| scores.get(t, k)).sum()
}

fn enumerate_ctc(scores: &LogProbMatrix, labels: &[u32]) -> f64 {
    let v = scores.cols() - 1;
    -log_sum(
        all_state_sequences(v, scores.frames())
            .iter()
            .filter(|p| collapse_cols(p, v) == labels)
            .map(|p| path_score(scores, p)),
    )
}

fn enumerate_crf(scores: &LogProbMatrix, labels: &[u32], lm: &NGramLabelLm) -> f64 {
    let v = scores.cols() - 1;
    let paths = all_state_sequences(v, scores.frames());
    let num = log_sum(
        paths
            .iter()
            .filter(|p| collapse_cols(p, v) == labels)
            .map(|p| path_score(scores, p)),
    );
    let den = log_sum(
        paths
            .iter()
            .map(|p| path_score(scores, p) + lm.score_sequence(&collapse_cols(p, v)).unwrap()),
    );
    -(num + lm.score_sequence(labels).unwrap()) + den
}

fn den_for(lm: &NGramLabelLm) -> WeightedFsa {
    compose_denominator(&build_ctc_topology(lm.vocab_size()).unwrap(), &lm_to_fsa(lm)).unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

fn ctc_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let vocab = rng.random_range(1..=3);
        let frames = rng.random_range(1..=5);
        let labels = random_labels(&mut rng, vocab, 2, frames);
        let scores = random_logprobs(&mut rng, frames, vocab + 1);
        let got = ctc_loss(&scores, &labels).map_err(|e| e.to_string())?.loss;
        worst = worst.max((got - enumerate_ctc(&scores, &labels)).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-10 && secs < 10.0,
        format!("max |loss - enumeration| = {worst:.2e} over 200 instances in {secs:.2} s"),
    )
}

fn crf_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let vocab = rng.random_range(1..=2);
        let frames = rng.random_range(1..=4);
        let order = rng.random_range(1..=2);
        let lm = random_lm(&mut rng, vocab, order);
        let labels = random_labels(&mut rng, vocab, 2, frames);
        let scores = random_logprobs(&mut rng, frames, vocab + 1);
        let got = crf_loss(&scores, &labels, &den_for(&lm), &lm).map_err(|e| e.to_string())?.loss;
        worst = worst.max((got - enumerate_crf(&scores, &labels, &lm)).abs());
    }
    let lm = worked_example_lm();
    let uniform = LogProbMatrix::new(2, 2, vec![0.5f64.ln(); 4]).unwrap();
    let worked = crf_loss(&uniform, &[0], &den_for(&lm), &lm).map_err(|e| e.to_string())?.loss;
    let worked_err = (worked - (11.0f64 / 9.0).ln()).abs();
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-8 && worked_err <= 1e-8 && secs < 30.0,
        format!(
            "max |loss - enumeration| = {worst:.2e} over 200 instances, worked example {worked:.6} (ln(11/9) error {worked_err:.1e}) in {secs:.2} s"
        ),
    )
}

fn gradients() -> Outcome {
    let h = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let (mut worst_rel, mut worst_row) = (0.0f64, 0.0f64);
    for crf in [false, true] {
        for _ in 0..50 {
            let vocab = rng.random_range(1..=if crf { 2 } else { 3 });
            let frames = rng.random_range(1..=if crf { 4 } else { 5 });
            let lm = random_lm(&mut rng, vocab, 2);
            let den = den_for(&lm);
            let labels = random_labels(&mut rng, vocab, 2, frames);
            let scores = random_logprobs(&mut rng, frames, vocab + 1);
            let eval = |s: &LogProbMatrix| {
                if crf {
                    crf_loss(s, &labels, &den, &lm).unwrap()
                } else {
                    ctc_loss(s, &labels).unwrap()
                }
            };
            let r = eval(&scores);
            for i in 0..scores.data().len() {
                let shifted = |d: f64| {
                    let mut data = scores.data().to_vec();
                    data[i] += d;
                    eval(&LogProbMatrix::from_potentials(frames, vocab + 1, data).unwrap()).loss
                };
                let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
                worst_rel = worst_rel.max(rel_err(r.grad[i], fd));
            }
            let target = if crf { 0.0 } else { -1.0 };
            for t in 0..frames {
                worst_row = worst_row.max((r.grad_row(t).iter().sum::<f64>() - target).abs());
            }
        }
    }
    check(
        worst_rel < 1e-5 && worst_row <= 1e-8,
        format!("max relative FD error {worst_rel:.2e}, max row-sum error {worst_row:.2e} (50 CTC + 50 CTC-CRF)"),
    )
}

fn crf_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let (mut min_loss, mut worst_shift) = (f64::INFINITY, 0.0f64);
    for _ in 0..1000 {
        let vocab = rng.random_range(1..=3);
        let frames = rng.random_range(1..=5);
        let order = rng.random_range(1..=3);
        let lm = random_lm(&mut rng, vocab, order);
        let den = den_for(&lm);
        let labels = random_labels(&mut rng, vocab, 3, frames);
        let scores = random_logprobs(&mut rng, frames, vocab + 1);
        let base = crf_loss(&scores, &labels, &den, &lm).unwrap().loss;
        min_loss = min_loss.min(base);
        let shifts: Vec<f64> = (0..frames).map(|_| rng.random_range(-10.0..10.0)).collect();
        let data: Vec<f64> = scores
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + shifts[i / (vocab + 1)])
            .collect();
        let moved = LogProbMatrix::from_potentials(frames, vocab + 1, data).unwrap();
        worst_shift = worst_shift.max((crf_loss(&moved, &labels, &den, &lm).unwrap().loss - base).abs());
    }
    check(
        min_loss >= 0.0 && worst_shift <= 1e-9,
        format!("min loss {min_loss:.3e} over 1000 instances, max shift change {worst_shift:.2e}"),
    )
}

fn denominator_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for vocab in 1..=3 {
        for order in 1..=3 {
            let lm = random_lm(&mut rng, vocab, order);
            let den = den_for(&lm);
            for frames in 1..=3 {
                let paths = den.enumerate_paths(frames);
                let distinct: HashSet<&Vec<Sym>> = paths.iter().map(|p| &p.0).collect();
                if distinct.len() != paths.len() || paths.len() != (vocab + 1).pow(frames as u32) {
                    return Err(format!(
                        "V={vocab} order {order} T={frames}: {} paths, {} distinct",
                        paths.len(),
                        distinct.len()
                    ));
                }
                for (pi, _, w) in &paths {
                    let cols: Vec<usize> = pi.iter().map(|s| s.column(vocab).unwrap()).collect();
                    let want = lm.score_sequence(&collapse_cols(&cols, vocab)).unwrap();
                    worst = worst.max((w - want).abs());
                    checked += 1;
                }
            }
        }
    }
    check(worst <= 1e-10, format!("max |path weight - LM score| = {worst:.2e} over {checked} paths"))
}

fn scheduler() -> Outcome {
    let mut notes = Vec::new();
    for (d, warm, p) in [(256usize, 25_000u64, 1.0f64), (64, 400, 1.0), (180, 1000, 5.0)] {
        let cfg = SchedulerConfig {
            d_model: d,
            warmup_steps: warm,
            peak_factor: p,
            ..SchedulerConfig::default()
        };
        let mut sched = Scheduler::new(cfg).map_err(|e| e.to_string())?;
        let closed = |n: f64| p * (d as f64).powf(-0.5) * n.powf(-0.5).min(n * (warm as f64).powf(-1.5));
        let mut worst = 0.0f64;
        let mut peak = (0u64, f64::MIN);
        for n in 1..=2 * warm {
            let lr = sched.lr_at(n).unwrap();
            worst = worst.max(rel_err(lr, closed(n as f64)));
            if lr > peak.1 {
                peak = (n, lr);
            }
        }
        if worst > 1e-12 || peak.0 != warm {
            return Err(format!("d={d} N={warm}: closed-form error {worst:.1e}, peak at {}", peak.0));
        }
        sched.step = warm;
        sched.on_validation(1.0).unwrap();
        let mut decays = 0;
        loop {
            let before = sched.lr_at(sched.step).unwrap();
            let stop = sched.should_stop();
            if stop != (before < cfg.stop_threshold) {
                return Err(format!("should_stop {stop} at lr {before:e}"));
            }
            if stop {
                break;
            }
            if !sched.on_validation(1.0).unwrap() {
                return Err("non-improving validation loss did not decay".into());
            }
            let ratio = sched.lr_at(sched.step).unwrap() / before;
            if (ratio - 0.3).abs() > 1e-15 {
                return Err(format!("plateau ratio {ratio}"));
            }
            decays += 1;
        }
        notes.push(format!("d={d} N={warm}: {decays} decays to stop"));
    }
    Ok(format!("closed form within 1e-12 on n in 1..=2N, peak at N, ratio 0.3, {}", notes.join(", ")))
}

fn specaug() -> Outcome {
    let policy = SpecAugPolicy::STANDARD;
    let mut worst = (0usize, 0usize, 0usize);
    for seed in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let feat = FeatureMatrix::new(100, 80, (0..8000).map(|_| rng.random_range(0.1..3.0)).collect()).unwrap();
        let (out, trace) = spec_augment_traced(&feat, &policy, seed).map_err(|e| e.to_string())?;
        let zero_cols = (0..80).filter(|&j| (0..100).all(|t| out.get(t, j) == 0.0)).count();
        let zero_rows = (0..100).filter(|&t| out.frame(t).iter().all(|&x| x == 0.0)).count();
        let shift = trace.warp.map_or(0, |w| w.from.abs_diff(w.to));
        if trace.freq_masks.iter().any(|m| m.len() > 12) || trace.time_masks.iter().any(|m| m.len() > 5) {
            return Err(format!("seed {seed}: mask wider than its bound"));
        }
        worst = (worst.0.max(zero_cols), worst.1.max(zero_rows), worst.2.max(shift));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let feat = FeatureMatrix::new(100, 80, (0..8000).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
    let identity = spec_augment(&feat, &SpecAugPolicy::NONE, 3).unwrap().data() == feat.data();
    let a = spec_augment(&feat, &policy, 11).unwrap();
    let b = spec_augment(&feat, &policy, 11).unwrap();
    let deterministic = a.data() == b.data();
    check(
        worst.0 <= 24 && worst.1 <= 10 && worst.2 <= 20 && identity && deterministic,
        format!(
            "max masked bins {} (<= 24), frames {} (<= 10), warp shift {} (<= 20); identity {identity}, deterministic {deterministic}",
            worst.0, worst.1, worst.2
        ),
    )
}

fn desk_corpus(seed: u64, distinct: usize, alphabet: &str) -> Vec<(String, u64)> {
    let letters: Vec<char> = alphabet.chars().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = BTreeMap::new();
    for rank in 1..=distinct {
        let len = rng.random_range(2..=10);
        let w: String = (0..len).map(|_| letters[rng.random_range(0..letters.len())]).collect();
        *counts.entry(w).or_insert(0) += 1 + (300 / rank) as u64;
    }
    counts.into_iter().collect()
}

/// Best total log-probability over every split of `word` into pieces.
fn best_split(model: &TokenizerModel, word: &str) -> f64 {
    let chars: Vec<char> = std::iter::once(WORD_BOUNDARY).chain(word.chars()).collect();
    let n = chars.len();
    let unk = model.pieces()[model.unk_id() as usize].logp;
    let piece = |s: &[char]| -> Option<f64> {
        match model.piece_id(&s.iter().collect::<String>()) {
            Some(id) if model.pieces()[id as usize].kind == PieceKind::Normal => Some(model.pieces()[id as usize].logp),
            _ if s.len() == 1 => Some(unk),
            _ => None,
        }
    };
    (0u32..1 << (n - 1))
        .map(|mask| {
            let mut total = 0.0;
            let mut start = 0;
            for end in 1..=n {
                if end == n || mask & (1 << (end - 1)) != 0 {
                    match piece(&chars[start..end]) {
                        Some(s) => total += s,
                        None => return f64::NEG_INFINITY,
                    }
                    start = end;
                }
            }
            total
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

fn tokenizer() -> Outcome {
    let corpus = desk_corpus(8, 600, "abcdefghijklmnopqr");
    let (model, _) = train_unigram(&corpus, &UnigramTrainer::new(150)).map_err(|e| e.to_string())?;
    let texts: HashSet<&str> = model.pieces().iter().map(|p| p.text.as_str()).collect();
    let boundary_free = !texts.contains("<s>") && !texts.contains("</s>");
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let letters: Vec<char> = "abcdefghijklmnopqrz".chars().collect();
    for _ in 0..300 {
        let len = rng.random_range(1..=10);
        let word: String = (0..len).map(|_| letters[rng.random_range(0..letters.len())]).collect();
        let (_, score) = model.encode_with_score(&word).map_err(|e| e.to_string())?;
        worst = worst.max((score - best_split(&model, &word)).abs());
    }
    let failures = corpus
        .iter()
        .filter(|(w, _)| {
            model
                .encode_word(w)
                .and_then(|ids| model.decode_ids(&ids))
                .map_or(true, |d| d != *w)
        })
        .count();
    check(
        model.vocab_size() == 148 && boundary_free && worst < 1e-9 && failures == 0,
        format!(
            "size 150 -> {} pieces (boundary symbols excluded: {boundary_free}), Viterbi vs exhaustive max error {worst:.1e} on 300 words, {failures}/{} round-trip failures",
            model.vocab_size(),
            corpus.len()
        ),
    )
}

fn model_scale() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for ((blocks, d, heads, kernel), target) in [
        ((16, 180, 4, 32), 12.81e6),
        ((16, 256, 4, 32), 25.03e6),
        ((17, 360, 8, 32), 51.82e6),
    ] {
        let cfg = ConformerConfig {
            vocab_size_plus_blank: 149,
            ..ConformerConfig::sized(blocks, d, heads, kernel)
        };
        let built = ConformerModel::new(cfg.clone(), 0).map_err(|e| e.to_string())?.params.num_scalars();
        let formula = param_count(&cfg);
        let rel = (built as f64 - target) / target;
        ok &= built == formula && rel.abs() <= 0.05;
        parts.push(format!("({blocks},{d},{heads},{kernel}) {:.2}M ({:+.1}%)", built as f64 / 1e6, 100.0 * rel));
    }
    check(ok, parts.join(", "))
}

fn toy_training() -> Outcome {
    let start = Instant::now();
    let corpus = build_corpus(&CorpusSpec::default(), 0).map_err(|e| e.to_string())?;
    let mut results = Vec::new();
    let mut ok = true;
    for (kind, limit) in [(LossKind::CtcCrf, 0.05), (LossKind::Ctc, 0.10)] {
        let t0 = Instant::now();
        let cfg = TrainConfig {
            loss: kind,
            ..TrainConfig::default()
        };
        let (train, valid) = split_validation(&corpus.train, cfg.valid_fraction);
        let outcome = train_loop(&cfg, &train, &valid, |_| {}).map_err(|e| e.to_string())?;
        let ter = evaluate_ter(&outcome.best, &corpus.test).map_err(|e| e.to_string())?;
        ok &= ter < limit;
        results.push(format!(
            "{kind:?} TER {:.2}% (< {:.0}%, {} epochs, {:.0} s)",
            100.0 * ter,
            100.0 * limit,
            outcome.report.epochs.len(),
            t0.elapsed().as_secs_f64()
        ));
    }
    let total = start.elapsed();
    ok &= total < Duration::from_secs(15 * 60);
    check(ok, format!("{}; total {:.0} s", results.join(", "), total.as_secs_f64()))
}

fn numerics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(111);
    let (mut logz_gap, mut occ_gap) = (0.0f64, 0.0f64);
    for _ in 0..40 {
        let vocab = rng.random_range(1..=6);
        let frames = rng.random_range(4..=60);
        let order = rng.random_range(1..=4);
        let lm = random_lm(&mut rng, vocab, order);
        let scores = random_logprobs(&mut rng, frames, vocab + 1);
        let labels = random_labels(&mut rng, vocab, frames / 3, frames);
        for graph in [den_for(&lm), build_numerator(&labels, vocab).unwrap()] {
            let fb = forward_backward(&graph, &scores).map_err(|e| e.to_string())?;
            logz_gap = logz_gap.max((fb.log_z - fb.log_z_backward).abs());
            for t in 0..frames {
                occ_gap = occ_gap.max((fb.occupancy_row(t).iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    let (mut mass_gap, mut arpa_gap) = (0.0f64, 0.0f64);
    for order in 1..=4 {
        for _ in 0..5 {
            let vocab = rng.random_range(1..=8);
            let corpus = random_sequences(&mut rng, 40, vocab, 8);
            let lm = estimate_ngram(&corpus, order, vocab).map_err(|e| e.to_string())?;
            for h in lm.contexts() {
                mass_gap = mass_gap.max((lm.context_mass(&h) - 1.0).abs());
            }
            let back = NGramLabelLm::import_arpa(&lm.export_arpa()).map_err(|e| e.to_string())?;
            for s in random_sequences(&mut rng, 50, vocab, 10) {
                arpa_gap = arpa_gap.max((lm.score_sequence(&s).unwrap() - back.score_sequence(&s).unwrap()).abs());
            }
        }
    }
    check(
        logz_gap <= 1e-10 && occ_gap <= 1e-8 && mass_gap <= 1e-9 && arpa_gap <= 1e-10,
        format!(
            "forward/backward logZ gap {logz_gap:.1e}, occupancy row error {occ_gap:.1e}, LM context mass error {mass_gap:.1e}, ARPA round-trip score gap {arpa_gap:.1e}"
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("CTC loss equals exhaustive path enumeration", ctc_oracle),
        ("CTC-CRF loss equals brute-force enumeration", crf_oracle),
        ("analytic gradients match finite differences", gradients),
        ("CTC-CRF loss is non-negative and shift invariant", crf_invariants),
        ("denominator path weights equal LM scores", denominator_fidelity),
        ("learning-rate schedule", scheduler),
        ("SpecAug mask bounds, identity and determinism", specaug),
        ("tokenizer size, Viterbi optimality and round trip", tokenizer),
        ("Conformer parameter counts", model_scale),
        ("toy end-to-end training", toy_training),
        ("forward-backward, LM and ARPA numerics", numerics),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("[{tag}] criterion {:>2}: {name}: {detail}", i + 1);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
