mod common;

use std::collections::BTreeSet;

use common::{all_state_sequences, random_lm, random_logprobs, worked_example_lm};
use ctccrf::graphs::{
    build_ctc_topology, build_numerator, collapse, compose_denominator, forward_backward, GraphError, Sym,
    WeightedFsa,
};
use ctccrf::labellm::{estimate_ngram, lm_to_fsa};
use ctccrf::loss::LogProbMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn den_for(lm: &ctccrf::labellm::NGramLabelLm) -> WeightedFsa {
    compose_denominator(&build_ctc_topology(lm.vocab_size()).unwrap(), &lm_to_fsa(lm)).unwrap()
}

fn log_sum(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[test]
fn denominator_paths_carry_lm_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for vocab in 1..=3 {
        for order in 1..=3 {
            let lm = random_lm(&mut rng, vocab, order);
            let den = den_for(&lm);
            assert!(den.is_epsilon_free());
            for frames in 1..=3 {
                let paths = den.enumerate_paths(frames);
                let seen: BTreeSet<Vec<Sym>> = paths.iter().map(|p| p.0.clone()).collect();
                assert_eq!(seen.len(), paths.len(), "duplicate state sequences");
                assert_eq!(seen.len(), (vocab + 1).pow(frames as u32));
                for (pi, _, w) in &paths {
                    let want = lm.score_sequence(&collapse(pi)).unwrap();
                    assert!((w - want).abs() < 1e-10, "V={vocab} n={order} {pi:?}: {w} vs {want}");
                }
            }
        }
    }
}

#[test]
fn unigram_single_label_four_paths() {
    let lm = estimate_ngram(&[vec![0], vec![0, 0], vec![]], 1, 1).unwrap();
    let den = den_for(&lm);
    let paths = den.enumerate_paths(2);
    assert_eq!(paths.len(), 4);
    let p_empty = lm.score_sequence(&[]).unwrap();
    let p_a = lm.score_sequence(&[0]).unwrap();
    for (pi, _, w) in paths {
        let want = if pi == vec![Sym::Blank, Sym::Blank] { p_empty } else { p_a };
        assert!((w - want).abs() < 1e-12);
    }
}

#[test]
fn graphs_are_trimmed() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for order in 1..=3 {
        let den = den_for(&random_lm(&mut rng, 3, order));
        assert!(den.connected_states().iter().all(|&c| c));
        den.validate().unwrap();
    }
    let num = build_numerator(&[0, 1, 1], 2).unwrap();
    assert!(num.connected_states().iter().all(|&c| c));
}

#[test]
fn worked_forward_backward_sums() {
    let uniform = LogProbMatrix::new(2, 2, vec![0.5f64.ln(); 4]).unwrap();
    let num = build_numerator(&[0], 1).unwrap();
    let fb = forward_backward(&num, &uniform).unwrap();
    assert!((fb.log_z - 0.75f64.ln()).abs() < 1e-12);

    let den = den_for(&worked_example_lm());
    let fb = forward_backward(&den, &uniform).unwrap();
    assert!((fb.log_z - 0.55f64.ln()).abs() < 1e-12);
}

#[test]
fn forward_backward_matches_path_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..60 {
        let vocab = rng.random_range(1..=3);
        let frames = rng.random_range(1..=(if vocab == 3 { 6 } else { 8 }));
        let order = rng.random_range(1..=3);
        let den = den_for(&random_lm(&mut rng, vocab, order));
        let scores = random_logprobs(&mut rng, frames, vocab + 1);
        let fb = forward_backward(&den, &scores).unwrap();
        assert!((fb.log_z - fb.log_z_backward).abs() <= 1e-10 * fb.log_z.abs().max(1.0));

        let mut occ = vec![f64::NEG_INFINITY; frames * (vocab + 1)];
        let mut terms = Vec::new();
        for (pi, _, w) in den.enumerate_paths(frames) {
            let s = w + pi
                .iter()
                .enumerate()
                .map(|(t, sym)| scores.get(t, sym.column(vocab).unwrap()))
                .sum::<f64>();
            terms.push(s);
            for (t, sym) in pi.iter().enumerate() {
                let cell = &mut occ[t * (vocab + 1) + sym.column(vocab).unwrap()];
                *cell = log_sum([*cell, s].into_iter());
            }
        }
        let z = log_sum(terms.into_iter());
        assert!((fb.log_z - z).abs() < 1e-10);
        for (a, b) in fb.occupancy.iter().zip(&occ) {
            assert!((a - (b - z).exp()).abs() < 1e-10);
        }
        for t in 0..frames {
            assert!((fb.occupancy_row(t).iter().sum::<f64>() - 1.0).abs() < 1e-8);
        }
    }
}

#[test]
fn numerator_accepts_exactly_the_preimage() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..40 {
        let vocab = rng.random_range(1..=3);
        let frames = rng.random_range(1..=5);
        let labels = common::random_labels(&mut rng, vocab, 3, 6);
        let num = build_numerator(&labels, vocab).unwrap();
        let accepted: BTreeSet<Vec<Sym>> = num.enumerate_paths(frames).into_iter().map(|p| p.0).collect();
        let want: BTreeSet<Vec<Sym>> = all_state_sequences(vocab, frames)
            .into_iter()
            .map(|cols| cols.into_iter().map(|c| Sym::from_column(c, vocab)).collect::<Vec<_>>())
            .filter(|pi| collapse(pi) == labels)
            .collect();
        assert_eq!(accepted, want, "labels {labels:?} T={frames}");
    }
}

#[test]
fn no_path_is_explicit() {
    let num = build_numerator(&[0, 0], 1).unwrap();
    let scores = LogProbMatrix::new(2, 2, vec![0.5f64.ln(); 4]).unwrap();
    assert!(matches!(forward_backward(&num, &scores), Err(GraphError::NoPath { frames: 2 })));
}

#[test]
fn text_format_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let den = den_for(&random_lm(&mut rng, 2, 2));
    let back = WeightedFsa::from_text(&den.to_text()).unwrap();
    assert_eq!(back.num_states(), den.num_states());
    assert_eq!(back.num_arcs(), den.num_arcs());
    for (a, b) in back.enumerate_paths(3).iter().zip(den.enumerate_paths(3)) {
        assert_eq!(a.0, b.0);
        assert!((a.2 - b.2).abs() < 1e-12);
    }
    assert!(matches!(
        WeightedFsa::from_text("# vocab_size 2\n0 1 <blk>\n"),
        Err(GraphError::Parse { line: 2, .. })
    ));
}
