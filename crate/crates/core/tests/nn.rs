mod common;

use ctccrf::features::FeatureMatrix;
use ctccrf::graphs::{build_ctc_topology, compose_denominator};
use ctccrf::labellm::lm_to_fsa;
use ctccrf::loss::{crf_loss, ctc_loss};
use ctccrf::nn::{param_count, ConformerConfig, ConformerModel, Mat, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_feat(rng: &mut ChaCha8Rng, frames: usize, dim: usize) -> FeatureMatrix {
    FeatureMatrix::new(frames, dim, (0..frames * dim).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

fn micro_config() -> ConformerConfig {
    ConformerConfig {
        num_blocks: 2,
        d_model: 16,
        num_heads: 2,
        conv_kernel: 7,
        vocab_size_plus_blank: 3,
        input_dim: 12,
        ..ConformerConfig::default()
    }
}

#[test]
fn reference_model_sizes() {
    for ((blocks, d, heads, kernel), want) in [
        ((16, 180, 4, 32), 12.81e6),
        ((16, 256, 4, 32), 25.03e6),
        ((17, 360, 8, 32), 51.82e6),
    ] {
        let cfg = ConformerConfig {
            vocab_size_plus_blank: 149,
            ..ConformerConfig::sized(blocks, d, heads, kernel)
        };
        let n = param_count(&cfg) as f64;
        let rel = (n - want) / want;
        assert!(rel.abs() < 0.05, "({blocks},{d},{heads},{kernel}): {n} vs {want} ({rel:+.3})");
    }
}

#[test]
fn full_model_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let model = ConformerModel::new(micro_config(), 7).unwrap();
    let feat = random_feat(&mut rng, 24, 12);
    let labels = vec![0u32, 1];
    let lm = common::random_lm(&mut rng, 2, 2);
    let den = compose_denominator(&build_ctc_topology(2).unwrap(), &lm_to_fsa(&lm)).unwrap();

    let loss_of = |m: &ConformerModel| {
        let lp = m.log_probs(&feat).unwrap();
        crf_loss(&lp, &labels, &den, &lm).unwrap()
    };
    let pass = model.forward(&feat, None).unwrap();
    let r = crf_loss(&pass.log_probs().unwrap(), &labels, &den, &lm).unwrap();
    let mut grads = model.params.zeros_like();
    pass.backward(&r.grad, &mut grads).unwrap();

    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let id = rng.random_range(0..model.params.len());
        let idx = rng.random_range(0..model.params.get(id).len());
        let eval = |delta: f64| {
            let mut m = model.clone();
            m.params.get_mut(id).data[idx] += delta;
            loss_of(&m).loss
        };
        let numeric = (eval(h) - eval(-h)) / (2.0 * h);
        let analytic = grads[id].data[idx];
        let rel = (analytic - numeric).abs() / numeric.abs().max(1e-8);
        assert!(
            rel < 1e-4 || (analytic - numeric).abs() < 1e-10,
            "{}[{idx}]: analytic {analytic} numeric {numeric}",
            model.params.name(id)
        );
        worst = worst.max(rel);
    }
    println!("worst relative error {worst:e}");
}

#[test]
fn ctc_gradient_check_through_frontend() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let model = ConformerModel::new(micro_config(), 8).unwrap();
    let feat = random_feat(&mut rng, 20, 12);
    let labels = vec![1u32, 0, 1];
    let pass = model.forward(&feat, None).unwrap();
    let r = ctc_loss(&pass.log_probs().unwrap(), &labels).unwrap();
    let mut grads = model.params.zeros_like();
    pass.backward(&r.grad, &mut grads).unwrap();
    let h = 1e-5;
    for name in ["frontend.conv1.w", "frontend.conv2.w", "frontend.proj.w", "block0.conv.dw.w", "output.b"] {
        let id = model.params.id(name).unwrap();
        for idx in [0, model.params.get(id).len() / 2] {
            let eval = |delta: f64| {
                let mut m = model.clone();
                m.params.get_mut(id).data[idx] += delta;
                ctc_loss(&m.log_probs(&feat).unwrap(), &labels).unwrap().loss
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let analytic = grads[id].data[idx];
            assert!(
                (analytic - numeric).abs() / numeric.abs().max(1e-8) < 1e-4 || (analytic - numeric).abs() < 1e-10,
                "{name}[{idx}]: {analytic} vs {numeric}"
            );
        }
    }
}

#[test]
fn zero_upstream_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let model = ConformerModel::new(micro_config(), 9).unwrap();
    let pass = model.forward(&random_feat(&mut rng, 16, 12), None).unwrap();
    let out = pass.log_probs().unwrap();
    let mut grads = model.params.zeros_like();
    pass.backward(&vec![0.0; out.data().len()], &mut grads).unwrap();
    assert!(grads.iter().all(|g| g.data.iter().all(|&v| v == 0.0)));
}

#[test]
fn layer_norm_rows_are_standardized() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let mut tape = Tape::new();
    let x = tape.input(Mat::from_vec(20, 16, (0..320).map(|_| rng.random_range(-3.0..5.0)).collect()));
    let g = tape.input(Mat::filled(1, 16, 1.0));
    let b = tape.input(Mat::zeros(1, 16));
    let y = tape.layer_norm(x, g, b, 1e-9, "ln").unwrap();
    let y = tape.value(y);
    for r in 0..y.rows {
        let row = y.row(r);
        let mean = row.iter().sum::<f64>() / 16.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
        assert!(mean.abs() < 1e-6 && (var - 1.0).abs() < 1e-6);
    }
}

#[test]
fn zeroed_output_projections_reduce_blocks_to_layer_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    let mut model = ConformerModel::new(micro_config(), 10).unwrap();
    for sub in ["ffn1.l2", "ffn2.l2", "mhsa.o", "conv.pw2"] {
        for part in ["w", "b"] {
            let m = model.params.by_name_mut(&format!("block0.{sub}.{part}")).unwrap();
            m.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let x = Mat::from_vec(6, 16, (0..96).map(|_| rng.random_range(-2.0..2.0)).collect());
    let out = model.block_forward(&x, 0).unwrap();
    for r in 0..6 {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / 16.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
        for c in 0..16 {
            let want = (row[c] - mean) / (var + 1e-9).sqrt();
            assert!((out.get(r, c) - want).abs() < 1e-12);
        }
    }
}

#[test]
fn forward_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(36);
    let feat = random_feat(&mut rng, 30, 12);
    let a = ConformerModel::new(micro_config(), 11).unwrap().log_probs(&feat).unwrap();
    let b = ConformerModel::new(micro_config(), 11).unwrap().log_probs(&feat).unwrap();
    assert_eq!(a, b);
}
