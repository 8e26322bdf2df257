//! Encoder-level properties: α=0 reduction, causality, hand examples.

mod common;

use std::collections::HashMap;
use std::sync::Arc;

use common::{perturbed_state, randn, random_windows, rng, tiny_config};
use rand::Rng;
use seqlab_core::models::{
    bsarec_layer, causal_self_attention, embed_sequence, encode, pointwise_ffn, sasrec_layer,
    score_items, EncoderState, ModelConfig, ModelKind, Pass, SeqRecModel, WindowBatch,
};
use seqlab_core::spectral::{bin_count, FilterMode, FrequencyFilter};
use seqlab_core::train::{next_item_loss, TrainConfig};
use seqlab_core::{Tape, Tensor};

fn bits(t: &Tensor<f64>) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

/// Forward output and named parameter gradients of the training loss.
fn forward_and_grads(
    model: &SeqRecModel<f64>,
    ids: &[usize],
    targets: &[usize],
    pass: Pass,
) -> (Tensor<f64>, HashMap<String, Vec<u64>>) {
    let len = model.config().max_len;
    let w = WindowBatch::new(ids, len).unwrap();
    let mut t = Tape::new();
    let (bound, h) = model.forward(&mut t, &w, pass, true).unwrap();
    let loss = next_item_loss(
        &mut t,
        h,
        targets,
        bound.item_emb,
        &TrainConfig::default(),
        &mut rng(0),
    )
    .unwrap();
    let out = t.value(h).clone();
    let g = t.backward(loss).unwrap();
    let mut names = Vec::new();
    model.state.visit(|n, _| names.push(n.to_string()));
    let grads = names
        .into_iter()
        .zip(bound.ordered())
        .map(|(n, v)| (n, bits(g.get(v).unwrap())))
        .collect();
    (out, grads)
}

#[test]
fn alpha_zero_bsarec_is_sasrec_bit_for_bit() {
    for norm_first in [false, true] {
        for seed in 0..5 {
            let mut cfg = tiny_config(30, 16, 10, 2);
            cfg.norm_first = norm_first;
            cfg.alpha = 0.0;
            let sas = SeqRecModel::<f64>::new(ModelKind::SasRec, cfg.clone(), seed).unwrap();
            let bsa = SeqRecModel::<f64>::new(ModelKind::BsaRec, cfg.clone(), seed).unwrap();

            let mut shared = HashMap::new();
            sas.state.visit(|n, t| {
                shared.insert(n.to_string(), bits(t));
            });
            bsa.state.visit(|n, t| {
                if let Some(b) = shared.get(n) {
                    assert_eq!(b, &bits(t), "initial {n} differs");
                }
            });

            let ids = random_windows(4, 10, 30, seed);
            let targets = random_windows(4, 10, 30, seed + 9);
            for pass in [Pass::inference(), Pass::training(seed * 31 + 1)] {
                let (hs, gs) = forward_and_grads(&sas, &ids, &targets, pass);
                let (hb, gb) = forward_and_grads(&bsa, &ids, &targets, pass);
                assert_eq!(
                    bits(&hs),
                    bits(&hb),
                    "forward differs (norm_first={norm_first})"
                );
                for (name, g) in &gs {
                    assert_eq!(
                        g, &gb[name],
                        "gradient of {name} differs (norm_first={norm_first})"
                    );
                }
            }
        }
    }
}

#[test]
fn perturbing_a_position_never_changes_earlier_outputs() {
    let len = 12;
    let items = 40;
    let mut r = rng(2024);
    for case in 0..100u64 {
        let kind = if case % 2 == 0 {
            ModelKind::SasRec
        } else {
            ModelKind::BsaRec
        };
        let mut cfg = tiny_config(items, 16, len, 2);
        cfg.norm_first = case % 4 >= 2;
        let model = SeqRecModel::<f64>::new(kind, cfg, case).unwrap();
        let ids = random_windows(1, len, items, case + 500);
        let t = r.gen_range(0..len);
        let mut changed = ids.clone();
        changed[t] = loop {
            let c = r.gen_range(0..=items);
            if c != ids[t] {
                break c;
            }
        };
        for pass in [Pass::inference(), Pass::training(case)] {
            let out = |w: &[usize]| {
                let batch = WindowBatch::new(w, len).unwrap();
                let mut tape = Tape::new();
                let (_, h) = model.forward(&mut tape, &batch, pass, false).unwrap();
                tape.value(h).clone()
            };
            let (a, b) = (out(&ids), out(&changed));
            let d = 16;
            assert_eq!(
                bits(&a)[..t * d],
                bits(&b)[..t * d],
                "case {case} ({kind}): position {t} leaked backwards"
            );
        }
    }
}

#[test]
fn hand_attention_example() {
    let mut cfg = tiny_config(3, 2, 2, 1);
    cfg.heads = 1;
    cfg.dropout = 0.0;
    let mut state = EncoderState::<f64>::init(&cfg, ModelKind::SasRec, 0);
    let l = &mut state.layers[0];
    for w in [&mut l.wq, &mut l.wk, &mut l.wv, &mut l.wo] {
        *w = Tensor::eye(2);
    }
    let h = [1.0, 0.0, 0.5, 2.0];
    let mut tape = Tape::new();
    let bound = state.bind(&mut tape, false);
    let x = tape.constant(Tensor::from_f64(&[2, 2], &h).unwrap());
    let ids = [1, 2];
    let w = WindowBatch::new(&ids, 2).unwrap();
    let y = causal_self_attention(&mut tape, &bound.layers[0], &cfg, x, &w).unwrap();

    let s0 = (0.5 * 1.0 + 2.0 * 0.0) / 2f64.sqrt();
    let s1 = (0.5 * 0.5 + 2.0 * 2.0) / 2f64.sqrt();
    let sigma = s0.exp() / (s0.exp() + s1.exp());
    let expect = [
        1.0,
        0.0,
        sigma * 1.0 + (1.0 - sigma) * 0.5,
        (1.0 - sigma) * 2.0,
    ];
    for (a, e) in tape.value(y).data().iter().zip(expect) {
        assert!((a - e).abs() < 1e-12, "{a} vs {e}");
    }
}

#[test]
fn single_position_attention_projects_its_own_value() {
    let mut cfg = tiny_config(5, 8, 1, 1);
    cfg.dropout = 0.0;
    let state = perturbed_state(&cfg, ModelKind::SasRec, 4);
    let l = &state.layers[0];
    let x = randn(&[1, 8], 3);
    let mut tape = Tape::new();
    let bound = state.bind(&mut tape, false);
    let xv = tape.constant(x.clone());
    let w = WindowBatch::new(&[2], 1).unwrap();
    let y = causal_self_attention(&mut tape, &bound.layers[0], &cfg, xv, &w).unwrap();
    let v = x.matmul(&l.wv).unwrap();
    let v: Vec<f64> = v
        .data()
        .iter()
        .zip(l.bv.data())
        .map(|(a, b)| a + b)
        .collect();
    let v = Tensor::new(&[1, 8], v).unwrap();
    let o = v.matmul(&l.wo).unwrap();
    for (k, a) in tape.value(y).data().iter().enumerate() {
        assert!((a - (o.data()[k] + l.bo.data()[k])).abs() < 1e-12);
    }
}

#[test]
fn embedding_examples() {
    let cfg = tiny_config(6, 4, 3, 1);
    let state = perturbed_state(&cfg, ModelKind::SasRec, 1);
    let mut tape = Tape::new();
    let bound = state.bind(&mut tape, false);
    let w = WindowBatch::new(&[0, 0, 0], 3).unwrap();
    let e = embed_sequence(&mut tape, &bound, &cfg, &w, Pass::inference()).unwrap();
    assert_eq!(tape.value(e).data(), state.pos_emb.data());

    let ab = WindowBatch::new(&[0, 2, 5], 3).unwrap();
    let ba = WindowBatch::new(&[0, 5, 2], 3).unwrap();
    let x = embed_sequence(&mut tape, &bound, &cfg, &ab, Pass::inference()).unwrap();
    let y = embed_sequence(&mut tape, &bound, &cfg, &ba, Pass::inference()).unwrap();
    assert_ne!(tape.value(x).data(), tape.value(y).data());

    let bad = WindowBatch::new(&[0, 7, 1], 3).unwrap();
    assert!(embed_sequence(&mut tape, &bound, &cfg, &bad, Pass::inference()).is_err());
}

#[test]
fn zero_ffn_weights_reduce_to_layer_norm() {
    let mut cfg = tiny_config(5, 8, 4, 1);
    cfg.dropout = 0.0;
    let mut state = perturbed_state(&cfg, ModelKind::SasRec, 2);
    let l = &mut state.layers[0];
    for t in [&mut l.ffn_w1, &mut l.ffn_b1, &mut l.ffn_w2, &mut l.ffn_b2] {
        *t = Tensor::zeros(t.shape());
    }
    let mut tape = Tape::new();
    let bound = state.bind(&mut tape, false);
    let h = tape.constant(randn(&[4, 8], 5));
    let y = pointwise_ffn(&mut tape, &bound.layers[0], &cfg, h, Pass::inference(), 1).unwrap();
    let l = &bound.layers[0];
    let n = tape
        .layer_norm(h, l.ffn_norm_gain, l.ffn_norm_bias, 1e-12)
        .unwrap();
    assert_eq!(tape.value(y).data(), tape.value(n).data());
}

#[test]
fn identity_filter_branch_reduces_to_normalized_input() {
    let len = 6;
    let mut cfg = tiny_config(5, 8, len, 1);
    cfg.dropout = 0.0;
    cfg.alpha = 1.0;
    for mode in [FilterMode::Causal, FilterMode::Window] {
        cfg.spectral = Some(seqlab_core::spectral::SpectralConfig {
            cutoff: bin_count(len),
            beta_init: 1.0,
            per_dim_beta: false,
            mode,
        });
        let state = perturbed_state(&cfg, ModelKind::BsaRec, 3);
        let mut state = state;
        state.layers[0].filter.as_mut().unwrap().beta = Tensor::scalar(1.0);
        let filter = Arc::new(FrequencyFilter::new(len, bin_count(len), mode).unwrap());
        let ids = random_windows(1, len, 5, 8);
        let w = WindowBatch::new(&ids, len).unwrap();
        let mut tape = Tape::new();
        let bound = state.bind(&mut tape, false);
        let h = tape.constant(randn(&[len, 8], 6));
        let y = bsarec_layer(
            &mut tape,
            &bound.layers[0],
            &cfg,
            h,
            &w,
            Some(&filter),
            Pass::inference(),
            1,
        )
        .unwrap();

        let l = &bound.layers[0];
        let (g, b, _) = l.filter.unwrap();
        let branch = tape.layer_norm(h, g, b, 1e-12).unwrap();
        let h1 = tape.add(h, branch).unwrap();
        let expect = pointwise_ffn(&mut tape, l, &cfg, h1, Pass::inference(), 1).unwrap();
        assert!(
            tape.value(y).max_abs_diff(tape.value(expect)) < 1e-10,
            "{mode:?}"
        );
    }
}

#[test]
fn bsarec_layer_without_filter_is_a_config_error() {
    let cfg = tiny_config(5, 8, 4, 1);
    let state = EncoderState::<f64>::init(&cfg, ModelKind::BsaRec, 0);
    let mut tape = Tape::new();
    let bound = state.bind(&mut tape, false);
    let h = tape.constant(randn(&[4, 8], 1));
    let w = WindowBatch::new(&[1, 2, 3, 4], 4).unwrap();
    let r = bsarec_layer(
        &mut tape,
        &bound.layers[0],
        &cfg,
        h,
        &w,
        None,
        Pass::inference(),
        1,
    );
    assert!(matches!(r, Err(seqlab_core::Error::Config(_))));
}

#[test]
fn sasrec_layer_output_is_finite_and_bounded() {
    let cfg = tiny_config(5, 8, 4, 1);
    for seed in 0..10 {
        let state = EncoderState::<f64>::init(&cfg, ModelKind::SasRec, seed);
        let mut tape = Tape::new();
        let bound = state.bind(&mut tape, false);
        let x = randn(&[4, 8], seed);
        let h = tape.constant(x.clone());
        let w = WindowBatch::new(&[1, 2, 3, 4], 4).unwrap();
        let y = sasrec_layer(
            &mut tape,
            &bound.layers[0],
            &cfg,
            h,
            &w,
            Pass::inference(),
            1,
        )
        .unwrap();
        let y = tape.value(y);
        assert!(y.is_finite());
        assert!(y.norm() <= 10.0 * x.norm());
    }
}

#[test]
fn zero_blocks_is_normalized_embedding() {
    let mut cfg = tiny_config(5, 8, 4, 0);
    cfg.dropout = 0.0;
    let state = perturbed_state(&cfg, ModelKind::SasRec, 1);
    let mut tape = Tape::new();
    let bound = state.bind(&mut tape, false);
    let w = WindowBatch::new(&[0, 1, 4, 2], 4).unwrap();
    let y = encode(
        &mut tape,
        &bound,
        &cfg,
        ModelKind::SasRec,
        &w,
        None,
        Pass::inference(),
    )
    .unwrap();
    let e = embed_sequence(&mut tape, &bound, &cfg, &w, Pass::inference()).unwrap();
    let n = tape
        .layer_norm(e, bound.final_norm_gain, bound.final_norm_bias, 1e-12)
        .unwrap();
    assert_eq!(tape.value(y).data(), tape.value(n).data());
}

#[test]
fn seeded_training_passes_are_reproducible() {
    let cfg = tiny_config(20, 16, 8, 2);
    for kind in [ModelKind::SasRec, ModelKind::BsaRec] {
        let m = SeqRecModel::<f64>::new(kind, cfg.clone(), 7).unwrap();
        let ids = random_windows(3, 8, 20, 1);
        let run = || {
            let w = WindowBatch::new(&ids, 8).unwrap();
            let mut t = Tape::new();
            let (_, h) = m.forward(&mut t, &w, Pass::training(99), false).unwrap();
            bits(t.value(h))
        };
        assert_eq!(run(), run());
    }
}

#[test]
fn score_items_hand_example() {
    let cfg = ModelConfig {
        num_items: 3,
        dim: 2,
        max_len: 1,
        blocks: 0,
        heads: 1,
        ..Default::default()
    };
    let mut state = EncoderState::<f64>::init(&cfg, ModelKind::SasRec, 0);
    state.item_emb = Tensor::from_f64(&[4, 2], &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
    assert_eq!(score_items(&[2.0, 1.0], &state), vec![2.0, 1.0, 3.0]);
    assert_eq!(score_items(&[0.0, 0.0], &state), vec![0.0, 0.0, 0.0]);
}

#[test]
fn batched_and_single_scoring_agree() {
    let cfg = tiny_config(25, 16, 8, 2);
    let m = SeqRecModel::<f64>::new(ModelKind::BsaRec, cfg, 3).unwrap();
    let ids = random_windows(70, 8, 25, 4);
    let windows: Vec<Vec<usize>> = ids.chunks(8).map(<[usize]>::to_vec).collect();
    let all = m.score_windows(&windows).unwrap();
    for (k, w) in windows.iter().enumerate().step_by(9) {
        let one = m.score_windows(std::slice::from_ref(w)).unwrap();
        assert_eq!(one[0], all[k]);
    }
}
