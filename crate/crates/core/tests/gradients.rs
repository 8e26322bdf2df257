//! Finite-difference checks for every differentiable primitive and for
//! both full encoder layers on d=8, L=4 instances over ten seeds.

mod common;

use std::sync::Arc;

use common::{
    perturbed_state, probe, randn, random_windows, rng, state_grad_check, tiny_config, EPS, TOL,
};
use seqlab_core::models::{
    bsarec_layer, encode, sasrec_layer, ModelConfig, ModelKind, Pass, WindowBatch,
};
use seqlab_core::spectral::{FilterMode, FrequencyFilter};
use seqlab_core::train::{next_item_loss, TrainConfig};
use seqlab_core::{grad_check, Result, Tape, Tensor, Var};

const D: usize = 8;
const L: usize = 4;
const SEEDS: std::ops::Range<u64> = 0..10;

type Unary = Box<dyn Fn(&mut Tape<f64>, Var) -> Result<Var>>;

/// Checks `f` with respect to an input of the given shape for every seed.
fn check(name: &str, shape: &[usize], make: impl Fn(u64) -> Unary) {
    for seed in SEEDS {
        let x = randn(shape, seed);
        let f = make(seed);
        let err = grad_check(|t, v| f(t, v), &x, EPS).unwrap();
        assert!(err < TOL, "{name} seed {seed}: relative error {err:e}");
    }
}

fn with_probe(seed: u64, op: impl Fn(&mut Tape<f64>, Var) -> Result<Var> + 'static) -> Unary {
    Box::new(move |t, v| {
        let y = op(t, v)?;
        probe(t, y, seed)
    })
}

#[test]
fn matmul_both_operands() {
    check("matmul lhs", &[L, D], |s| {
        with_probe(s, move |t, v| {
            let b = t.constant(randn(&[D, 3], s + 100));
            t.matmul(v, b)
        })
    });
    check("matmul rhs", &[D, 3], |s| {
        with_probe(s, move |t, v| {
            let a = t.constant(randn(&[L, D], s + 100));
            t.matmul(a, v)
        })
    });
    check("matmul_nt lhs", &[L, D], |s| {
        with_probe(s, move |t, v| {
            let b = t.constant(randn(&[5, D], s + 100));
            t.matmul_nt(v, b)
        })
    });
    check("matmul_nt rhs", &[5, D], |s| {
        with_probe(s, move |t, v| {
            let a = t.constant(randn(&[L, D], s + 100));
            t.matmul_nt(a, v)
        })
    });
}

#[test]
fn batch_matmul_plain_and_transposed() {
    for trans in [false, true] {
        let bshape: [usize; 3] = if trans { [2, L, D] } else { [2, D, L] };
        check("batch_matmul lhs", &[2, L, D], move |s| {
            with_probe(s, move |t, v| {
                let b = t.constant(randn(&bshape, s + 100));
                t.batch_matmul(v, b, trans)
            })
        });
        check("batch_matmul rhs", &bshape, move |s| {
            with_probe(s, move |t, v| {
                let a = t.constant(randn(&[2, L, D], s + 100));
                t.batch_matmul(a, v, trans)
            })
        });
    }
}

#[test]
fn elementwise_ops() {
    check("add", &[L, D], |s| {
        with_probe(s, move |t, v| {
            let b = t.constant(randn(&[L, D], s + 1));
            t.add(v, b)
        })
    });
    check("sub lhs", &[L, D], |s| {
        with_probe(s, move |t, v| {
            let b = t.constant(randn(&[L, D], s + 1));
            t.sub(v, b)
        })
    });
    check("sub rhs", &[L, D], |s| {
        with_probe(s, move |t, v| {
            let a = t.constant(randn(&[L, D], s + 1));
            t.sub(a, v)
        })
    });
    check("mul self", &[L, D], |s| with_probe(s, |t, v| t.mul(v, v)));
    check("scale", &[L, D], |s| with_probe(s, |t, v| t.scale(v, -1.7)));
    check("add_bias x", &[L, D], |s| {
        with_probe(s, move |t, v| {
            let b = t.constant(randn(&[D], s + 1));
            t.add_bias(v, b)
        })
    });
    check("add_bias bias", &[D], |s| {
        with_probe(s, move |t, v| {
            let x = t.constant(randn(&[L, D], s + 1));
            t.add_bias(x, v)
        })
    });
    for width in [D, 1] {
        check("mul_last x", &[L, D], move |s| {
            with_probe(s, move |t, v| {
                let w = t.constant(randn(&[width], s + 1));
                t.mul_last(v, w)
            })
        });
        check("mul_last v", &[width], move |s| {
            with_probe(s, move |t, v| {
                let x = t.constant(randn(&[L, D], s + 1));
                t.mul_last(x, v)
            })
        });
    }
    check("gelu", &[L, D], |s| with_probe(s, |t, v| t.gelu(v)));
}

#[test]
fn softmax_plain_and_causally_masked() {
    check("softmax", &[L, D], |s| {
        with_probe(s, |t, v| t.softmax_lastdim(v, None))
    });
    let mask: Vec<bool> = (0..L * L).map(|k| k % L <= k / L).collect();
    check("masked softmax", &[2, L, L], move |s| {
        let m = mask.clone();
        with_probe(s, move |t, v| t.softmax_lastdim(v, Some(&m)))
    });
}

#[test]
fn layer_norm_all_inputs() {
    check("layer_norm x", &[L, D], |s| {
        with_probe(s, move |t, v| {
            let g = t.constant(randn(&[D], s + 1));
            let b = t.constant(randn(&[D], s + 2));
            t.layer_norm(v, g, b, 1e-12)
        })
    });
    check("layer_norm gain", &[D], |s| {
        with_probe(s, move |t, v| {
            let x = t.constant(randn(&[L, D], s + 1));
            let b = t.constant(randn(&[D], s + 2));
            t.layer_norm(x, v, b, 1e-12)
        })
    });
    check("layer_norm bias", &[D], |s| {
        with_probe(s, move |t, v| {
            let x = t.constant(randn(&[L, D], s + 1));
            let g = t.constant(randn(&[D], s + 2));
            t.layer_norm(x, g, v, 1e-12)
        })
    });
}

#[test]
fn dropout_with_fixed_mask() {
    check("dropout", &[L, D], |s| {
        with_probe(s, move |t, v| t.dropout(v, 0.3, true, &mut rng(s + 7)))
    });
}

#[test]
fn indexing_and_layout_ops() {
    check("embedding", &[6, D], |s| {
        with_probe(s, |t, v| t.embedding(v, &[1, 3, 3, 5, 2]))
    });
    check("gather_rows", &[L, D], |s| {
        with_probe(s, |t, v| t.gather_rows(v, &[3, 0, 3, 1]))
    });
    check("reshape", &[L, D], |s| {
        with_probe(s, |t, v| t.reshape(v, &[2, 16]))
    });
    check("split_heads", &[2 * L, D], |s| {
        with_probe(s, |t, v| t.split_heads(v, 2, L, 2))
    });
    check("merge_heads", &[4, L, D / 2], |s| {
        with_probe(s, |t, v| t.merge_heads(v, 2, L, 2))
    });
}

#[test]
fn embedding_padding_row_gets_no_gradient() {
    let mut t = Tape::new();
    let table = t.param(randn(&[4, D], 1));
    let e = t.embedding(table, &[0, 2, 0]).unwrap();
    let loss = probe(&mut t, e, 3).unwrap();
    let g = t.backward(loss).unwrap();
    let gt = g.get(table).unwrap();
    assert!(gt.row(0).iter().all(|&v| v == 0.0));
    assert!(gt.row(2).iter().any(|&v| v != 0.0));
}

#[test]
fn frequency_rescale_input_and_beta() {
    for mode in [FilterMode::Causal, FilterMode::Window] {
        for cutoff in [1, 2, 3] {
            let filter = Arc::new(FrequencyFilter::<f64>::new(L, cutoff, mode).unwrap());
            for bw in [1, D] {
                let f1 = Arc::clone(&filter);
                check("frequency_rescale x", &[2 * L, D], move |s| {
                    let f = Arc::clone(&f1);
                    with_probe(s, move |t, v| {
                        let beta = t.constant(randn(&[bw], s + 1));
                        t.frequency_rescale(v, beta, Arc::clone(&f))
                    })
                });
                let f2 = Arc::clone(&filter);
                check("frequency_rescale beta", &[bw], move |s| {
                    let f = Arc::clone(&f2);
                    with_probe(s, move |t, v| {
                        let x = t.constant(randn(&[2 * L, D], s + 1));
                        t.frequency_rescale(x, v, Arc::clone(&f))
                    })
                });
            }
        }
    }
}

#[test]
fn losses_and_reductions() {
    check("cross_entropy", &[L, 6], |_| {
        Box::new(|t, v| t.cross_entropy(v, &[2, 0, 5, 1]))
    });
    check("bce_with_logits", &[L, D], |_| {
        let labels: Vec<f64> = (0..L * D).map(|k| (k % 3 == 0) as u8 as f64).collect();
        Box::new(move |t, v| t.bce_with_logits(v, &labels))
    });
    check("row_dot", &[L, D], |s| {
        with_probe(s, move |t, v| {
            let b = t.constant(randn(&[L, D], s + 1));
            t.row_dot(v, b)
        })
    });
    check("row_dot self", &[L, D], |s| {
        with_probe(s, |t, v| t.row_dot(v, v))
    });
    check("sum", &[L, D], |_| Box::new(|t, v| t.sum(v)));
    check("mean", &[L, D], |s| {
        with_probe(s, |t, v| {
            let m = t.mean(v)?;
            t.mul(m, m)
        })
    });
}

fn layer_configs() -> Vec<ModelConfig> {
    let mut out = Vec::new();
    for norm_first in [false, true] {
        for mode in [FilterMode::Causal, FilterMode::Window] {
            let mut cfg = tiny_config(7, D, L, 1);
            cfg.norm_first = norm_first;
            cfg.spectral.as_mut().unwrap().mode = mode;
            out.push(cfg);
        }
    }
    out
}

fn run_layer(
    t: &mut Tape<f64>,
    kind: ModelKind,
    cfg: &ModelConfig,
    bound: &seqlab_core::models::BoundState,
    h: Var,
    ids: &[usize],
    seed: u64,
) -> Result<Var> {
    let w = WindowBatch::new(ids, L)?;
    let pass = Pass::training(seed);
    let filter = cfg
        .spectral
        .as_ref()
        .map(|s| Arc::new(FrequencyFilter::new(L, s.cutoff, s.mode).unwrap()));
    let out = match kind {
        ModelKind::SasRec => sasrec_layer(t, &bound.layers[0], cfg, h, &w, pass, 1)?,
        ModelKind::BsaRec => {
            bsarec_layer(t, &bound.layers[0], cfg, h, &w, filter.as_ref(), pass, 1)?
        }
    };
    probe(t, out, seed)
}

#[test]
fn full_layers_wrt_input() {
    for kind in [ModelKind::SasRec, ModelKind::BsaRec] {
        for cfg in layer_configs() {
            for seed in SEEDS {
                let state = perturbed_state(&cfg, kind, seed);
                let ids = random_windows(2, L, cfg.num_items, seed);
                let x = randn(&[2 * L, D], seed + 50);
                let err = grad_check(
                    |t, v| {
                        let bound = state.bind(t, false);
                        run_layer(t, kind, &cfg, &bound, v, &ids, seed)
                    },
                    &x,
                    EPS,
                )
                .unwrap();
                assert!(
                    err < TOL,
                    "{kind} norm_first={} seed {seed}: {err:e}",
                    cfg.norm_first
                );
            }
        }
    }
}

#[test]
fn full_layers_wrt_parameters() {
    for kind in [ModelKind::SasRec, ModelKind::BsaRec] {
        for cfg in layer_configs() {
            for seed in SEEDS {
                let state = perturbed_state(&cfg, kind, seed);
                let ids = random_windows(2, L, cfg.num_items, seed);
                let x = randn(&[2 * L, D], seed + 50);
                let err = state_grad_check(&state, |t, bound| {
                    let h = t.constant(x.clone());
                    run_layer(t, kind, &cfg, bound, h, &ids, seed)
                })
                .unwrap();
                assert!(
                    err < TOL,
                    "{kind} norm_first={} seed {seed}: {err:e}",
                    cfg.norm_first
                );
            }
        }
    }
}

#[test]
fn two_block_models_through_the_training_loss() {
    for kind in [ModelKind::SasRec, ModelKind::BsaRec] {
        for seed in 0..3 {
            let cfg = tiny_config(9, D, L, 2);
            let state = perturbed_state(&cfg, kind, seed);
            let ids = random_windows(2, L, cfg.num_items, seed);
            let targets = random_windows(2, L, cfg.num_items, seed + 1);
            let filter = Arc::new(FrequencyFilter::new(L, 1, FilterMode::Causal).unwrap());
            let tc = TrainConfig::default();
            let err = state_grad_check(&state, |t, bound| {
                let w = WindowBatch::new(&ids, L)?;
                let h = encode(
                    t,
                    bound,
                    &cfg,
                    kind,
                    &w,
                    Some(&filter),
                    Pass::training(seed),
                )?;
                next_item_loss(t, h, &targets, bound.item_emb, &tc, &mut rng(0))
            })
            .unwrap();
            assert!(err < TOL, "{kind} seed {seed}: {err:e}");
        }
    }
}

#[test]
fn three_layer_mlp_and_shared_input_dag() {
    check("mlp", &[L, D], |s| {
        Box::new(move |t, x| {
            let w1 = t.constant(randn(&[D, 6], s + 1));
            let w2 = t.constant(randn(&[6, 5], s + 2));
            let w3 = t.constant(randn(&[5, 1], s + 3));
            let h = t.matmul(x, w1)?;
            let h = t.gelu(h)?;
            let h = t.matmul(h, w2)?;
            let h = t.gelu(h)?;
            let y = t.matmul(h, w3)?;
            t.sum(y)
        })
    });
    // x feeds three branches that rejoin: gradient contributions must add
    check("dag", &[L, D], |s| {
        with_probe(s, |t, x| {
            let a = t.mul(x, x)?;
            let b = t.gelu(x)?;
            let c = t.scale(x, 3.0)?;
            let ab = t.add(a, b)?;
            let abc = t.mul(ab, c)?;
            t.add(abc, x)
        })
    });
    let x = Tensor::<f64>::from_f64(&[2], &[1.0, -2.0]).unwrap();
    let mut t = Tape::new();
    let v = t.param(x);
    let y = t.mul(v, v).unwrap();
    let z = t.add(y, v).unwrap();
    let s = t.sum(z).unwrap();
    let g = t.backward(s).unwrap();
    assert_eq!(g.get(v).unwrap().data(), &[3.0, -3.0]);
}
