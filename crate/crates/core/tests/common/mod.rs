#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqlab_core::models::{BoundState, EncoderState, ModelConfig, ModelKind};
use seqlab_core::spectral::{FilterMode, SpectralConfig};
use seqlab_core::{Result, Tape, Tensor, Var};

pub const EPS: f64 = 1e-6;
pub const TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, &mut rng(seed))
}

/// `Σ y ⊙ R` for a fixed random `R`: a scalar whose gradient touches
/// every output coordinate with a different weight.
pub fn probe(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let r = tape.constant(randn(tape.shape(y), seed ^ 0xABCD));
    let p = tape.mul(y, r)?;
    tape.sum(p)
}

pub fn tiny_config(num_items: usize, dim: usize, len: usize, blocks: usize) -> ModelConfig {
    ModelConfig {
        num_items,
        dim,
        max_len: len,
        blocks,
        heads: 2,
        dropout: 0.2,
        alpha: 0.7,
        spectral: Some(SpectralConfig {
            cutoff: 1,
            beta_init: 0.7,
            per_dim_beta: false,
            mode: FilterMode::Causal,
        }),
        norm_first: false,
        eps: 1e-12,
    }
}

/// Random left-padded windows: each has a random number of leading zeros.
pub fn random_windows(batch: usize, len: usize, items: usize, seed: u64) -> Vec<usize> {
    let mut r = rng(seed);
    let mut ids = Vec::with_capacity(batch * len);
    for _ in 0..batch {
        let pad = r.gen_range(0..len);
        for t in 0..len {
            ids.push(if t < pad { 0 } else { r.gen_range(1..=items) });
        }
    }
    ids
}

/// Randomizes every parameter so gains, biases and β are not at their
/// special initial values.
pub fn perturbed_state(cfg: &ModelConfig, kind: ModelKind, seed: u64) -> EncoderState<f64> {
    let mut s = EncoderState::init(cfg, kind, seed);
    let mut r = rng(seed ^ 0x5151);
    s.visit_mut(|name, t| {
        let skip = if name == "item_emb" { t.last_dim() } else { 0 };
        for v in &mut t.data_mut()[skip..] {
            *v += r.gen_range(-0.3..0.3);
        }
    });
    s
}

/// Worst relative error between tape gradients and central differences
/// for every parameter coordinate of `state`.
pub fn state_grad_check(
    state: &EncoderState<f64>,
    loss: impl Fn(&mut Tape<f64>, &BoundState) -> Result<Var>,
) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = state.bind(&mut tape, true);
    let out = loss(&mut tape, &bound)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = bound
        .ordered()
        .iter()
        .map(|&v| grads.get(v).unwrap().clone())
        .collect();

    let eval = |s: &EncoderState<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let b = s.bind(&mut tape, false);
        let out = loss(&mut tape, &b)?;
        Ok(tape.value(out).data()[0])
    };
    let mut sizes = Vec::new();
    state.visit(|_, t| sizes.push(t.len()));
    let pad_row = state.item_emb.last_dim();
    let mut worst = 0.0f64;
    for (k, &n) in sizes.iter().enumerate() {
        // the padding row is frozen
        let start = if k == 0 { pad_row } else { 0 };
        for i in start..n {
            let shifted = |delta: f64| {
                let mut s = state.clone();
                let mut idx = 0;
                s.visit_mut(|_, t| {
                    if idx == k {
                        t.data_mut()[i] += delta;
                    }
                    idx += 1;
                });
                s
            };
            let numeric = (eval(&shifted(EPS))? - eval(&shifted(-EPS))?) / (2.0 * EPS);
            let a = analytic[k].data()[i];
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
    }
    Ok(worst)
}
