//! Forward passes for the embedding layer, causal multi-head attention,
//! the pointwise FFN and the two encoder layers.
//!
//! Hidden states are kept as `[batch·len, d]`. The BSARec layer is the
//! SASRec layer plus a parallel frequency branch; both are produced by
//! [`encoder_layer`], so `alpha = 0` degenerates to SASRec exactly.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::state::{BoundLayer, BoundState, EncoderState};
use super::{ModelConfig, ModelKind};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::spectral::FrequencyFilter;
use crate::tensor::kernels::gemm_nt;
use crate::tensor::{Tape, Var};

/// A batch of left-padded item windows, `batch × len` ids row-major.
#[derive(Clone, Copy, Debug)]
pub struct WindowBatch<'a> {
    pub ids: &'a [usize],
    pub batch: usize,
    pub len: usize,
}

impl<'a> WindowBatch<'a> {
    pub fn new(ids: &'a [usize], len: usize) -> Result<Self> {
        if len == 0 || !ids.len().is_multiple_of(len) {
            return Err(Error::shape("window batch", &[ids.len()], &[len]));
        }
        Ok(WindowBatch {
            ids,
            batch: ids.len() / len,
            len,
        })
    }

    fn id(&self, b: usize, t: usize) -> usize {
        self.ids[b * self.len + t]
    }
}

/// Dropout sites. Each site in each layer draws from its own stream so
/// adding a branch never shifts another branch's masks.
#[derive(Clone, Copy, Debug)]
enum Site {
    Embedding = 1,
    Attention = 2,
    Filter = 3,
    Ffn = 4,
}

/// Mode and seed for one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Pass {
    pub training: bool,
    pub seed: u64,
}

impl Pass {
    pub fn inference() -> Self {
        Pass {
            training: false,
            seed: 0,
        }
    }

    pub fn training(seed: u64) -> Self {
        Pass {
            training: true,
            seed,
        }
    }

    fn rng(&self, layer: usize, site: Site) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(mix(self.seed, (layer as u64) << 8 | site as u64))
    }
}

/// SplitMix64 finalizer over a combined key.
pub(crate) fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Item embedding plus positional embedding, then dropout.
pub fn embed_sequence<T: Scalar>(
    tape: &mut Tape<T>,
    p: &BoundState,
    cfg: &ModelConfig,
    w: &WindowBatch,
    pass: Pass,
) -> Result<Var> {
    if w.len != cfg.max_len {
        return Err(Error::shape("embed_sequence", &[w.len], &[cfg.max_len]));
    }
    let items = tape.embedding(p.item_emb, w.ids)?;
    let positions: Vec<usize> = (0..w.batch).flat_map(|_| 0..w.len).collect();
    let pos = tape.gather_rows(p.pos_emb, &positions)?;
    let h = tape.add(items, pos)?;
    tape.dropout(
        h,
        cfg.dropout,
        pass.training,
        &mut pass.rng(0, Site::Embedding),
    )
}

/// Visibility mask for `[batch·heads, len, len]` attention scores: key j is
/// visible to query i when j ≤ i and j is not padding. A query always sees
/// itself, so no row is empty.
pub fn attention_mask(w: &WindowBatch, heads: usize) -> Vec<bool> {
    let l = w.len;
    let mut mask = Vec::with_capacity(w.batch * heads * l * l);
    for b in 0..w.batch {
        let mut block = vec![false; l * l];
        for i in 0..l {
            for j in 0..=i {
                block[i * l + j] = j == i || w.id(b, j) != 0;
            }
        }
        for _ in 0..heads {
            mask.extend_from_slice(&block);
        }
    }
    mask
}

/// Multi-head scaled dot-product attention under the causal/padding mask,
/// followed by the output projection.
pub fn causal_self_attention<T: Scalar>(
    tape: &mut Tape<T>,
    l: &BoundLayer,
    cfg: &ModelConfig,
    h: Var,
    w: &WindowBatch,
) -> Result<Var> {
    let heads = cfg.heads;
    let proj = |tape: &mut Tape<T>, wt: Var, b: Var| -> Result<Var> {
        let x = tape.matmul(h, wt)?;
        let x = tape.add_bias(x, b)?;
        tape.split_heads(x, w.batch, w.len, heads)
    };
    let q = proj(tape, l.wq, l.bq)?;
    let k = proj(tape, l.wk, l.bk)?;
    let v = proj(tape, l.wv, l.bv)?;
    let scores = tape.batch_matmul(q, k, true)?;
    let scores = tape.scale(scores, T::one() / T::of(cfg.head_dim() as f64).sqrt())?;
    let mask = attention_mask(w, heads);
    let probs = tape.softmax_lastdim(scores, Some(&mask))?;
    let ctx = tape.batch_matmul(probs, v, false)?;
    let merged = tape.merge_heads(ctx, w.batch, w.len, heads)?;
    let out = tape.matmul(merged, l.wo)?;
    tape.add_bias(out, l.bo)
}

fn ffn_inner<T: Scalar>(tape: &mut Tape<T>, l: &BoundLayer, x: Var) -> Result<Var> {
    let a = tape.matmul(x, l.ffn_w1)?;
    let a = tape.add_bias(a, l.ffn_b1)?;
    let a = tape.gelu(a)?;
    let b = tape.matmul(a, l.ffn_w2)?;
    tape.add_bias(b, l.ffn_b2)
}

/// Position-wise two-layer GELU network with dropout and residual; the
/// norm goes after the residual (post-norm) or on the input (pre-norm).
pub fn pointwise_ffn<T: Scalar>(
    tape: &mut Tape<T>,
    l: &BoundLayer,
    cfg: &ModelConfig,
    h: Var,
    pass: Pass,
    layer: usize,
) -> Result<Var> {
    let eps = T::of(cfg.eps);
    let mut rng = pass.rng(layer, Site::Ffn);
    if cfg.norm_first {
        let x = tape.layer_norm(h, l.ffn_norm_gain, l.ffn_norm_bias, eps)?;
        let y = ffn_inner(tape, l, x)?;
        let y = tape.dropout(y, cfg.dropout, pass.training, &mut rng)?;
        tape.add(h, y)
    } else {
        let y = ffn_inner(tape, l, h)?;
        let y = tape.dropout(y, cfg.dropout, pass.training, &mut rng)?;
        let r = tape.add(h, y)?;
        tape.layer_norm(r, l.ffn_norm_gain, l.ffn_norm_bias, eps)
    }
}

/// Frequency branch settings for a BSARec layer.
#[derive(Clone, Copy)]
pub struct FrequencyBranch<'a, T> {
    pub filter: &'a Arc<FrequencyFilter<T>>,
    pub alpha: f64,
}

/// One encoder layer. Without a branch this is the SASRec layer; with one
/// it is the BSARec layer, whose mixed sublayer output is
/// `α·norm(dropout(rescale(H))) + (1−α)·norm(dropout(attention(H)))`
/// (post-norm) before the residual add and the FFN.
pub fn encoder_layer<T: Scalar>(
    tape: &mut Tape<T>,
    l: &BoundLayer,
    cfg: &ModelConfig,
    h: Var,
    w: &WindowBatch,
    branch: Option<FrequencyBranch<'_, T>>,
    pass: Pass,
    layer: usize,
) -> Result<Var> {
    let eps = T::of(cfg.eps);
    let attn = if cfg.norm_first {
        let x = tape.layer_norm(h, l.attn_norm_gain, l.attn_norm_bias, eps)?;
        let a = causal_self_attention(tape, l, cfg, x, w)?;
        tape.dropout(
            a,
            cfg.dropout,
            pass.training,
            &mut pass.rng(layer, Site::Attention),
        )?
    } else {
        let a = causal_self_attention(tape, l, cfg, h, w)?;
        let a = tape.dropout(
            a,
            cfg.dropout,
            pass.training,
            &mut pass.rng(layer, Site::Attention),
        )?;
        tape.layer_norm(a, l.attn_norm_gain, l.attn_norm_bias, eps)?
    };

    let mixed = match branch {
        None => attn,
        Some(br) => {
            let (gain, bias, beta) = l
                .filter
                .ok_or_else(|| Error::Config("layer has no frequency-branch parameters".into()))?;
            let mut rng = pass.rng(layer, Site::Filter);
            let freq = if cfg.norm_first {
                let x = tape.layer_norm(h, gain, bias, eps)?;
                let f = tape.frequency_rescale(x, beta, Arc::clone(br.filter))?;
                tape.dropout(f, cfg.dropout, pass.training, &mut rng)?
            } else {
                let f = tape.frequency_rescale(h, beta, Arc::clone(br.filter))?;
                let f = tape.dropout(f, cfg.dropout, pass.training, &mut rng)?;
                tape.layer_norm(f, gain, bias, eps)?
            };
            let fb = tape.scale(freq, T::of(br.alpha))?;
            let ab = tape.scale(attn, T::of(1.0 - br.alpha))?;
            tape.add(fb, ab)?
        }
    };
    let h1 = tape.add(h, mixed)?;
    pointwise_ffn(tape, l, cfg, h1, pass, layer)
}

pub fn sasrec_layer<T: Scalar>(
    tape: &mut Tape<T>,
    l: &BoundLayer,
    cfg: &ModelConfig,
    h: Var,
    w: &WindowBatch,
    pass: Pass,
    layer: usize,
) -> Result<Var> {
    encoder_layer(tape, l, cfg, h, w, None, pass, layer)
}

pub fn bsarec_layer<T: Scalar>(
    tape: &mut Tape<T>,
    l: &BoundLayer,
    cfg: &ModelConfig,
    h: Var,
    w: &WindowBatch,
    filter: Option<&Arc<FrequencyFilter<T>>>,
    pass: Pass,
    layer: usize,
) -> Result<Var> {
    let filter =
        filter.ok_or_else(|| Error::Config("bsarec layer requires a spectral config".into()))?;
    let branch = FrequencyBranch {
        filter,
        alpha: cfg.alpha,
    };
    encoder_layer(tape, l, cfg, h, w, Some(branch), pass, layer)
}

/// Embedding, `blocks` stacked layers of the given kind, final norm.
pub fn encode<T: Scalar>(
    tape: &mut Tape<T>,
    p: &BoundState,
    cfg: &ModelConfig,
    kind: ModelKind,
    w: &WindowBatch,
    filter: Option<&Arc<FrequencyFilter<T>>>,
    pass: Pass,
) -> Result<Var> {
    let mut h = embed_sequence(tape, p, cfg, w, pass)?;
    for (i, l) in p.layers.iter().enumerate() {
        h = match kind {
            ModelKind::SasRec => sasrec_layer(tape, l, cfg, h, w, pass, i + 1)?,
            ModelKind::BsaRec => bsarec_layer(tape, l, cfg, h, w, filter, pass, i + 1)?,
        };
    }
    tape.layer_norm(h, p.final_norm_gain, p.final_norm_bias, T::of(cfg.eps))
}

/// `score[i−1] = h · E[i]` for every catalog item i in 1..=num_items.
pub fn score_items<T: Scalar>(h_last: &[T], state: &EncoderState<T>) -> Vec<T> {
    let d = h_last.len();
    let n = state.item_emb.rows() - 1;
    gemm_nt(h_last, &state.item_emb.data()[d..], 1, d, n)
}
