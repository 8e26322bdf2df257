use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, ModelKind};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

/// Learnable parameters of one encoder layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerState<T> {
    pub wq: Tensor<T>,
    pub bq: Tensor<T>,
    pub wk: Tensor<T>,
    pub bk: Tensor<T>,
    pub wv: Tensor<T>,
    pub bv: Tensor<T>,
    pub wo: Tensor<T>,
    pub bo: Tensor<T>,
    pub ffn_w1: Tensor<T>,
    pub ffn_b1: Tensor<T>,
    pub ffn_w2: Tensor<T>,
    pub ffn_b2: Tensor<T>,
    pub attn_norm_gain: Tensor<T>,
    pub attn_norm_bias: Tensor<T>,
    pub ffn_norm_gain: Tensor<T>,
    pub ffn_norm_bias: Tensor<T>,
    /// Frequency branch (BSARec only): its own norm and β.
    pub filter: Option<FilterState<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterState<T> {
    pub norm_gain: Tensor<T>,
    pub norm_bias: Tensor<T>,
    pub beta: Tensor<T>,
}

/// All learnable parameters of an encoder plus its output embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderState<T> {
    /// `(num_items + 1) × d`; row 0 is the padding row and stays zero.
    pub item_emb: Tensor<T>,
    pub pos_emb: Tensor<T>,
    pub layers: Vec<LayerState<T>>,
    pub final_norm_gain: Tensor<T>,
    pub final_norm_bias: Tensor<T>,
}

impl<T: Scalar> EncoderState<T> {
    /// Gaussian(0, 0.02) weights, zero biases, unit norm gains, β at its
    /// configured initial value. Filter parameters are constants, so a
    /// SASRec and a BSARec state built from the same seed share every
    /// common parameter exactly.
    pub fn init(cfg: &ModelConfig, kind: ModelKind, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.dim;
        let f = cfg.ffn_dim();
        let std = ModelConfig::INIT_STD;
        let mut item_emb = Tensor::randn(&[cfg.num_items + 1, d], std, &mut rng);
        item_emb.row_mut(0).fill(T::zero());
        let pos_emb = Tensor::randn(&[cfg.max_len, d], std, &mut rng);
        let layers = (0..cfg.blocks)
            .map(|_| {
                let mut w = |r, c| Tensor::randn(&[r, c], std, &mut rng);
                let (wq, wk, wv, wo) = (w(d, d), w(d, d), w(d, d), w(d, d));
                let (ffn_w1, ffn_w2) = (w(d, f), w(f, d));
                let filter = (kind == ModelKind::BsaRec).then(|| {
                    let s = cfg.spectral.clone().unwrap_or_default();
                    let width = if s.per_dim_beta { d } else { 1 };
                    FilterState {
                        norm_gain: Tensor::ones(&[d]),
                        norm_bias: Tensor::zeros(&[d]),
                        beta: Tensor::full(&[width], T::of(s.beta_init)),
                    }
                });
                LayerState {
                    wq,
                    bq: Tensor::zeros(&[d]),
                    wk,
                    bk: Tensor::zeros(&[d]),
                    wv,
                    bv: Tensor::zeros(&[d]),
                    wo,
                    bo: Tensor::zeros(&[d]),
                    ffn_w1,
                    ffn_b1: Tensor::zeros(&[f]),
                    ffn_w2,
                    ffn_b2: Tensor::zeros(&[d]),
                    attn_norm_gain: Tensor::ones(&[d]),
                    attn_norm_bias: Tensor::zeros(&[d]),
                    ffn_norm_gain: Tensor::ones(&[d]),
                    ffn_norm_bias: Tensor::zeros(&[d]),
                    filter,
                }
            })
            .collect();
        EncoderState {
            item_emb,
            pos_emb,
            layers,
            final_norm_gain: Tensor::ones(&[d]),
            final_norm_bias: Tensor::zeros(&[d]),
        }
    }

    /// Visits every parameter in canonical order with a stable name.
    pub fn visit(&self, mut f: impl FnMut(&str, &Tensor<T>)) {
        f("item_emb", &self.item_emb);
        f("pos_emb", &self.pos_emb);
        for (i, l) in self.layers.iter().enumerate() {
            for (name, t) in l.named() {
                f(&format!("layers.{i}.{name}"), t);
            }
        }
        f("final_norm.gain", &self.final_norm_gain);
        f("final_norm.bias", &self.final_norm_bias);
    }

    /// Mutable counterpart of [`EncoderState::visit`], same order.
    pub fn visit_mut(&mut self, mut f: impl FnMut(&str, &mut Tensor<T>)) {
        f("item_emb", &mut self.item_emb);
        f("pos_emb", &mut self.pos_emb);
        for (i, l) in self.layers.iter_mut().enumerate() {
            for (name, t) in l.named_mut() {
                f(&format!("layers.{i}.{name}"), t);
            }
        }
        f("final_norm.gain", &mut self.final_norm_gain);
        f("final_norm.bias", &mut self.final_norm_bias);
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(|_, t| n += t.len());
        n
    }

    /// Registers every parameter on the tape, trainable or constant.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundState {
        let mut reg = |t: &Tensor<T>| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        let item_emb = reg(&self.item_emb);
        let pos_emb = reg(&self.pos_emb);
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let v: Vec<Var> = l.named().into_iter().map(|(_, t)| reg(t)).collect();
                BoundLayer::from_ordered(&v, l.filter.is_some())
            })
            .collect();
        let final_norm_gain = reg(&self.final_norm_gain);
        let final_norm_bias = reg(&self.final_norm_bias);
        BoundState {
            item_emb,
            pos_emb,
            layers,
            final_norm_gain,
            final_norm_bias,
        }
    }
}

impl<T: Scalar> LayerState<T> {
    fn named(&self) -> Vec<(&'static str, &Tensor<T>)> {
        let mut v = vec![
            ("wq", &self.wq),
            ("bq", &self.bq),
            ("wk", &self.wk),
            ("bk", &self.bk),
            ("wv", &self.wv),
            ("bv", &self.bv),
            ("wo", &self.wo),
            ("bo", &self.bo),
            ("ffn_w1", &self.ffn_w1),
            ("ffn_b1", &self.ffn_b1),
            ("ffn_w2", &self.ffn_w2),
            ("ffn_b2", &self.ffn_b2),
            ("attn_norm.gain", &self.attn_norm_gain),
            ("attn_norm.bias", &self.attn_norm_bias),
            ("ffn_norm.gain", &self.ffn_norm_gain),
            ("ffn_norm.bias", &self.ffn_norm_bias),
        ];
        if let Some(fs) = &self.filter {
            v.push(("filter_norm.gain", &fs.norm_gain));
            v.push(("filter_norm.bias", &fs.norm_bias));
            v.push(("beta", &fs.beta));
        }
        v
    }

    fn named_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        let mut v = vec![
            ("wq", &mut self.wq),
            ("bq", &mut self.bq),
            ("wk", &mut self.wk),
            ("bk", &mut self.bk),
            ("wv", &mut self.wv),
            ("bv", &mut self.bv),
            ("wo", &mut self.wo),
            ("bo", &mut self.bo),
            ("ffn_w1", &mut self.ffn_w1),
            ("ffn_b1", &mut self.ffn_b1),
            ("ffn_w2", &mut self.ffn_w2),
            ("ffn_b2", &mut self.ffn_b2),
            ("attn_norm.gain", &mut self.attn_norm_gain),
            ("attn_norm.bias", &mut self.attn_norm_bias),
            ("ffn_norm.gain", &mut self.ffn_norm_gain),
            ("ffn_norm.bias", &mut self.ffn_norm_bias),
        ];
        if let Some(fs) = &mut self.filter {
            v.push(("filter_norm.gain", &mut fs.norm_gain));
            v.push(("filter_norm.bias", &mut fs.norm_bias));
            v.push(("beta", &mut fs.beta));
        }
        v
    }
}

/// Tape handles for an [`EncoderState`].
#[derive(Clone, Debug)]
pub struct BoundState {
    pub item_emb: Var,
    pub pos_emb: Var,
    pub layers: Vec<BoundLayer>,
    pub final_norm_gain: Var,
    pub final_norm_bias: Var,
}

impl BoundState {
    /// Handles in the same order as [`EncoderState::visit`].
    pub fn ordered(&self) -> Vec<Var> {
        let mut v = vec![self.item_emb, self.pos_emb];
        for l in &self.layers {
            v.extend(l.ordered());
        }
        v.push(self.final_norm_gain);
        v.push(self.final_norm_bias);
        v
    }
}

#[derive(Clone, Debug)]
pub struct BoundLayer {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
    pub ffn_w1: Var,
    pub ffn_b1: Var,
    pub ffn_w2: Var,
    pub ffn_b2: Var,
    pub attn_norm_gain: Var,
    pub attn_norm_bias: Var,
    pub ffn_norm_gain: Var,
    pub ffn_norm_bias: Var,
    /// (norm gain, norm bias, β)
    pub filter: Option<(Var, Var, Var)>,
}

impl BoundLayer {
    fn from_ordered(v: &[Var], has_filter: bool) -> Self {
        BoundLayer {
            wq: v[0],
            bq: v[1],
            wk: v[2],
            bk: v[3],
            wv: v[4],
            bv: v[5],
            wo: v[6],
            bo: v[7],
            ffn_w1: v[8],
            ffn_b1: v[9],
            ffn_w2: v[10],
            ffn_b2: v[11],
            attn_norm_gain: v[12],
            attn_norm_bias: v[13],
            ffn_norm_gain: v[14],
            ffn_norm_bias: v[15],
            filter: has_filter.then(|| (v[16], v[17], v[18])),
        }
    }

    fn ordered(&self) -> Vec<Var> {
        let mut v = vec![
            self.wq,
            self.bq,
            self.wk,
            self.bk,
            self.wv,
            self.bv,
            self.wo,
            self.bo,
            self.ffn_w1,
            self.ffn_b1,
            self.ffn_w2,
            self.ffn_b2,
            self.attn_norm_gain,
            self.attn_norm_bias,
            self.ffn_norm_gain,
            self.ffn_norm_bias,
        ];
        if let Some((g, b, beta)) = self.filter {
            v.extend([g, b, beta]);
        }
        v
    }
}
