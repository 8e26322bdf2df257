use crate::error::{Error, Result};
use crate::models::EncoderState;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moments for every parameter, in canonical order.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(state: &EncoderState<T>) -> Self {
        let mut m = Vec::new();
        state.visit(|_, t| m.push(Tensor::zeros(t.shape())));
        OptimizerState {
            v: m.clone(),
            m,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update with decoupled weight decay. `grads`
/// follows [`EncoderState::visit`] order. The padding row of the item
/// embedding is never touched.
pub fn adam_step<T: Scalar>(
    state: &mut EncoderState<T>,
    grads: &[Tensor<T>],
    opt: &mut OptimizerState<T>,
    hp: &AdamParams,
) -> Result<()> {
    if grads.len() != opt.m.len() {
        return Err(Error::Config(format!(
            "{} gradients for {} parameters",
            grads.len(),
            opt.m.len()
        )));
    }
    opt.step += 1;
    let t = opt.step as i32;
    let (b1, b2) = (T::of(hp.beta1), T::of(hp.beta2));
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    let lr = T::of(hp.lr);
    let eps = T::of(hp.eps);
    let wd = T::of(hp.weight_decay);
    let mut k = 0;
    let mut err = None;
    state.visit_mut(|name, p| {
        let g = &grads[k];
        if g.shape() != p.shape() {
            err.get_or_insert(Error::shape("adam_step", p.shape(), g.shape()));
            k += 1;
            return;
        }
        let skip = if name == "item_emb" { p.last_dim() } else { 0 };
        let (m, v) = (opt.m[k].data_mut(), opt.v[k].data_mut());
        let pd = p.data_mut();
        for i in skip..pd.len() {
            let gi = g.data()[i];
            m[i] = b1 * m[i] + (T::one() - b1) * gi;
            v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            pd[i] -= lr * (mhat / (vhat.sqrt() + eps) + wd * pd[i]);
        }
        k += 1;
    });
    err.map_or(Ok(()), Err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ModelConfig, ModelKind};

    fn state() -> EncoderState<f64> {
        let cfg = ModelConfig {
            num_items: 5,
            dim: 4,
            max_len: 3,
            blocks: 1,
            heads: 1,
            ..Default::default()
        };
        EncoderState::init(&cfg, ModelKind::SasRec, 1)
    }

    fn grads_like(s: &EncoderState<f64>, v: f64) -> Vec<Tensor<f64>> {
        let mut g = Vec::new();
        s.visit(|_, t| g.push(Tensor::full(t.shape(), v)));
        g
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut s = state();
        let before = s.clone();
        let mut opt = OptimizerState::new(&s);
        let g = grads_like(&s, 0.0);
        adam_step(&mut s, &g, &mut opt, &AdamParams::default()).unwrap();
        assert_eq!(s, before);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_regardless_of_scale() {
        for gv in [1e-3, 1.0, 250.0] {
            let mut s = state();
            let before = s.clone();
            let mut opt = OptimizerState::new(&s);
            let g = grads_like(&s, gv);
            adam_step(&mut s, &g, &mut opt, &AdamParams::default()).unwrap();
            let delta = (before.pos_emb.data()[0] - s.pos_emb.data()[0]).abs();
            assert!((delta - 1e-3).abs() < 1e-7, "g={gv} delta={delta}");
            // padding row is frozen
            assert_eq!(&s.item_emb.data()[..4], &before.item_emb.data()[..4]);
        }
    }
}
