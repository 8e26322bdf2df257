//! Next-item training: objective, Adam, epoch loop and early stopping on
//! validation NDCG@10.

mod config;
mod optim;

pub use config::{LossKind, TrainConfig};
pub use optim::{adam_step, AdamParams, OptimizerState};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Phase, SequenceDataset};
use crate::error::{Error, Result};
use crate::eval::{evaluate, hit_rate, rank_cases, EvalOptions};
use crate::models::encoder::mix;
use crate::models::{ModelConfig, ModelKind, Pass, SeqRecModel, WindowBatch};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

/// Input window and its one-step-ahead target window.
pub type Example = (Vec<usize>, Vec<usize>);

impl TrainConfig {
    pub fn adam(&self) -> AdamParams {
        AdamParams {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }
}

/// Next-item loss over every non-padding target position.
///
/// `hidden` is `[n, d]`, `targets[r]` is the item that follows row r
/// (0 marks padding). `item_emb` is the full `[num_items + 1, d]` table.
pub fn next_item_loss<T: Scalar, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    hidden: Var,
    targets: &[usize],
    item_emb: Var,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Var> {
    let n = tape.shape(hidden)[0];
    if targets.len() != n {
        return Err(Error::shape(
            "next_item_loss",
            tape.shape(hidden),
            &[targets.len()],
        ));
    }
    let rows: Vec<usize> = (0..n).filter(|&r| targets[r] != 0).collect();
    if rows.is_empty() {
        return Err(Error::Data("every target position is padding".into()));
    }
    let picked: Vec<usize> = rows.iter().map(|&r| targets[r]).collect();
    let h = tape.gather_rows(hidden, &rows)?;
    match cfg.loss {
        LossKind::FullSoftmax => {
            let logits = tape.matmul_nt(h, item_emb)?;
            tape.cross_entropy(logits, &picked)
        }
        LossKind::SampledBinary => {
            let num_items = tape.shape(item_emb)[0] - 1;
            if num_items < 2 {
                return Err(Error::Config(
                    "sampled loss needs at least two items".into(),
                ));
            }
            let k = cfg.negatives;
            let pos = tape.embedding(item_emb, &picked)?;
            let pos_logits = tape.row_dot(h, pos)?;
            let pos_loss = tape.bce_with_logits(pos_logits, &vec![T::one(); picked.len()])?;

            let mut rep = Vec::with_capacity(rows.len() * k);
            let mut negs = Vec::with_capacity(rows.len() * k);
            for (i, &p) in picked.iter().enumerate() {
                for _ in 0..k {
                    let mut j = rng.gen_range(1..num_items);
                    if j >= p {
                        j += 1;
                    }
                    rep.push(i);
                    negs.push(j);
                }
            }
            let hr = tape.gather_rows(h, &rep)?;
            let neg = tape.embedding(item_emb, &negs)?;
            let neg_logits = tape.row_dot(hr, neg)?;
            let neg_loss = tape.bce_with_logits(neg_logits, &vec![T::zero(); negs.len()])?;
            let neg_loss = tape.scale(neg_loss, T::of(k as f64))?;
            tape.add(pos_loss, neg_loss)
        }
    }
}

/// Loss and parameter gradients (in [`crate::models::EncoderState::visit`]
/// order) for one batch of examples.
pub fn batch_loss_and_grads<T: Scalar>(
    model: &SeqRecModel<T>,
    batch: &[&Example],
    cfg: &TrainConfig,
    pass: Pass,
) -> Result<(T, usize, Vec<Tensor<T>>)> {
    let len = model.config().max_len;
    let mut ids = Vec::with_capacity(batch.len() * len);
    let mut targets = Vec::with_capacity(batch.len() * len);
    for (input, target) in batch {
        if input.len() != len || target.len() != len {
            return Err(Error::shape("training window", &[input.len()], &[len]));
        }
        ids.extend_from_slice(input);
        targets.extend_from_slice(target);
    }
    let w = WindowBatch::new(&ids, len)?;
    let mut tape = Tape::new().with_finite_checks(cfg.check_finite);
    let (bound, h) = model.forward(&mut tape, &w, pass, true)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix(pass.seed, 0x5A4D_504C));
    let loss = next_item_loss(&mut tape, h, &targets, bound.item_emb, cfg, &mut rng)?;
    let value = tape.value(loss).data()[0];
    let count = targets.iter().filter(|&&t| t != 0).count();
    let mut grads = tape.backward(loss)?;
    let g = bound
        .ordered()
        .into_iter()
        .map(|v| {
            grads
                .take(v)
                .ok_or_else(|| Error::Config("missing parameter gradient".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((value, count, g))
}

fn diverged(epoch: usize, step: usize, e: Error) -> Error {
    match e {
        Error::NonFinite { op } => Error::Diverged {
            epoch,
            step,
            detail: format!("non-finite value produced by `{op}`"),
        },
        other => other,
    }
}

/// One pass over the examples in seeded shuffled order. Returns the loss
/// averaged over target positions.
pub fn train_epoch<T: Scalar>(
    model: &mut SeqRecModel<T>,
    examples: &[Example],
    cfg: &TrainConfig,
    opt: &mut OptimizerState<T>,
    epoch: usize,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Data("no training examples".into()));
    }
    let epoch_seed = mix(cfg.seed, epoch as u64);
    let mut order: Vec<&Example> = examples.iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
    let hp = cfg.adam();
    let (mut total, mut count) = (0.0, 0usize);
    for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
        let pass = Pass::training(mix(epoch_seed, step as u64 + 1));
        let (loss, n, grads) =
            batch_loss_and_grads(model, batch, cfg, pass).map_err(|e| diverged(epoch, step, e))?;
        let loss = loss.as_f64();
        if !loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                step,
                detail: format!("loss is {loss}"),
            });
        }
        adam_step(&mut model.state, &grads, opt, &hp)?;
        total += loss * n as f64;
        count += n;
    }
    Ok(total / count as f64)
}

/// One row of the training curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub epoch: usize,
    pub ndcg_at_10: f64,
    pub loss: f64,
}

pub const CURVE_CSV_HEADER: &str = "epoch,ndcg_at_10,loss";

pub fn curve_to_csv(curve: &[CurvePoint]) -> String {
    let mut s = String::from(CURVE_CSV_HEADER);
    s.push('\n');
    for p in curve {
        s.push_str(&format!("{},{:?},{:?}\n", p.epoch, p.ndcg_at_10, p.loss));
    }
    s
}

pub fn curve_from_csv(text: &str) -> Result<Vec<CurvePoint>> {
    let mut lines = text
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
    if lines.next().map(str::trim) != Some(CURVE_CSV_HEADER) {
        return Err(Error::Config(format!(
            "curve CSV must start with `{CURVE_CSV_HEADER}`"
        )));
    }
    lines
        .map(|l| {
            let f: Vec<&str> = l.trim().split(',').collect();
            let bad = || Error::Config(format!("bad curve row `{l}`"));
            if f.len() != 3 {
                return Err(bad());
            }
            Ok(CurvePoint {
                epoch: f[0].parse().map_err(|_| bad())?,
                ndcg_at_10: f[1].parse().map_err(|_| bad())?,
                loss: f[2].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

/// Result of [`fit`]: the best-validation model and the full curve.
#[derive(Clone, Debug)]
pub struct FitOutcome<T> {
    pub model: SeqRecModel<T>,
    pub curve: Vec<CurvePoint>,
    pub best_epoch: usize,
    pub best_valid_ndcg10: f64,
    pub stopped_early: bool,
}

/// Builds a seeded model and trains it with [`fit_model`].
pub fn fit<T: Scalar>(
    kind: ModelKind,
    data: &SequenceDataset,
    train: &TrainConfig,
    model_cfg: &ModelConfig,
) -> Result<FitOutcome<T>> {
    let model = SeqRecModel::new(kind, model_cfg.clone(), train.seed)?;
    fit_model(model, data, train, |_| {})
}

/// Trains for up to `cfg.epochs` epochs, validating after each one. Stops
/// once validation NDCG@10 has failed to improve on the best value for more
/// than `cfg.patience` consecutive epochs; returns the best model.
pub fn fit_model<T: Scalar>(
    mut model: SeqRecModel<T>,
    data: &SequenceDataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&CurvePoint),
) -> Result<FitOutcome<T>> {
    cfg.validate()?;
    if data.num_items != model.config().num_items {
        return Err(Error::Config(format!(
            "dataset has {} items but the model expects {}",
            data.num_items,
            model.config().num_items
        )));
    }
    let examples = data.training_examples(model.config().max_len);
    let eval_opts = EvalOptions {
        exclude_seen: cfg.exclude_seen,
        ..Default::default()
    };
    let mut opt = OptimizerState::new(&model.state);
    let mut curve = Vec::new();
    let mut best: Option<(usize, f64, SeqRecModel<T>)> = None;
    let mut stale = 0;
    let mut stopped_early = false;
    for epoch in 1..=cfg.epochs {
        let loss = train_epoch(&mut model, &examples, cfg, &mut opt, epoch)?;
        let ndcg = evaluate(&model, data, Phase::Valid, &eval_opts)?
            .metrics
            .ndcg_at_10;
        let point = CurvePoint {
            epoch,
            ndcg_at_10: ndcg,
            loss,
        };
        on_epoch(&point);
        curve.push(point);
        match &best {
            Some((_, b, _)) if ndcg <= *b => stale += 1,
            _ => {
                best = Some((epoch, ndcg, model.clone()));
                stale = 0;
            }
        }
        if stale > cfg.patience {
            stopped_early = true;
            break;
        }
    }
    let (best_epoch, best_valid_ndcg10, model) = best.expect("at least one epoch runs");
    Ok(FitOutcome {
        model,
        curve,
        best_epoch,
        best_valid_ndcg10,
        stopped_early,
    })
}

/// Hit-rate@k on each user's last training item, predicted from the rest
/// of the training prefix, ranked against the full catalog.
pub fn training_hit_rate<T: Scalar>(
    model: &SeqRecModel<T>,
    data: &SequenceDataset,
    k: usize,
) -> Result<f64> {
    let cases = data.eval_cases(Phase::Train, model.config().max_len);
    let opts = EvalOptions {
        exclude_seen: false,
        ..Default::default()
    };
    Ok(hit_rate(&rank_cases(model, &cases, &opts)?, k))
}
