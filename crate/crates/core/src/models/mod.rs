//! SASRec and BSARec sequence encoders.

pub mod checkpoint;
mod config;
pub mod encoder;
mod state;

pub use config::{ModelConfig, ModelKind};
pub use encoder::{
    attention_mask, bsarec_layer, causal_self_attention, embed_sequence, encode, encoder_layer,
    pointwise_ffn, sasrec_layer, score_items, FrequencyBranch, Pass, WindowBatch,
};
pub use state::{BoundLayer, BoundState, EncoderState, FilterState, LayerState};

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::spectral::FrequencyFilter;
use crate::tensor::kernels::gemm_nt;
use crate::tensor::{Tape, Var};

/// Windows scored per tape during inference.
const INFERENCE_CHUNK: usize = 64;

/// A configured encoder together with its parameters.
#[derive(Clone, Debug)]
pub struct SeqRecModel<T> {
    kind: ModelKind,
    config: ModelConfig,
    pub state: EncoderState<T>,
    filter: Option<Arc<FrequencyFilter<T>>>,
}

impl<T: Scalar> SeqRecModel<T> {
    /// Fresh model with seeded initialization.
    pub fn new(kind: ModelKind, config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate(kind)?;
        let state = EncoderState::init(&config, kind, seed);
        Self::from_parts(kind, config, state)
    }

    pub fn from_parts(
        kind: ModelKind,
        config: ModelConfig,
        state: EncoderState<T>,
    ) -> Result<Self> {
        config.validate(kind)?;
        let d = config.dim;
        if state.item_emb.shape() != [config.num_items + 1, d]
            || state.pos_emb.shape() != [config.max_len, d]
            || state.layers.len() != config.blocks
        {
            return Err(Error::Config(
                "parameter shapes do not match the model config".into(),
            ));
        }
        if state
            .layers
            .iter()
            .any(|l| l.filter.is_some() != (kind == ModelKind::BsaRec))
        {
            return Err(Error::Config(format!(
                "frequency-branch parameters do not match kind {kind}"
            )));
        }
        let filter = match (kind, &config.spectral) {
            (ModelKind::BsaRec, Some(s)) => Some(Arc::new(FrequencyFilter::new(
                config.max_len,
                s.cutoff,
                s.mode,
            )?)),
            _ => None,
        };
        Ok(SeqRecModel {
            kind,
            config,
            state,
            filter,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn filter(&self) -> Option<&Arc<FrequencyFilter<T>>> {
        self.filter.as_ref()
    }

    /// Binds parameters and encodes a batch. Returns the bound handles and
    /// the `[batch·len, d]` hidden states.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        w: &WindowBatch,
        pass: Pass,
        trainable: bool,
    ) -> Result<(BoundState, Var)> {
        let bound = self.state.bind(tape, trainable);
        let h = encode(
            tape,
            &bound,
            &self.config,
            self.kind,
            w,
            self.filter.as_ref(),
            pass,
        )?;
        Ok((bound, h))
    }

    /// Hidden state at the final position of each window, inference mode.
    pub fn last_hidden(&self, windows: &[Vec<usize>]) -> Result<Vec<Vec<T>>> {
        let len = self.config.max_len;
        let d = self.config.dim;
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(INFERENCE_CHUNK) {
            let mut ids = Vec::with_capacity(chunk.len() * len);
            for w in chunk {
                if w.len() != len {
                    return Err(Error::shape("window", &[w.len()], &[len]));
                }
                ids.extend_from_slice(w);
            }
            let batch = WindowBatch::new(&ids, len)?;
            let mut tape = Tape::new();
            let (_, h) = self.forward(&mut tape, &batch, Pass::inference(), false)?;
            let hv = tape.value(h);
            for b in 0..chunk.len() {
                out.push(hv.row(b * len + len - 1)[..d].to_vec());
            }
        }
        Ok(out)
    }

    /// Catalog scores (items 1..=num_items) for each window.
    pub fn score_windows(&self, windows: &[Vec<usize>]) -> Result<Vec<Vec<T>>> {
        let hidden = self.last_hidden(windows)?;
        let d = self.config.dim;
        let n = self.config.num_items;
        let table = &self.state.item_emb.data()[d..];
        Ok(hidden.iter().map(|h| gemm_nt(h, table, 1, d, n)).collect())
    }
}
