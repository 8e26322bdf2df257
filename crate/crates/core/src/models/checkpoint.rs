//! Plain-text checkpoint format, version 1.
//!
//! ```text
//! seqlab-checkpoint 1
//! scalar f64
//! kind bsarec
//! <key> <value>            model config, one field per line
//! ...
//! tensors <count>
//! tensor <name> <ndim> <extent>...
//! <values, space separated, shortest round-trip exponent form>
//! ...
//! end
//! ```
//!
//! Config keys: `num_items dim max_len blocks heads dropout alpha norm_first
//! eps`, plus `cutoff beta_init per_dim_beta filter_mode` when a spectral
//! section is present. Tensors appear in [`EncoderState::visit`] order.
//! Values are written through `f64`, so reloading reproduces every bit for
//! both `f32` and `f64` models.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{EncoderState, ModelConfig, ModelKind, SeqRecModel};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::spectral::SpectralConfig;
use crate::tensor::Tensor;

pub const MAGIC: &str = "seqlab-checkpoint";
pub const VERSION: u32 = 1;

pub fn to_string<T: Scalar>(model: &SeqRecModel<T>) -> String {
    let cfg = model.config();
    let mut s = String::new();
    let _ = writeln!(s, "{MAGIC} {VERSION}");
    let _ = writeln!(s, "scalar {}", T::NAME);
    let _ = writeln!(s, "kind {}", model.kind());
    let _ = writeln!(s, "num_items {}", cfg.num_items);
    let _ = writeln!(s, "dim {}", cfg.dim);
    let _ = writeln!(s, "max_len {}", cfg.max_len);
    let _ = writeln!(s, "blocks {}", cfg.blocks);
    let _ = writeln!(s, "heads {}", cfg.heads);
    let _ = writeln!(s, "dropout {:e}", cfg.dropout);
    let _ = writeln!(s, "alpha {:e}", cfg.alpha);
    let _ = writeln!(s, "norm_first {}", cfg.norm_first);
    let _ = writeln!(s, "eps {:e}", cfg.eps);
    if let Some(sp) = &cfg.spectral {
        let _ = writeln!(s, "cutoff {}", sp.cutoff);
        let _ = writeln!(s, "beta_init {:e}", sp.beta_init);
        let _ = writeln!(s, "per_dim_beta {}", sp.per_dim_beta);
        let _ = writeln!(s, "filter_mode {}", sp.mode.name());
    }
    let mut count = 0;
    model.state.visit(|_, _| count += 1);
    let _ = writeln!(s, "tensors {count}");
    model.state.visit(|name, t| {
        let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        let _ = writeln!(s, "tensor {name} {} {}", t.ndim(), dims.join(" "));
        let vals: Vec<String> = t
            .data()
            .iter()
            .map(|v| format!("{:e}", v.as_f64()))
            .collect();
        let _ = writeln!(s, "{}", vals.join(" "));
    });
    s.push_str("end\n");
    s
}

pub fn save<T: Scalar>(model: &SeqRecModel<T>, path: &Path) -> Result<()> {
    fs::write(path, to_string(model))?;
    Ok(())
}

pub fn load<T: Scalar>(path: &Path) -> Result<SeqRecModel<T>> {
    from_str(&fs::read_to_string(path)?)
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn from_str<T: Scalar>(text: &str) -> Result<SeqRecModel<T>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file"))?;
    match header.split_once(' ') {
        Some((MAGIC, v)) if v.trim() == VERSION.to_string() => {}
        _ => return Err(bad(format!("unrecognized header `{header}`"))),
    }

    let mut fields = BTreeMap::new();
    let tensor_count: usize = loop {
        let line = lines.next().ok_or_else(|| bad("missing tensor section"))?;
        let (k, v) = line
            .split_once(' ')
            .ok_or_else(|| bad(format!("bad line `{line}`")))?;
        if k == "tensors" {
            break v.trim().parse().map_err(|_| bad("bad tensor count"))?;
        }
        fields.insert(k.to_string(), v.trim().to_string());
    };
    let get = |k: &str| {
        fields
            .get(k)
            .ok_or_else(|| bad(format!("missing field `{k}`")))
    };
    fn num<V: std::str::FromStr>(k: &str, v: &str) -> Result<V> {
        v.parse()
            .map_err(|_| bad(format!("bad value `{v}` for `{k}`")))
    }

    let scalar = get("scalar")?;
    if scalar != T::NAME {
        return Err(bad(format!(
            "checkpoint holds {scalar} values, loader expects {}",
            T::NAME
        )));
    }
    let kind: ModelKind = get("kind")?.parse()?;
    let spectral = if fields.contains_key("cutoff") {
        Some(SpectralConfig {
            cutoff: num("cutoff", get("cutoff")?)?,
            beta_init: num("beta_init", get("beta_init")?)?,
            per_dim_beta: num("per_dim_beta", get("per_dim_beta")?)?,
            mode: get("filter_mode")?.parse()?,
        })
    } else {
        None
    };
    let cfg = ModelConfig {
        num_items: num("num_items", get("num_items")?)?,
        dim: num("dim", get("dim")?)?,
        max_len: num("max_len", get("max_len")?)?,
        blocks: num("blocks", get("blocks")?)?,
        heads: num("heads", get("heads")?)?,
        dropout: num("dropout", get("dropout")?)?,
        alpha: num("alpha", get("alpha")?)?,
        spectral,
        norm_first: num("norm_first", get("norm_first")?)?,
        eps: num("eps", get("eps")?)?,
    };
    cfg.validate(kind)?;

    let mut tensors = BTreeMap::new();
    for _ in 0..tensor_count {
        let head = lines.next().ok_or_else(|| bad("truncated tensor list"))?;
        let mut parts = head.split_whitespace();
        if parts.next() != Some("tensor") {
            return Err(bad(format!("expected tensor header, got `{head}`")));
        }
        let name = parts
            .next()
            .ok_or_else(|| bad("tensor without name"))?
            .to_string();
        let ndim: usize = num("ndim", parts.next().unwrap_or(""))?;
        let shape = parts
            .map(|p| num::<usize>("extent", p))
            .collect::<Result<Vec<_>>>()?;
        if shape.len() != ndim {
            return Err(bad(format!("tensor {name}: expected {ndim} extents")));
        }
        let body = lines
            .next()
            .ok_or_else(|| bad(format!("tensor {name}: missing values")))?;
        let values = body
            .split_whitespace()
            .map(|v| num::<f64>(&name, v).map(T::of))
            .collect::<Result<Vec<T>>>()?;
        tensors.insert(name, Tensor::new(&shape, values)?);
    }
    if lines.next() != Some("end") {
        return Err(bad("missing end marker"));
    }

    let mut state = EncoderState::<T>::init(&cfg, kind, 0);
    let mut missing = None;
    state.visit_mut(|name, t| match tensors.remove(name) {
        Some(v) if v.shape() == t.shape() => *t = v,
        _ => missing = Some(name.to_string()),
    });
    if let Some(name) = missing {
        return Err(bad(format!("tensor `{name}` missing or misshapen")));
    }
    if let Some(extra) = tensors.keys().next() {
        return Err(bad(format!("unexpected tensor `{extra}`")));
    }
    SeqRecModel::from_parts(kind, cfg, state)
}
