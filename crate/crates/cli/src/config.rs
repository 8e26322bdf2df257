//! Experiment configuration files.
//!
//! A config is a TOML document with four sections plus a few top-level
//! keys. Every key is optional; missing keys take the defaults shown here.
//!
//! ```toml
//! name = "ml1m-bsarec"
//! out = "runs/ml1m-bsarec"   # overridden by --out
//! seeds = [42]               # overridden by --seed
//! precision = "f64"          # or "f32"
//!
//! [dataset]
//! kind = "ml-1m"             # ml-1m | fs-nyc (alias foursquare-nyc) | canonical |
//!                            # synthetic-periodic | synthetic-random
//! path = "ml-1m/ratings.dat" # relative paths resolve against $SEQLAB_DATA_ROOT,
//!                            # else against the config file's directory
//! min_user = 5
//! min_item = 5
//! dedup_consecutive = false
//! max_users = 0              # 0 keeps every user
//! lenient = false            # skip malformed lines instead of failing
//!
//! [dataset.synthetic]        # only for the synthetic kinds
//! users = 2000
//! items = 200
//! cluster_size = 10
//! min_len = 15
//! max_len = 40
//! motif_prob = 0.75
//! seed = 2024
//!
//! [model]
//! kind = "bsarec"            # sasrec | bsarec
//! dim = 64
//! max_len = 50
//! blocks = 2
//! heads = 2
//! dropout = 0.2
//! alpha = 0.7
//! cutoff = 1
//! beta_init = 0.7
//! per_dim_beta = false
//! filter_mode = "causal"     # causal | window
//! norm_first = false
//! eps = 1e-12
//!
//! [train]
//! lr = 1e-3
//! beta1 = 0.9
//! beta2 = 0.999
//! adam_eps = 1e-8
//! weight_decay = 0.0
//! batch_size = 128
//! epochs = 200
//! patience = 20
//! loss = "full-softmax"      # full-softmax | sampled-binary
//! negatives = 1
//! exclude_seen = true
//! check_finite = true
//!
//! [sweep]                    # empty lists fall back to the [model] value
//! models = ["sasrec", "bsarec"]
//! alpha = [0.1, 0.5, 0.7, 0.9]
//! cutoff = [1, 3, 5, 7, 9]
//! dropout = [0.0005, 0.2]
//! ```
//!
//! Unknown keys are rejected, which also restricts sweeps to the three
//! tunables `alpha`, `cutoff` and `dropout`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use seqlab_core::data::synthetic::PeriodicSpec;
use seqlab_core::models::{ModelConfig, ModelKind};
use seqlab_core::spectral::{FilterMode, SpectralConfig};
use seqlab_core::train::{LossKind, TrainConfig};

/// Environment variable that overrides where relative dataset paths resolve.
pub const DATA_ROOT_ENV: &str = "SEQLAB_DATA_ROOT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub out: String,
    pub seeds: Vec<u64>,
    pub precision: String,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub sweep: SweepSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            out: "runs".into(),
            seeds: vec![42],
            precision: "f64".into(),
            dataset: DatasetSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub kind: String,
    pub path: String,
    pub min_user: usize,
    pub min_item: usize,
    pub dedup_consecutive: bool,
    pub max_users: usize,
    pub lenient: bool,
    pub synthetic: SyntheticSection,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            kind: "synthetic-periodic".into(),
            path: String::new(),
            min_user: 5,
            min_item: 5,
            dedup_consecutive: false,
            max_users: 0,
            lenient: false,
            synthetic: SyntheticSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    pub users: usize,
    pub items: usize,
    pub cluster_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub motif_prob: f64,
    pub seed: u64,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        let p = PeriodicSpec::default();
        SyntheticSection {
            users: p.users,
            items: p.items,
            cluster_size: p.cluster_size,
            min_len: p.min_len,
            max_len: p.max_len,
            motif_prob: p.motif_prob,
            seed: p.seed,
        }
    }
}

impl SyntheticSection {
    pub fn periodic_spec(&self) -> PeriodicSpec {
        PeriodicSpec {
            users: self.users,
            items: self.items,
            cluster_size: self.cluster_size,
            min_len: self.min_len,
            max_len: self.max_len,
            motif_prob: self.motif_prob,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: String,
    pub dim: usize,
    pub max_len: usize,
    pub blocks: usize,
    pub heads: usize,
    pub dropout: f64,
    pub alpha: f64,
    pub cutoff: usize,
    pub beta_init: f64,
    pub per_dim_beta: bool,
    pub filter_mode: String,
    pub norm_first: bool,
    pub eps: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        let s = SpectralConfig::default();
        ModelSection {
            kind: "bsarec".into(),
            dim: m.dim,
            max_len: m.max_len,
            blocks: m.blocks,
            heads: m.heads,
            dropout: m.dropout,
            alpha: m.alpha,
            cutoff: s.cutoff,
            beta_init: s.beta_init,
            per_dim_beta: s.per_dim_beta,
            filter_mode: s.mode.name().into(),
            norm_first: m.norm_first,
            eps: m.eps,
        }
    }
}

impl ModelSection {
    pub fn kind(&self) -> Result<ModelKind> {
        self.kind
            .parse()
            .map_err(|e| anyhow::anyhow!("model.kind: {e}"))
    }

    /// Core model config for a catalog of `num_items` items.
    pub fn to_model_config(&self, num_items: usize) -> Result<ModelConfig> {
        let mode: FilterMode = self
            .filter_mode
            .parse()
            .map_err(|e| anyhow::anyhow!("model.filter_mode: {e}"))?;
        Ok(ModelConfig {
            num_items,
            dim: self.dim,
            max_len: self.max_len,
            blocks: self.blocks,
            heads: self.heads,
            dropout: self.dropout,
            alpha: self.alpha,
            spectral: Some(SpectralConfig {
                cutoff: self.cutoff,
                beta_init: self.beta_init,
                per_dim_beta: self.per_dim_beta,
                mode,
            }),
            norm_first: self.norm_first,
            eps: self.eps,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub loss: String,
    pub negatives: usize,
    pub exclude_seen: bool,
    pub check_finite: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            lr: t.lr,
            beta1: t.beta1,
            beta2: t.beta2,
            adam_eps: t.adam_eps,
            weight_decay: t.weight_decay,
            batch_size: t.batch_size,
            epochs: t.epochs,
            patience: t.patience,
            loss: t.loss.name().into(),
            negatives: t.negatives,
            exclude_seen: t.exclude_seen,
            check_finite: t.check_finite,
        }
    }
}

impl TrainSection {
    pub fn to_train_config(&self, seed: u64) -> Result<TrainConfig> {
        let loss: LossKind = self
            .loss
            .parse()
            .map_err(|e| anyhow::anyhow!("train.loss: {e}"))?;
        Ok(TrainConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            adam_eps: self.adam_eps,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            epochs: self.epochs,
            patience: self.patience,
            seed,
            loss,
            negatives: self.negatives,
            exclude_seen: self.exclude_seen,
            check_finite: self.check_finite,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub models: Vec<String>,
    pub alpha: Vec<f64>,
    pub cutoff: Vec<usize>,
    pub dropout: Vec<f64>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).context("invalid config")?;
        Ok(cfg)
    }

    /// Reads and validates a config file. Relative dataset paths are made
    /// absolute so the loaded config no longer depends on the working
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::from_toml(&text).with_context(|| format!("in {}", path.display()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.dataset.path = resolve_data_path(&cfg.dataset.path, base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn precision_is_f32(&self) -> Result<bool> {
        match self.precision.as_str() {
            "f64" => Ok(false),
            "f32" => Ok(true),
            other => bail!("precision: expected `f32` or `f64`, found `{other}`"),
        }
    }

    /// Checks every field that can be checked without loading data.
    pub fn validate(&self) -> Result<()> {
        self.precision_is_f32()?;
        if self.seeds.is_empty() {
            bail!("seeds: at least one seed is required");
        }
        match self.dataset.kind.as_str() {
            "ml-1m" | "fs-nyc" | "foursquare-nyc" | "canonical" => {
                if self.dataset.path.is_empty() {
                    bail!("dataset.path: required for dataset kind `{}`", self.dataset.kind);
                }
            }
            "synthetic-periodic" | "synthetic-random" => {
                let s = &self.dataset.synthetic;
                if s.users == 0 || s.items < 2 {
                    bail!("dataset.synthetic: need at least one user and two items");
                }
                if s.min_len > s.max_len {
                    bail!("dataset.synthetic.min_len: exceeds max_len");
                }
                if !(0.0..=1.0).contains(&s.motif_prob) {
                    bail!("dataset.synthetic.motif_prob: must lie in [0, 1]");
                }
            }
            other => bail!(
                "dataset.kind: unknown kind `{other}` (expected ml-1m, fs-nyc, canonical, synthetic-periodic or synthetic-random)"
            ),
        }
        if self.dataset.min_user == 0 || self.dataset.min_item == 0 {
            bail!("dataset.min_user/min_item: must be at least 1");
        }
        self.validate_model(&self.model)?;
        self.train
            .to_train_config(0)?
            .validate()
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        for m in &self.sweep.models {
            m.parse::<ModelKind>()
                .map_err(|e| anyhow::anyhow!("sweep.models: {e}"))?;
        }
        for &a in &self.sweep.alpha {
            let mut m = self.model.clone();
            m.alpha = a;
            self.validate_model(&m).context("sweep.alpha")?;
        }
        for &c in &self.sweep.cutoff {
            let mut m = self.model.clone();
            m.cutoff = c;
            self.validate_model(&m).context("sweep.cutoff")?;
        }
        for &d in &self.sweep.dropout {
            let mut m = self.model.clone();
            m.dropout = d;
            self.validate_model(&m).context("sweep.dropout")?;
        }
        Ok(())
    }

    fn validate_model(&self, m: &ModelSection) -> Result<()> {
        let kind = m.kind()?;
        if !(0.0..=1.0).contains(&m.alpha) {
            bail!("model.alpha: {} outside [0, 1]", m.alpha);
        }
        if !(0.0..1.0).contains(&m.dropout) {
            bail!("model.dropout: {} outside [0, 1)", m.dropout);
        }
        // the catalog size is not known yet; any positive value checks the rest
        m.to_model_config(1)?
            .validate(kind)
            .map_err(|e| anyhow::anyhow!("model: {e}"))?;
        Ok(())
    }

    /// Copy describing exactly one run: a single seed and no sweep grids.
    pub fn single_run(&self, seed: u64) -> Self {
        ExperimentConfig {
            seeds: vec![seed],
            sweep: SweepSection::default(),
            ..self.clone()
        }
    }

    /// Copy restricted to one seed, grids kept.
    pub fn single_seed(&self, seed: u64) -> Self {
        ExperimentConfig {
            seeds: vec![seed],
            ..self.clone()
        }
    }

    /// Short stable hash of everything that influences results (the output
    /// directory is excluded).
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.out = String::new();
        let digest = Sha256::digest(c.to_toml().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Absolute paths pass through; relative ones resolve against
/// `$SEQLAB_DATA_ROOT` when set, else against `base`.
pub fn resolve_data_path(path: &str, base: &Path) -> String {
    if path.is_empty() {
        return String::new();
    }
    let p = PathBuf::from(path);
    if p.is_absolute() {
        return path.to_string();
    }
    let root = std::env::var_os(DATA_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| base.to_path_buf());
    let joined = root.join(p);
    let abs = if joined.is_absolute() {
        joined
    } else {
        std::env::current_dir()
            .map(|d| d.join(&joined))
            .unwrap_or(joined)
    };
    abs.to_string_lossy().into_owned()
}
