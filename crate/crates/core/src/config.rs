//! Training hyperparameters and full run configuration, both stored as flat
//! `key=value` text whose keys are the field names.

use std::path::PathBuf;

use crate::error::{arg, Result};
use crate::kv::KvDoc;
use crate::synth::SynthSpec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    /// Mask strength.
    pub eta: f64,
    /// Weight of the discriminator-entropy term.
    pub alpha: f64,
    /// Weight of the utility term.
    pub beta: f64,
    pub lr_g: f64,
    pub lr_d: f64,
    /// Rate for encoder, critic and head during pretraining.
    pub lr_pre: f64,
    pub epochs: usize,
    pub pretrain_epochs: usize,
    pub batch: usize,
    pub seed: u64,
    /// Training fraction; the remainder is held out.
    pub split: f64,
    /// Halve every rate after this many epochs (0 keeps rates constant).
    pub lr_decay_every: usize,
    /// Number of bounded additions making up one mask.
    pub mask_steps: usize,
    pub embed_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta: 0.2,
            alpha: 1.0,
            beta: 1.0,
            lr_g: 1e-4,
            lr_d: 1e-4,
            lr_pre: 1e-4,
            epochs: 50,
            pretrain_epochs: 50,
            batch: 64,
            seed: 0,
            split: 0.9,
            lr_decay_every: 0,
            mask_steps: 1,
            embed_dim: 8,
        }
    }
}

pub const KEYS: [&str; 14] = [
    "eta",
    "alpha",
    "beta",
    "lr_g",
    "lr_d",
    "lr_pre",
    "epochs",
    "pretrain_epochs",
    "batch",
    "seed",
    "split",
    "lr_decay_every",
    "mask_steps",
    "embed_dim",
];

impl TrainConfig {
    /// Rates and epoch counts sized for small CPU runs on the synthetic data.
    pub fn desk() -> Self {
        Self {
            lr_g: 0.05,
            lr_d: 0.05,
            lr_pre: 0.05,
            epochs: 20,
            pretrain_epochs: 40,
            lr_decay_every: 10,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("eta", self.eta),
            ("alpha", self.alpha),
            ("beta", self.beta),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return arg(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        for (name, v) in [
            ("lr_g", self.lr_g),
            ("lr_d", self.lr_d),
            ("lr_pre", self.lr_pre),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return arg(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return arg(format!("split must lie in (0, 1), got {}", self.split));
        }
        if self.batch == 0 {
            return arg("batch must be at least 1");
        }
        if self.mask_steps == 0 {
            return arg("mask_steps must be at least 1");
        }
        if self.embed_dim == 0 {
            return arg("embed_dim must be at least 1");
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::default();
        self.write_into(&mut doc);
        doc
    }

    fn write_into(&self, doc: &mut KvDoc) {
        doc.push_f64("eta", self.eta);
        doc.push_f64("alpha", self.alpha);
        doc.push_f64("beta", self.beta);
        doc.push_f64("lr_g", self.lr_g);
        doc.push_f64("lr_d", self.lr_d);
        doc.push_f64("lr_pre", self.lr_pre);
        doc.push("epochs", self.epochs);
        doc.push("pretrain_epochs", self.pretrain_epochs);
        doc.push("batch", self.batch);
        doc.push("seed", self.seed);
        doc.push_f64("split", self.split);
        doc.push("lr_decay_every", self.lr_decay_every);
        doc.push("mask_steps", self.mask_steps);
        doc.push("embed_dim", self.embed_dim);
    }

    /// Missing keys fall back to `base`.
    pub fn from_kv_over(doc: &KvDoc, base: &TrainConfig) -> Result<Self> {
        let cfg = Self {
            eta: doc.get_or("eta", base.eta)?,
            alpha: doc.get_or("alpha", base.alpha)?,
            beta: doc.get_or("beta", base.beta)?,
            lr_g: doc.get_or("lr_g", base.lr_g)?,
            lr_d: doc.get_or("lr_d", base.lr_d)?,
            lr_pre: doc.get_or("lr_pre", base.lr_pre)?,
            epochs: doc.get_or("epochs", base.epochs)?,
            pretrain_epochs: doc.get_or("pretrain_epochs", base.pretrain_epochs)?,
            batch: doc.get_or("batch", base.batch)?,
            seed: doc.get_or("seed", base.seed)?,
            split: doc.get_or("split", base.split)?,
            lr_decay_every: doc.get_or("lr_decay_every", base.lr_decay_every)?,
            mask_steps: doc.get_or("mask_steps", base.mask_steps)?,
            embed_dim: doc.get_or("embed_dim", base.embed_dim)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        Self::from_kv_over(doc, &Self::default())
    }
}

/// Where the training data comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic { spec: SynthSpec, n: usize },
    File(PathBuf),
}

/// A complete run: hyperparameters plus data source.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: DataSource,
}

pub const SYNTH_KEYS: [&str; 8] = [
    "dim",
    "direct_strength",
    "indirect_strength",
    "label_bias_0",
    "label_bias_1",
    "noise_sd",
    "data_seed",
    "n",
];

/// Default number of synthetic rows for a run.
pub const DEFAULT_ROWS: usize = 20_000;

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::desk(),
            data: DataSource::Synthetic {
                spec: SynthSpec::default(),
                n: DEFAULT_ROWS,
            },
        }
    }
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let doc = KvDoc::parse(text)?;
        let known = |k: &str| KEYS.contains(&k) || SYNTH_KEYS.contains(&k) || k == "data";
        if let Some(k) = doc.keys().find(|k| !known(k)) {
            let line = doc.line_of(k);
            return Err(crate::Error::Parse {
                line,
                msg: format!("unknown key {k:?}"),
            });
        }
        let train = TrainConfig::from_kv_over(&doc, &TrainConfig::desk())?;
        let data = if doc.contains("data") {
            let path = doc.raw("data")?;
            if let Some(k) = SYNTH_KEYS.iter().find(|k| doc.contains(k)) {
                return arg(format!("{k} given together with data="));
            }
            DataSource::File(PathBuf::from(path))
        } else {
            let d = SynthSpec::default();
            let spec = SynthSpec {
                dim: doc.get_or("dim", d.dim)?,
                direct_strength: doc.get_or("direct_strength", d.direct_strength)?,
                indirect_strength: doc.get_or("indirect_strength", d.indirect_strength)?,
                label_bias: [
                    doc.get_or("label_bias_0", d.label_bias[0])?,
                    doc.get_or("label_bias_1", d.label_bias[1])?,
                ],
                noise_sd: doc.get_or("noise_sd", d.noise_sd)?,
                seed: doc.get_or("data_seed", d.seed)?,
            };
            spec.validate()?;
            let n = doc.get_or("n", DEFAULT_ROWS)?;
            if n < 2 {
                return arg("n must be at least 2");
            }
            DataSource::Synthetic { spec, n }
        };
        Ok(Self { train, data })
    }

    pub fn to_text(&self) -> String {
        let mut doc = KvDoc::default();
        self.train.write_into(&mut doc);
        match &self.data {
            DataSource::Synthetic { spec, n } => {
                doc.push("dim", spec.dim);
                doc.push_f64("direct_strength", spec.direct_strength);
                doc.push_f64("indirect_strength", spec.indirect_strength);
                doc.push_f64("label_bias_0", spec.label_bias[0]);
                doc.push_f64("label_bias_1", spec.label_bias[1]);
                doc.push_f64("noise_sd", spec.noise_sd);
                doc.push("data_seed", spec.seed);
                doc.push("n", n);
            }
            DataSource::File(p) => doc.push("data", p.display()),
        }
        doc.to_text()
    }
}
