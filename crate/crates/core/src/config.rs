//! Model and training hyperparameters.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use patclass_tensor::Reduction;
use serde::{Deserialize, Serialize};

use crate::icl::IclMode;
use crate::metrics::Metric;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossReduction {
    Sum,
    Mean,
}

impl From<LossReduction> for Reduction {
    fn from(r: LossReduction) -> Self {
        match r {
            LossReduction::Sum => Reduction::Sum,
            LossReduction::Mean => Reduction::Mean,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Word embedding width (T).
    pub word_dim: usize,
    /// Per-direction LSTM width (F); code embeddings are 2F wide.
    pub hidden: usize,
    /// Words kept per patent (N).
    pub max_words: usize,
    /// History nodes per patent graph (D).
    pub history_len: usize,
    /// Sliding window (s).
    pub window: usize,
    /// Graph convolution layers per channel (I).
    pub gcn_layers: usize,
    /// Taxonomy level to classify (q).
    pub level: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub dropout: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub min_count: usize,
    pub icl_mode: IclMode,
    pub history: bool,
    pub use_pe: bool,
    pub use_text: bool,
    pub use_label: bool,
    pub reduction: LossReduction,
    /// Evaluation threads; training always runs on one.
    pub workers: usize,
    /// Count each code among its own siblings.
    pub sibling_self: bool,
    /// History patents read from their successors instead of predecessors.
    pub reverse_edges: bool,
    /// Validation metric and cutoff that pick the kept checkpoint.
    pub select_metric: Metric,
    pub select_k: usize,
}

impl Default for ModelConfig {
    /// Desk-scale defaults.
    fn default() -> Self {
        Self {
            word_dim: 32,
            hidden: 16,
            max_words: 100,
            history_len: 10,
            window: 4,
            gcn_layers: 2,
            level: 3,
            batch_size: 32,
            lr: 1e-2,
            dropout: 0.5,
            max_epochs: 300,
            patience: 30,
            seed: 0,
            min_count: 5,
            icl_mode: IclMode::AdaptiveHv,
            history: true,
            use_pe: true,
            use_text: true,
            use_label: true,
            reduction: LossReduction::Sum,
            workers: 1,
            sibling_self: true,
            reverse_edges: false,
            select_metric: Metric::Ndcg,
            select_k: 5,
        }
    }
}

impl ModelConfig {
    /// Settings for large corpora.
    pub fn full_scale() -> Self {
        Self {
            word_dim: 100,
            hidden: 64,
            history_len: 50,
            window: 10,
            lr: 1e-4,
            patience: 10,
            ..Self::default()
        }
    }

    /// Text-only variant: no taxonomy propagation, no history.
    pub fn pse(mut self) -> Self {
        self.icl_mode = IclMode::None;
        self.history = false;
        self
    }

    pub fn validate(&self, taxonomy_depth: usize) -> Result<()> {
        let positive = [
            ("word_dim", self.word_dim),
            ("hidden", self.hidden),
            ("max_words", self.max_words),
            ("history_len", self.history_len),
            ("window", self.window),
            ("gcn_layers", self.gcn_layers),
            ("level", self.level),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("workers", self.workers),
            ("select_k", self.select_k),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{k} must be positive")));
        }
        if self.level > taxonomy_depth {
            return Err(Error::Config(format!(
                "level {} exceeds taxonomy depth {taxonomy_depth}",
                self.level
            )));
        }
        if !self.word_dim.is_multiple_of(2) {
            return Err(Error::Config("word_dim must be even for positional encoding".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        if self.history && !self.use_text && !self.use_label {
            return Err(Error::Config("history needs at least one of use_text, use_label".into()));
        }
        Ok(())
    }

    /// Applies one `key=value` assignment. Symbol aliases (`T`, `F`, `N`,
    /// `D`, `s`, `I`, `q`) are accepted.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<V: FromStr>(k: &str, v: &str) -> Result<V>
        where
            V::Err: fmt::Display,
        {
            v.parse()
                .map_err(|e: V::Err| Error::Config(format!("{k}: cannot parse `{v}`: {e}")))
        }
        match key {
            "word_dim" | "T" => self.word_dim = p(key, value)?,
            "hidden" | "F" => self.hidden = p(key, value)?,
            "max_words" | "N" => self.max_words = p(key, value)?,
            "history_len" | "D" => self.history_len = p(key, value)?,
            "window" | "s" => self.window = p(key, value)?,
            "gcn_layers" | "I" => self.gcn_layers = p(key, value)?,
            "level" | "q" => self.level = p(key, value)?,
            "batch_size" => self.batch_size = p(key, value)?,
            "lr" => self.lr = p(key, value)?,
            "dropout" => self.dropout = p(key, value)?,
            "max_epochs" => self.max_epochs = p(key, value)?,
            "patience" => self.patience = p(key, value)?,
            "seed" => self.seed = p(key, value)?,
            "min_count" => self.min_count = p(key, value)?,
            "icl_mode" => self.icl_mode = p(key, value)?,
            "history" => self.history = parse_flag(key, value)?,
            "use_pe" => self.use_pe = parse_flag(key, value)?,
            "use_text" => self.use_text = parse_flag(key, value)?,
            "use_label" => self.use_label = parse_flag(key, value)?,
            "reduction" => {
                self.reduction = match value {
                    "sum" => LossReduction::Sum,
                    "mean" => LossReduction::Mean,
                    other => return Err(Error::Config(format!("reduction: unknown `{other}`"))),
                }
            }
            "workers" => self.workers = p(key, value)?,
            "sibling_self" => self.sibling_self = parse_flag(key, value)?,
            "reverse_edges" => self.reverse_edges = parse_flag(key, value)?,
            "select_metric" => self.select_metric = p(key, value)?,
            "select_k" => self.select_k = p(key, value)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Parses flat `key=value` text on top of the defaults. `#` starts a
    /// comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply(text)?;
        Ok(cfg)
    }

    pub fn apply(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                file: "config".into(),
                line: n + 1,
                message: format!("expected key=value, got `{line}`"),
            })?;
            self.set(k.trim(), v.trim()).map_err(|e| Error::Parse {
                file: "config".into(),
                line: n + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

fn parse_flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "1" | "yes" => Ok(true),
        "false" | "off" | "0" | "no" => Ok(false),
        other => Err(Error::Config(format!("{key}: expected on/off, got `{other}`"))),
    }
}
