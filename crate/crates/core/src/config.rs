//! Run configuration: the weighting switches plus every shared hyperparameter.
//!
//! Config files are flat TOML tables whose keys are the field names below.
//! Precedence is overrides > file > defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::HitsMode;
use crate::model::ModelDims;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariantConfig {
    /// Weighted pretraining: edge weights enter the adjacency, edge dropping and the triplet loss.
    pub wp: bool,
    /// Weighted BCE: positive decoder targets are weighted by edge frequency.
    pub wb: bool,
    pub lambda: f64,
    pub tau: f64,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub num_layers: usize,
    pub dropout: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub pretrain_epochs: usize,
    pub decoder_epochs: usize,
    pub patience: usize,
    pub feature_drop_p: f64,

    /// Width of the per-partition input projections.
    pub input_dim: usize,
    /// Base keep probability for weight-aware edge dropping.
    pub edge_keep: f64,
    pub decoder_hidden: [usize; 2],
    /// ReLU after the final encoder layer too.
    pub relu_final: bool,
    /// Feed encoder outputs straight into the predictor and compare against raw
    /// target encoder outputs, skipping the projectors.
    pub loss_on_raw_embeddings: bool,
    /// Average the loss with the partition roles swapped.
    pub symmetrize: bool,
    /// Fraction of each partition replaced by the UNK row per pretraining epoch.
    pub unk_fraction: f64,
    /// Fraction of validation positives held back to monitor early stopping.
    pub monitor_fraction: f64,
    /// Test negatives per test positive.
    pub test_negative_ratio: f64,
    pub hits_k: usize,
    pub hits_mode: HitsMode,
}

impl Default for VariantConfig {
    fn default() -> Self {
        Self {
            wp: false,
            wb: false,
            lambda: 0.5,
            tau: 0.99,
            hidden_dim: 256,
            output_dim: 128,
            num_layers: 2,
            dropout: 0.2,
            lr: 0.001,
            weight_decay: 1e-5,
            batch_size: 512,
            pretrain_epochs: 200,
            decoder_epochs: 100,
            patience: 10,
            feature_drop_p: 0.1,
            input_dim: 64,
            edge_keep: 0.8,
            decoder_hidden: [256, 64],
            relu_final: false,
            loss_on_raw_embeddings: false,
            symmetrize: false,
            unk_fraction: 0.01,
            monitor_fraction: 0.1,
            test_negative_ratio: 1.0,
            hits_k: 50,
            hits_mode: HitsMode::NegativePool,
        }
    }
}

/// The four weighting variants in table order.
pub const VARIANTS: [(bool, bool); 4] = [(true, true), (true, false), (false, true), (false, false)];

impl VariantConfig {
    pub fn with_variant(mut self, wp: bool, wb: bool) -> Self {
        self.wp = wp;
        self.wb = wb;
        self
    }

    /// `WP_WB`, `WP_NWB`, `NWP_WB` or `NWP_NWB`.
    pub fn variant_name(&self) -> String {
        format!(
            "{}_{}",
            if self.wp { "WP" } else { "NWP" },
            if self.wb { "WB" } else { "NWB" }
        )
    }

    pub fn dims(&self, d_u: usize, d_v: usize) -> ModelDims {
        ModelDims {
            d_u,
            d_v,
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            output_dim: self.output_dim,
            decoder_hidden: (self.decoder_hidden[0], self.decoder_hidden[1]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda {} outside [0, 1]", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad(format!("tau {} outside [0, 1]", self.tau));
        }
        if self.num_layers != 2 {
            return bad(format!("num_layers must be 2, got {}", self.num_layers));
        }
        for (name, p) in [("dropout", self.dropout), ("feature_drop_p", self.feature_drop_p)] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("{name} {p} outside [0, 1)"));
            }
        }
        if !(self.edge_keep > 0.0 && self.edge_keep <= 1.0) {
            return bad(format!("edge_keep {} outside (0, 1]", self.edge_keep));
        }
        if !(0.0..1.0).contains(&self.unk_fraction) || !(0.0..1.0).contains(&self.monitor_fraction) {
            return bad("unk_fraction and monitor_fraction must lie in [0, 1)".into());
        }
        if !(self.test_negative_ratio > 0.0) {
            return bad("test_negative_ratio must be positive".into());
        }
        let dims = [self.hidden_dim, self.output_dim, self.input_dim, self.decoder_hidden[0], self.decoder_hidden[1]];
        if dims.contains(&0) || self.batch_size == 0 || self.hits_k == 0 || self.patience == 0 {
            return bad("dimensions, batch_size, hits_k and patience must be positive".into());
        }
        if !(self.lr > 0.0) || self.weight_decay < 0.0 {
            return bad("lr must be positive and weight_decay nonnegative".into());
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies `key = value` overrides, each value parsed as a TOML literal of
    /// the field's own type.
    pub fn with_overrides<'a>(&self, overrides: impl IntoIterator<Item = (&'a str, String)>) -> Result<Self> {
        let mut table: toml::Table = toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for (key, raw) in overrides {
            if !table.contains_key(key) {
                return Err(Error::Config(format!("unknown config key `{key}`")));
            }
            let parsed: toml::Table = format!("v = {raw}")
                .parse()
                .or_else(|_| format!("v = {:?}", raw).parse())
                .map_err(|e: toml::de::Error| Error::Config(format!("{key}: {e}")))?;
            table.insert(key.to_owned(), parsed["v"].clone());
        }
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
