use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ctr::HeadKind;
use crate::error::{Error, Result};

/// Ablation variants: with or without GNN propagation and query fusion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "base")]
    Base,
    #[serde(rename = "f")]
    Fusion,
    #[serde(rename = "g")]
    Gnn,
    #[serde(rename = "g&f", alias = "gf")]
    GnnFusion,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Base,
        Variant::Fusion,
        Variant::Gnn,
        Variant::GnnFusion,
    ];

    pub fn uses_gnn(self) -> bool {
        matches!(self, Variant::Gnn | Variant::GnnFusion)
    }

    pub fn uses_fusion(self) -> bool {
        matches!(self, Variant::Fusion | Variant::GnnFusion)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::Fusion => "f",
            Variant::Gnn => "g",
            Variant::GnnFusion => "g&f",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Variant::Base),
            "f" => Ok(Variant::Fusion),
            "g" => Ok(Variant::Gnn),
            "g&f" | "gf" => Ok(Variant::GnnFusion),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

/// Model and training hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Embedding dimension.
    pub d: usize,
    /// Propagation layers.
    pub layers: usize,
    /// Fused behavior sequence length.
    pub l_h: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub head: HeadKind,
    pub variant: Variant,
    pub hidden: Vec<usize>,
    /// Per-relation neighbor cap during propagation; `None` is exact.
    pub neighbor_cap: Option<usize>,
    /// Share of post-window uk-p records used for training.
    pub train_fraction: f64,
    /// Batch size used for evaluation and batch-mode scenario binning.
    pub eval_batch_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 64,
            layers: 2,
            l_h: 100,
            learning_rate: 0.001,
            batch_size: 1024,
            epochs: 10,
            seed: 1,
            head: HeadKind::Attn,
            variant: Variant::GnnFusion,
            hidden: vec![64, 32],
            neighbor_cap: None,
            train_fraction: 0.8,
            eval_batch_size: 1024,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.d < 2 {
            return fail("d must be at least 2");
        }
        if self.l_h == 0 {
            return fail("l_h must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return fail("batch sizes must be positive");
        }
        if self.hidden.contains(&0) {
            return fail("hidden sizes must be positive");
        }
        if self.neighbor_cap == Some(0) {
            return fail("neighbor_cap must be positive when set");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return fail("train_fraction must lie in (0, 1)");
        }
        Ok(())
    }

    /// Reads a TOML file, or JSON when the extension is `.json`.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ModelConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Independent seed for one consumer of the run seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = ModelConfig::default();
        assert_eq!((c.d, c.layers, c.l_h, c.batch_size), (64, 2, 100, 1024));
        assert_eq!(c.learning_rate, 0.001);
        c.validate().unwrap();
    }

    #[test]
    fn toml_round_trip_and_variant_names() {
        let c = ModelConfig {
            variant: Variant::GnnFusion,
            head: HeadKind::Gru,
            neighbor_cap: Some(5),
            ..Default::default()
        };
        let text = c.to_toml();
        assert!(text.contains("variant = \"g&f\""));
        assert_eq!(toml::from_str::<ModelConfig>(&text).unwrap(), c);
        let partial: ModelConfig = toml::from_str("d = 8\nvariant = \"base\"").unwrap();
        assert_eq!(partial.d, 8);
        assert_eq!(partial.variant, Variant::Base);
        assert!(toml::from_str::<ModelConfig>("variant = \"x\"").is_err());
        assert!(toml::from_str::<ModelConfig>("unknown = 1").is_err());
        assert_eq!("g&f".parse::<Variant>().unwrap(), Variant::GnnFusion);
        assert_eq!("h".parse::<Variant>().unwrap_err().kind(), "config");
    }

    #[test]
    fn invalid_values() {
        for c in [
            ModelConfig {
                d: 1,
                ..Default::default()
            },
            ModelConfig {
                l_h: 0,
                ..Default::default()
            },
            ModelConfig {
                learning_rate: 0.0,
                ..Default::default()
            },
            ModelConfig {
                batch_size: 0,
                ..Default::default()
            },
            ModelConfig {
                train_fraction: 1.0,
                ..Default::default()
            },
        ] {
            assert_eq!(c.validate().unwrap_err().kind(), "config");
        }
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, 1), derive_seed(1, 2));
        assert_ne!(derive_seed(1, 1), derive_seed(2, 1));
        assert_eq!(derive_seed(5, 9), derive_seed(5, 9));
    }
}
