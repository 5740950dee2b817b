//! Flat key-value run settings: a TOML file of top-level keys, overridden
//! by `--set key=value` pairs on the command line.

use std::path::Path;

use hedge_core::embeddings::UnkInit;
use hedge_core::models::ModelSpec;
use hedge_core::training::TrainConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::CliError;

/// Keys that adjust the model spec rather than training.
const MODEL_KEYS: [&str; 10] = [
    "hidden",
    "layers",
    "pos_dim",
    "dropout",
    "bidirectional",
    "attention_dim",
    "cnn_filters",
    "heads",
    "ff_mult",
    "finetune_words",
];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelOverrides {
    pub hidden: Option<usize>,
    pub layers: Option<usize>,
    pub pos_dim: Option<usize>,
    pub dropout: Option<f64>,
    pub bidirectional: Option<bool>,
    pub attention_dim: Option<usize>,
    pub cnn_filters: Option<usize>,
    pub heads: Option<usize>,
    pub ff_mult: Option<usize>,
    pub finetune_words: Option<bool>,
}

impl ModelOverrides {
    pub fn apply(&self, spec: &mut ModelSpec) {
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = self.$f { spec.$f = v; })*};
        }
        set!(
            hidden,
            layers,
            pos_dim,
            dropout,
            bidirectional,
            attention_dim,
            cnn_filters,
            heads,
            ff_mult,
            finetune_words
        );
        // Attention width follows the hidden size unless set explicitly.
        if let (None, Some(h)) = (self.attention_dim, self.hidden) {
            spec.attention_dim = h;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub train: TrainConfig,
    pub model: ModelOverrides,
    pub unk_init: UnkInit,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            train: TrainConfig::default(),
            model: ModelOverrides::default(),
            unk_init: UnkInit::Mean,
        }
    }
}

pub fn read_table(path: &Path) -> Result<Table, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    text.parse::<Table>()
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

/// Parses `key=value`; the value is read as a TOML scalar, falling back to
/// a bare string.
pub fn parse_override(pair: &str) -> Result<(String, Value), CliError> {
    let (k, v) = pair
        .split_once('=')
        .ok_or_else(|| CliError::usage(format!("override `{pair}` is not key=value")))?;
    let value = format!("x = {v}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("x"))
        .unwrap_or_else(|| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

impl Settings {
    /// Builds settings from layered tables, later layers winning.
    pub fn from_layers(layers: &[Table]) -> Result<Self, CliError> {
        let mut merged = Table::new();
        for layer in layers {
            for (k, v) in layer {
                if v.is_table() || v.is_array() {
                    return Err(CliError::usage(format!("setting `{k}` must be a scalar")));
                }
                merged.insert(k.clone(), v.clone());
            }
        }
        let mut train = Table::new();
        let mut model = Table::new();
        let mut unk_init = UnkInit::Mean;
        for (k, v) in merged {
            if k == "unk_init" {
                unk_init = match v.as_str() {
                    Some("mean") => UnkInit::Mean,
                    Some("zero") => UnkInit::Zero,
                    _ => return Err(CliError::usage("unk_init must be \"mean\" or \"zero\"")),
                };
            } else if MODEL_KEYS.contains(&k.as_str()) {
                model.insert(k, v);
            } else {
                train.insert(k, v);
            }
        }
        let train: TrainConfig = Value::Table(train)
            .try_into()
            .map_err(|e| CliError::usage(format!("invalid training setting: {e}")))?;
        let model: ModelOverrides = Value::Table(model)
            .try_into()
            .map_err(|e| CliError::usage(format!("invalid model setting: {e}")))?;
        train.validate().map_err(CliError::from)?;
        Ok(Settings {
            train,
            model,
            unk_init,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layering_and_routing() {
        let file: Table = "epochs = 20\nhidden = 8\nlr = 0.5".parse().unwrap();
        let mut cli = Table::new();
        for pair in ["lr=0.25", "unk_init=zero", "weighting=error-rate"] {
            let (k, v) = parse_override(pair).unwrap();
            cli.insert(k, v);
        }
        let s = Settings::from_layers(&[file, cli]).unwrap();
        assert_eq!(s.train.epochs, 20);
        assert_eq!(s.train.lr, 0.25);
        assert_eq!(s.model.hidden, Some(8));
        assert_eq!(s.unk_init, UnkInit::Zero);
        let mut spec = hedge_core::models::preset("gru").unwrap();
        s.model.apply(&mut spec);
        assert_eq!((spec.hidden, spec.attention_dim), (8, 8));
    }

    #[test]
    fn unknown_and_invalid_keys() {
        let t: Table = "nonsense = 1".parse().unwrap();
        assert_eq!(Settings::from_layers(&[t]).unwrap_err().code, 2);
        let t: Table = "batch_size = 0".parse().unwrap();
        assert_eq!(Settings::from_layers(&[t]).unwrap_err().code, 2);
    }
}
