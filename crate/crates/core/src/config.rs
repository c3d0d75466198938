//! `key = value` configuration files with `[model]`, `[train]` and `[data]` sections.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{parse_num, ModelConfig};
use crate::training::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DataConfig {
    /// When set, the manifest's split tags are reassigned with these
    /// `(train, val, test)` fractions before training.
    pub split: Option<[f64; 3]>,
}

impl DataConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "split" => {
                let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                if parts.len() != 3 {
                    return Err(Error::Config(format!("split: expected three fractions, got {value:?}")));
                }
                let mut f = [0.0; 3];
                for (slot, p) in f.iter_mut().zip(parts) {
                    *slot = parse_num(key, p)?;
                }
                self.split = Some(f);
            }
            other => return Err(Error::Config(format!("unknown data key {other:?}"))),
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CliConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl CliConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = CliConfig::default();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let err = |message: String| Error::ConfigParse { line: line_no, message };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| err(format!("unterminated section header {line:?}")))?
                    .trim();
                if !matches!(name, "model" | "train" | "data") {
                    return Err(err(format!("unknown section [{name}]")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            let result = match section.as_deref() {
                Some("model") => cfg.model.set(k, v),
                Some("train") => cfg.train.set(k, v),
                Some("data") => cfg.data.set(k, v),
                _ => return Err(err(format!("key {k:?} appears before any section header"))),
            };
            result.map_err(|e| err(e.to_string()))?;
        }
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config file {}: {e}", path.display())))?;
        CliConfig::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections() {
        let cfg = CliConfig::parse(
            "# toy run\n[model]\nn_classes = 3\ninput_hw = 32\n\n[train]\nepochs = 2  # short\nlr0 = 1e-3\n[data]\nsplit = 0.5, 0.25, 0.25\n",
        )
        .unwrap();
        assert_eq!(cfg.model.n_classes, 3);
        assert_eq!(cfg.model.input_hw, (32, 32));
        assert_eq!(cfg.train.epochs, 2);
        assert_eq!(cfg.data.split, Some([0.5, 0.25, 0.25]));
    }

    #[test]
    fn shipped_toy_config_parses() {
        let cfg = CliConfig::parse(include_str!("../../../configs/toy.cfg")).unwrap();
        assert_eq!(cfg.model, ModelConfig::toy(2));
        assert_eq!(cfg.train.batch_size, 4);
    }

    #[test]
    fn errors_cite_lines() {
        for (text, line) in [
            ("[model]\nn_classes = 2\ncolour = red\n", 3),
            ("n_classes = 2\n", 1),
            ("[model]\n[optim]\n", 2),
            ("[train]\n\nepochs two\n", 3),
            ("[train]\nepochs = two\n", 2),
        ] {
            match CliConfig::parse(text) {
                Err(Error::ConfigParse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
        assert!(matches!(CliConfig::parse("[model]\nn_classes = 1\n"), Err(Error::Config(_))));
    }
}
