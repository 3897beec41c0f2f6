use std::path::Path;

use anyhow::{bail, Context, Result};
use gridflow::gnn::GnnConfig;
use gridflow::powerflow::SolverOptions;
use gridflow::scenario::{LoadShapeConfig, INPUT_FEATURES};
use gridflow::training::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Contents of a `--config` file. Every section and field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub load: LoadShapeConfig,
    pub solver: SolverOptions,
    /// `n_bus` is always taken from the case.
    pub model: GnnConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    /// Reads `path` (if any) and applies `section.field=value` overrides.
    /// Values parse as JSON and fall back to plain strings.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => Value::Object(Default::default()),
        };
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .with_context(|| format!("override `{o}` is not of the form key=value"))?;
            let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut value, key, parsed).with_context(|| format!("applying override `{o}`"))?;
        }
        let cfg: RunConfig = serde_json::from_value(value).context("invalid config")?;
        cfg.load.validate().context("invalid config section `load`")?;
        cfg.solver.validate().context("invalid config section `solver`")?;
        cfg.train.validate()?;
        if cfg.model.in_features != INPUT_FEATURES {
            bail!("model.in_features: must be {INPUT_FEATURES}, got {}", cfg.model.in_features);
        }
        Ok(cfg)
    }
}

fn set_path(root: &mut Value, key: &str, v: Value) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("empty path segment in `{key}`");
    }
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .with_context(|| format!("`{}` is not an object", parts[..i].join(".")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), v);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("at least one segment")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_apply_and_unknown_fields_fail() {
        let cfg = RunConfig::load(None, &["train.lr=0.001".into(), "model.arch=gat".into()]).unwrap();
        assert_eq!(cfg.train.lr, 1e-3);
        assert_eq!(cfg.model.arch, gridflow::gnn::Arch::Gat);
        let err = RunConfig::load(None, &["train.lrr=1".into()]).unwrap_err();
        assert!(format!("{err:#}").contains("lrr"), "{err:#}");
        let err = RunConfig::load(None, &["train.patience=0".into()]).unwrap_err();
        assert!(format!("{err:#}").contains("train.patience"), "{err:#}");
        assert!(RunConfig::load(None, &["novalue".into()]).is_err());
    }
}
