//! Flat run configuration: model and training hyperparameters plus file
//! paths, read from a TOML file and overridden from the command line.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use deeia::model::ModelConfig;
use deeia::pipeline::TrainConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub log: Option<PathBuf>,
}

const PATH_KEYS: [&str; 6] = ["corpus", "templates", "checkpoint", "predictions", "out", "log"];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub paths: Paths,
}

fn defaults_of<T: Serialize>(value: &T) -> Table {
    match Value::try_from(value) {
        Ok(Value::Table(t)) => t,
        _ => Table::new(),
    }
}

/// Parses the right-hand side of `--set key=value`. Anything that is not a
/// TOML literal is taken as a bare string.
pub fn parse_override(raw: &str) -> Result<(String, Value)> {
    let Some((key, value)) = raw.split_once('=') else {
        bail!("--set expects key=value, got `{raw}`");
    };
    let key = key.trim().to_string();
    if key.is_empty() {
        bail!("--set expects key=value, got `{raw}`");
    }
    let value = value.trim();
    let parsed = toml::from_str::<Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(value.to_string()));
    Ok((key, parsed))
}

impl RunConfig {
    /// Builds the configuration: built-in defaults, then `file`, then
    /// `overrides` in order.
    pub fn load(file: Option<&Path>, overrides: &[(String, Value)]) -> Result<Self> {
        let mut table = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                toml::from_str::<Table>(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => Table::new(),
        };
        for (k, v) in overrides {
            table.insert(k.clone(), v.clone());
        }
        Self::from_table(table)
    }

    pub fn from_table(table: Table) -> Result<Self> {
        let model_defaults = defaults_of(&ModelConfig::default());
        let train_defaults = defaults_of(&TrainConfig::default());
        // `gamma = 1` should not be a type error.
        let coerce = |defaults: &Table, k: &str, v: Value| match (defaults.get(k), v) {
            (Some(Value::Float(_)), Value::Integer(i)) => Value::Float(i as f64),
            (_, v) => v,
        };
        let (mut model, mut train, mut paths) = (Table::new(), Table::new(), Table::new());
        for (k, v) in table {
            if model_defaults.contains_key(&k) {
                let v = coerce(&model_defaults, &k, v);
                model.insert(k, v);
            } else if train_defaults.contains_key(&k) {
                let v = coerce(&train_defaults, &k, v);
                train.insert(k, v);
            } else if PATH_KEYS.contains(&k.as_str()) {
                paths.insert(k, v);
            } else {
                let mut known: Vec<&str> = model_defaults.keys().chain(train_defaults.keys()).map(String::as_str).collect();
                known.extend(PATH_KEYS);
                known.sort_unstable();
                bail!("unknown config key `{k}` (known keys: {})", known.join(", "));
            }
        }
        let model: ModelConfig = Value::Table(model).try_into().context("model settings")?;
        let train: TrainConfig = Value::Table(train).try_into().context("training settings")?;
        let paths: Paths = Value::Table(paths).try_into().context("path settings")?;
        model.validate()?;
        train.validate()?;
        Ok(RunConfig { model, train, paths })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_without_file() {
        let c = RunConfig::load(None, &[]).unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.model.max_span, 10);
        assert_eq!(c.model.max_len, 500);
    }

    #[test]
    fn overrides_beat_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "dim = 16\nheads = 2\nsteps = 7\ncorpus = \"a.jsonl\"\n").unwrap();
        let over = vec![parse_override("steps=9").unwrap()];
        let c = RunConfig::load(Some(&path), &over).unwrap();
        assert_eq!(c.model.dim, 16);
        assert_eq!(c.train.steps, 9);
        assert_eq!(c.paths.corpus.as_deref(), Some(Path::new("a.jsonl")));
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = RunConfig::load(None, &[parse_override("learning_rate=0.1").unwrap()]).unwrap_err();
        assert!(err.to_string().contains("learning_rate"));
    }

    #[test]
    fn override_values_are_typed() {
        assert_eq!(parse_override("gamma=0.5").unwrap().1, Value::Float(0.5));
        assert_eq!(parse_override("use_eia=false").unwrap().1, Value::Boolean(false));
        assert_eq!(parse_override("out=x/y.json").unwrap().1, Value::String("x/y.json".into()));
        assert!(parse_override("novalue").is_err());
        let c = RunConfig::load(None, &[parse_override("gamma=1").unwrap()]).unwrap();
        assert_eq!(c.model.gamma, 1.0);
    }
}
